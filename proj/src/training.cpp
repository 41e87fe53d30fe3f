#include "duodiff/training.hpp"

#include "duodiff/rng.hpp"

namespace duodiff {

TrainBatch draw_batch(const ImageSet& data, int T, int64_t batch, uint64_t seed, int64_t step, bool use_labels) {
  if (data.size() == 0) throw DataError("training set is empty");
  if (use_labels && !data.labeled()) throw DataError("class-conditional training needs a labeled dataset");
  Rng rng(mix_seed(seed, static_cast<uint64_t>(step)));
  std::vector<int64_t> idx(static_cast<size_t>(batch));
  for (auto& i : idx) i = rng.below(data.size());
  TrainBatch b;
  b.x0 = data.gather(idx);
  if (use_labels) b.labels = data.gather_labels(idx);
  b.t.resize(static_cast<size_t>(batch));
  for (auto& t : b.t) t = static_cast<int>(rng.below(T));
  b.eps = rng.normal_tensor(b.x0.shape());
  return b;
}

}  // namespace duodiff
