#include "duodiff/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace duodiff {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError(key, "cannot parse '" + v + "'");
  return out;
}

}  // namespace

const std::map<std::string, std::string>& Config::known_keys() {
  static const std::map<std::string, std::string> keys = {
      {"run.out_dir", ""},
      {"run.seed", "0"},
      {"data.kind", "shapes"},
      {"data.image_size", "16"},
      {"data.num_classes", "3"},
      {"data.count", "4096"},
      {"data.seed", "0"},
      {"data.dir", "-"},
      {"model.patch_size", "4"},
      {"model.embed_dim", "128"},
      {"model.num_layers", "9"},
      {"model.num_heads", "4"},
      {"model.mlp_ratio", "4"},
      {"model.conditional", "true"},
      {"shallow.num_layers", "3"},
      {"schedule.T", "1000"},
      {"schedule.beta_start", "0.0001"},
      {"schedule.beta_end", "0.02"},
      {"train.steps", "5000"},
      {"train.batch", "64"},
      {"train.lr", "0.0002"},
      {"train.weight_decay", "0.03"},
      {"train.beta1", "0.99"},
      {"train.beta2", "0.999"},
      {"train.eps", "1e-8"},
      {"train.warmup", "1500"},
      {"train.log_every", "10"},
      {"train.checkpoint_every", "1000"},
      {"adadiff.steps", "2000"},
      {"adadiff.lr", "0.0002"},
      {"adadiff.warmup", "500"},
      {"adadiff.lambda", "1"},
      {"adadiff.beta", "1"},
      {"adadiff.theta", "0.1"},
      {"sampler.kind", "ddpm"},
      {"sampler.eta", "0"},
      {"sampler.n_steps", "50"},
      {"sampler.t_s", "0"},
      {"sampler.clip_x0", "true"},
      {"sampler.n", "64"},
      {"sampler.batch", "128"},
      {"eval.n", "512"},
      {"eval.feature_seed", "1234"},
  };
  return keys;
}

Config::Config() : values_(known_keys()) {}

Config Config::parse(const std::string& text, const std::string& origin) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno), "expected key = value");
    c.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return c;
}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path.string(), "cannot read config file");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path.string());
}

void Config::set(const std::string& key, const std::string& value) {
  if (!known_keys().count(key)) throw ConfigError(key, "unknown key");
  values_[key] = value;
}

void Config::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(assignment, "expected key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown key");
  if (it->second.empty()) throw ConfigError(key, "missing required value");
  return it->second;
}

int Config::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }
int64_t Config::get_int64(const std::string& key) const { return parse_number<int64_t>(key, get(key)); }
uint64_t Config::get_uint64(const std::string& key) const { return parse_number<uint64_t>(key, get(key)); }
double Config::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

void Config::require_complete() const {
  for (const auto& [k, v] : values_)
    if (v.empty()) throw ConfigError(k, "missing required value");
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string Config::hash() const {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig to_run_config(const Config& c) {
  c.require_complete();
  RunConfig r;
  r.out_dir = c.get("run.out_dir");
  r.seed = c.get_uint64("run.seed");
  try {
    r.data.kind = parse_dataset_kind(c.get("data.kind"));
  } catch (const DataError& e) {
    throw ConfigError("data.kind", e.what());
  }
  r.data.image_size = c.get_int("data.image_size");
  r.data.num_classes = c.get_int("data.num_classes");
  r.data.count = c.get_int64("data.count");
  r.data.seed = c.get_uint64("data.seed");
  if (c.get("data.dir") != "-") r.data_dir = c.get("data.dir");
  try {
    r.data.validate();
  } catch (const std::exception& e) {
    throw ConfigError("data", e.what());
  }

  const std::string cond = c.get("model.conditional");
  if (cond != "true" && cond != "false") throw ConfigError("model.conditional", "expected true or false");
  r.full.image_size = r.data.image_size;
  r.full.patch_size = c.get_int("model.patch_size");
  r.full.in_channels = 3;
  r.full.embed_dim = c.get_int("model.embed_dim");
  r.full.num_layers = c.get_int("model.num_layers");
  r.full.num_heads = c.get_int("model.num_heads");
  r.full.mlp_ratio = c.get_int("model.mlp_ratio");
  r.full.num_classes = cond == "true" ? r.data.num_classes : 0;
  if (cond == "true" && r.data.num_classes == 0)
    throw ConfigError("model.conditional", "class conditioning needs data.num_classes > 0");
  r.shallow = r.full;
  r.shallow.num_layers = c.get_int("shallow.num_layers");
  try {
    r.full.validate();
  } catch (const std::exception& e) {
    throw ConfigError("model", e.what());
  }
  try {
    r.shallow.validate();
  } catch (const std::exception& e) {
    throw ConfigError("shallow.num_layers", e.what());
  }
  if (r.shallow.num_layers >= r.full.num_layers)
    throw ConfigError("shallow.num_layers", "must be smaller than model.num_layers");

  r.T = c.get_int("schedule.T");
  r.beta_start = c.get_double("schedule.beta_start");
  r.beta_end = c.get_double("schedule.beta_end");
  try {
    (void)make_schedule(r.T, r.beta_start, r.beta_end);
  } catch (const std::exception& e) {
    throw ConfigError("schedule", e.what());
  }

  r.train.steps = c.get_int64("train.steps");
  r.train.batch = c.get_int64("train.batch");
  r.train.seed = r.seed;
  r.train.log_every = c.get_int64("train.log_every");
  r.train.checkpoint_every = c.get_int64("train.checkpoint_every");
  r.train.adam.lr = static_cast<float>(c.get_double("train.lr"));
  r.train.adam.weight_decay = static_cast<float>(c.get_double("train.weight_decay"));
  r.train.adam.beta1 = static_cast<float>(c.get_double("train.beta1"));
  r.train.adam.beta2 = static_cast<float>(c.get_double("train.beta2"));
  r.train.adam.eps = static_cast<float>(c.get_double("train.eps"));
  r.train.adam.warmup_steps = c.get_int64("train.warmup");
  if (r.train.steps < 0) throw ConfigError("train.steps", "must be >= 0");
  if (r.train.batch <= 0) throw ConfigError("train.batch", "must be positive");
  if (r.train.adam.lr <= 0) throw ConfigError("train.lr", "must be positive");
  if (r.train.adam.warmup_steps < 0) throw ConfigError("train.warmup", "must be >= 0");

  r.adadiff_train = r.train;
  r.adadiff_train.steps = c.get_int64("adadiff.steps");
  r.adadiff_train.adam.lr = static_cast<float>(c.get_double("adadiff.lr"));
  r.adadiff_train.adam.warmup_steps = c.get_int64("adadiff.warmup");
  if (r.adadiff_train.steps < 0) throw ConfigError("adadiff.steps", "must be >= 0");
  if (r.adadiff_train.adam.lr <= 0) throw ConfigError("adadiff.lr", "must be positive");
  r.weights.lambda = static_cast<float>(c.get_double("adadiff.lambda"));
  r.weights.beta = static_cast<float>(c.get_double("adadiff.beta"));
  if (r.weights.lambda < 0) throw ConfigError("adadiff.lambda", "must be >= 0");
  if (r.weights.beta < 0) throw ConfigError("adadiff.beta", "must be >= 0");
  r.theta = c.get_double("adadiff.theta");

  try {
    r.sampler.kind = parse_sampler_kind(c.get("sampler.kind"));
  } catch (const std::exception& e) {
    throw ConfigError("sampler.kind", e.what());
  }
  r.sampler.eta = c.get_double("sampler.eta");
  r.sampler.n_steps = c.get_int("sampler.n_steps");
  r.sampler.t_s = c.get_int("sampler.t_s");
  r.sampler.seed = r.seed;
  const std::string clip = c.get("sampler.clip_x0");
  if (clip != "true" && clip != "false") throw ConfigError("sampler.clip_x0", "expected true or false");
  r.sampler.clip_x0 = clip == "true";
  try {
    r.sampler.validate(r.T);
  } catch (const std::exception& e) {
    throw ConfigError("sampler", e.what());
  }
  r.n_samples = c.get_int64("sampler.n");
  r.sample_batch = c.get_int64("sampler.batch");
  if (r.n_samples <= 0) throw ConfigError("sampler.n", "must be positive");
  if (r.sample_batch <= 0) throw ConfigError("sampler.batch", "must be positive");
  r.eval_n = c.get_int64("eval.n");
  r.feature_seed = c.get_uint64("eval.feature_seed");
  r.hash = c.hash();
  return r;
}

}  // namespace duodiff
