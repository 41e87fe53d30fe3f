#include "duodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <zlib.h>

namespace duodiff {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'U', 'O', 'D'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

uint32_t crc_of(const char* p, size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(p), chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::object();
  std::string payload;
  for (const auto& [name, t] : ckpt.tensors) {
    header["tensors"][name] = {{"dtype", "f32"}, {"shape", t.shape()}, {"byte_offset", payload.size()}};
    payload.append(reinterpret_cast<const char*>(t.ptr()), static_cast<size_t>(t.size()) * sizeof(float));
  }
  const std::string h = header.dump();
  std::string out(kMagic, 4);
  put<uint32_t>(out, kCheckpointVersion);
  put<uint64_t>(out, h.size());
  out += h;
  out += payload;
  put<uint32_t>(out, crc_of(payload.data(), payload.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) throw CheckpointError(path.string() + ": not a checkpoint");
  size_t pos = 4;
  const auto version = get<uint32_t>(in, pos);
  if (version != kCheckpointVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto hlen = get<uint64_t>(in, pos);
  if (hlen > in.size() - pos) throw CheckpointError("checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  pos += hlen;
  if (in.size() < pos + 4) throw CheckpointError("checkpoint truncated");
  const size_t payload_len = in.size() - pos - 4;
  const char* payload = in.data() + pos;
  size_t crc_pos = pos + payload_len;
  if (get<uint32_t>(in, crc_pos) != crc_of(payload, payload_len))
    throw CheckpointError(path.string() + ": payload CRC mismatch");

  Checkpoint ckpt;
  try {
    ckpt.meta = header.at("meta");
    for (const auto& [name, info] : header.at("tensors").items()) {
      if (info.at("dtype") != "f32") throw CheckpointError(name + ": unsupported dtype");
      const Shape shape = info.at("shape").get<Shape>();
      const auto off = info.at("byte_offset").get<uint64_t>();
      const auto bytes = static_cast<uint64_t>(numel(shape)) * sizeof(float);
      if (off > payload_len || bytes > payload_len - off) throw CheckpointError(name + ": out of payload bounds");
      Tensor t(shape);
      std::memcpy(t.ptr(), payload + off, bytes);
      ckpt.tensors.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  return ckpt;
}

void store_parameters(Checkpoint& ckpt, const std::string& prefix, const ParameterStore& store) {
  for (const Parameter* p : store.all()) ckpt.tensors[prefix + p->name()] = p->value();
}

void restore_parameters(const Checkpoint& ckpt, const std::string& prefix, ParameterStore& store) {
  for (Parameter* p : store.all()) {
    const auto it = ckpt.tensors.find(prefix + p->name());
    if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint lacks tensor " + prefix + p->name());
    if (it->second.shape() != p->shape())
      throw CheckpointError("shape mismatch for " + prefix + p->name() + ": " + shape_str(it->second.shape()) +
                            " vs " + shape_str(p->shape()));
    p->value() = it->second;
  }
}

void store_optimizer(Checkpoint& ckpt, const std::string& prefix, const AdamW& opt) {
  ckpt.meta[prefix + "step"] = opt.step_count();
  for (const auto& [k, t] : opt.first_moment()) ckpt.tensors[prefix + "m." + k] = t;
  for (const auto& [k, t] : opt.second_moment()) ckpt.tensors[prefix + "v." + k] = t;
}

void restore_optimizer(const Checkpoint& ckpt, const std::string& prefix, AdamW& opt) {
  if (!ckpt.meta.contains(prefix + "step")) throw CheckpointError("checkpoint lacks optimizer state");
  opt.set_step_count(ckpt.meta.at(prefix + "step").get<int64_t>());
  opt.first_moment().clear();
  opt.second_moment().clear();
  const std::string pm = prefix + "m.", pv = prefix + "v.";
  for (const auto& [k, t] : ckpt.tensors) {
    if (k.starts_with(pm)) opt.first_moment()[k.substr(pm.size())] = t;
    else if (k.starts_with(pv)) opt.second_moment()[k.substr(pv.size())] = t;
  }
}

nlohmann::json to_json(const DenoiserConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"in_channels", c.in_channels},
          {"embed_dim", c.embed_dim},   {"num_layers", c.num_layers}, {"num_heads", c.num_heads},
          {"num_classes", c.num_classes}, {"mlp_ratio", c.mlp_ratio}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  try {
    DenoiserConfig c;
    c.image_size = j.at("image_size");
    c.patch_size = j.at("patch_size");
    c.in_channels = j.at("in_channels");
    c.embed_dim = j.at("embed_dim");
    c.num_layers = j.at("num_layers");
    c.num_heads = j.at("num_heads");
    c.num_classes = j.at("num_classes");
    c.mlp_ratio = j.at("mlp_ratio");
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad model config: ") + e.what());
  }
}

}  // namespace duodiff
