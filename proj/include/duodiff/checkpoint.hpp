#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "duodiff/autograd.hpp"
#include "duodiff/optim.hpp"
#include "duodiff/uvit.hpp"

namespace duodiff {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr uint32_t kCheckpointVersion = 1;

/// Named f32 tensors plus free-form JSON metadata.
///
/// File layout: "DUOD", u32 version, u64 header length, JSON header
/// {"meta": ..., "tensors": {name: {"dtype": "f32", "shape": [...],
/// "byte_offset": n}}}, little-endian f32 payload, u32 CRC32 of the payload.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, unknown version, truncation or a
/// CRC mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every parameter of `store` into ckpt.tensors under prefix + name.
void store_parameters(Checkpoint& ckpt, const std::string& prefix, const ParameterStore& store);
/// Overwrites every parameter of `store` from prefix + name. Missing tensors
/// or shape mismatches raise CheckpointError.
void restore_parameters(const Checkpoint& ckpt, const std::string& prefix, ParameterStore& store);

void store_optimizer(Checkpoint& ckpt, const std::string& prefix, const AdamW& opt);
void restore_optimizer(const Checkpoint& ckpt, const std::string& prefix, AdamW& opt);

nlohmann::json to_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

}  // namespace duodiff
