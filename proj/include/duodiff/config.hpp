#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "duodiff/adadiff.hpp"
#include "duodiff/data.hpp"
#include "duodiff/diffusion.hpp"
#include "duodiff/training.hpp"
#include "duodiff/uvit.hpp"

namespace duodiff {

/// Missing, unknown or malformed configuration entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Flat namespaced key = value settings. Only known keys are accepted.
/// Lines starting with '#' and blank lines are ignored.
class Config {
 public:
  /// Every known key with its default; an empty default marks a required key.
  static const std::map<std::string, std::string>& known_keys();

  Config();
  static Config from_file(const std::filesystem::path& path);
  static Config parse(const std::string& text, const std::string& origin = "<config>");

  void set(const std::string& key, const std::string& value);
  /// "key=value"
  void set_assignment(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  int64_t get_int64(const std::string& key) const;
  uint64_t get_uint64(const std::string& key) const;
  double get_double(const std::string& key) const;

  /// Throws ConfigError naming the first required key without a value.
  void require_complete() const;

  /// Canonical "key = value" text, sorted by key.
  std::string dump() const;
  /// 16 hex digits of FNV-1a 64 over dump().
  std::string hash() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct RunConfig {
  std::filesystem::path out_dir;
  uint64_t seed = 0;
  DatasetSpec data;
  std::filesystem::path data_dir;  // raw RGB import instead of synthetic data when set
  DenoiserConfig full;
  DenoiserConfig shallow;
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  TrainOptions train;
  TrainOptions adadiff_train;
  AdaDiffLossWeights weights;
  double theta = 0.1;
  SamplerSpec sampler;
  int64_t n_samples = 64;
  int64_t sample_batch = 128;
  int64_t eval_n = 512;
  uint64_t feature_seed = 1234;
  std::string hash;

  NoiseSchedule schedule() const { return make_schedule(T, beta_start, beta_end); }
};

/// Validates and converts; every failure is a ConfigError naming its key.
RunConfig to_run_config(const Config& c);

}  // namespace duodiff
