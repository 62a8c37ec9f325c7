#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "skelfuse/rng.hpp"
#include "skelfuse/tensor.hpp"

namespace skelfuse {

/// Named trainable tensors plus their Adam moments. Iteration order is the
/// lexicographic name order, so serialisation is deterministic.
class ParamStore {
 public:
  /// Xavier-uniform matrix, fan_in = rows, fan_out = cols.
  ad::Tensor& add_xavier(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng);
  ad::Tensor& add_constant(const std::string& name, ad::Shape shape, double value);
  ad::Tensor& add(const std::string& name, ad::Tensor value);

  bool contains(const std::string& name) const { return entries_.contains(name); }
  ad::Tensor& get(const std::string& name);
  const ad::Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  /// Every parameter gets an all-zero gradient buffer.
  void zero_grad();

  struct Entry {
    ad::Tensor param;
    std::vector<double> m, v;
  };
  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

 private:
  std::map<std::string, Entry> entries_;
  std::int64_t step_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. Throws MissingGrad if any parameter has
/// no gradient buffer.
void adam_step(ParamStore& store, const AdamConfig& config);

/// Binary archive of float64 tensors plus a JSON manifest next to it
/// (path + ".json") carrying tensor names, shapes, offsets and `config`.
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path,
                     const nlohmann::json& config);

struct Checkpoint {
  ParamStore params;
  nlohmann::json config;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Overwrites the values of matching parameters in `into`. Throws ShapeError
/// on a missing name or shape mismatch.
void copy_params(const ParamStore& from, ParamStore& into);

}  // namespace skelfuse
