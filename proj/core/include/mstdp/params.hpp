#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mstdp/tensor.hpp"
#include "mstdp/types.hpp"

namespace mstdp {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named trainable tensors with gradients and Adam state. Iteration order is
// lexicographic by name everywhere, so updates and checkpoints are
// reproducible.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  bool has(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);

  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grads();
  double grad_norm() const; // global L2 norm over all gradients
  void scale_grads(double factor);
  void adam_step(const AdamConfig& cfg);

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
    Tensor m; // Adam first moment
    Tensor v; // Adam second moment
  };
  std::map<std::string, Entry> entries_;
  std::int64_t adam_t_ = 0;

  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;
};

// Binary checkpoint: format tag, config text, metadata text, then the named
// tensors. Written to a temp file and renamed, so readers never see a
// partial file.
void save_params(const ParameterStore& store, const std::string& config_text,
                 const std::string& meta_text, const std::filesystem::path& file);

struct LoadedParams {
  ParameterStore store;
  std::string config_text;
  std::string meta_text;
};
LoadedParams load_params(const std::filesystem::path& file);

// Central finite-difference check of the gradients a loss function computes.
// `loss(true)` must evaluate the loss and accumulate parameter gradients;
// `loss(false)` must only evaluate. Returns the worst relative error,
// |analytic - numeric| / max(1, |analytic|, |numeric|), over all entries.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  Eigen::Index worst_row = 0, worst_col = 0;
  double analytic = 0.0, numeric = 0.0;
};
GradCheckResult grad_check(const std::function<double(bool)>& loss, ParameterStore& store,
                           double eps = 1e-5);

} // namespace mstdp
