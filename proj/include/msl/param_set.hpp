#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "msl/autodiff.hpp"

namespace msl {

/// Named parameter tensors in insertion order. Names are unique.
class ParamSet {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  Index total_size() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::string> names() const;

  /// Same names, same order, zero values.
  ParamSet zeros_like() const;

  bool all_finite() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Same names, order, shapes and value bits.
bool bit_equal(const ParamSet& a, const ParamSet& b);

/// Largest absolute entry-wise difference; the sets must share structure.
double max_abs_diff(const ParamSet& a, const ParamSet& b);

void check_same_structure(const ParamSet& a, const ParamSet& b);

// In-place vector updates over matching entries.
void axpy(double alpha, const ParamSet& x, ParamSet& y);  // y += alpha * x
ParamSet sgd_step(const ParamSet& params, const ParamSet& grad, double lr);

/// Parameter leaves of one Recording, keyed by parameter name.
class ParamVars {
 public:
  ParamVars(Recording& rec, const ParamSet& params, bool requires_grad = true);

  const Var& operator[](std::string_view name) const;
  bool contains(std::string_view name) const;
  Recording& recording() const { return *rec_; }

  /// Collects leaf gradients back into parameter order.
  ParamSet gradients(const GradStore& grads) const;

 private:
  Recording* rec_;
  std::vector<std::pair<std::string, Var>> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ScalarLossFn = std::function<double(const ParamSet&)>;

/// Central-difference gradient for every parameter entry.
ParamSet finite_diff_grad(const ScalarLossFn& loss_fn, const ParamSet& params, double step);

/// One parameter coordinate.
struct ParamCoord {
  std::string name;
  Index index;
};

/// Central-difference partial derivatives at selected coordinates.
std::vector<double> finite_diff_grad(const ScalarLossFn& loss_fn, const ParamSet& params,
                                     double step, std::span<const ParamCoord> coords);

}  // namespace msl
