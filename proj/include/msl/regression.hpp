#pragma once

#include <cstdint>
#include <span>

#include "msl/param_set.hpp"

namespace msl {

/// Supervised pairs: x is [k x in], y is [k x out].
struct RegressionBatch {
  Tensor x;
  Tensor y;

  Index size() const { return y.dim(0); }
};

RegressionBatch select_rows(const RegressionBatch& batch, std::span<const Index> rows);

struct MlpConfig {
  int input_dim = 1;
  int hidden = 40;
  int n_hidden_layers = 2;
  int output_dim = 1;

  void validate() const;
};

/// Parameters "mlp<l>.weight" / "mlp<l>.bias", same init rule as the sequence model.
ParamSet init_mlp(const MlpConfig& config, std::uint64_t seed);

Var mlp_forward(const ParamVars& params, const MlpConfig& config, const Var& x);

Var mse(const Var& prediction, const Var& target);

Var mlp_loss(const ParamVars& params, const MlpConfig& config, const RegressionBatch& batch);

/// One-parameter model: "theta" of shape [1], initialized to `theta`.
ParamSet init_quadratic(double theta = 0.0);

/// mean_j (theta - y_j)^2 over the batch targets.
Var quadratic_loss(const ParamVars& params, const RegressionBatch& batch);

}  // namespace msl
