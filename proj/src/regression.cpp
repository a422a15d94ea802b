#include "msl/regression.hpp"

#include <cmath>
#include <string>

#include "msl/random.hpp"

namespace msl {

RegressionBatch select_rows(const RegressionBatch& batch, std::span<const Index> rows) {
  if (rows.empty()) throw ContractError("select_rows: empty row selection");
  const auto n = static_cast<Index>(rows.size());
  Tensor x({n, batch.x.cols()});
  Tensor y({n, batch.y.cols()});
  for (Index i = 0; i < n; ++i) {
    x.matrix().row(i) = batch.x.matrix().row(rows[static_cast<std::size_t>(i)]);
    y.matrix().row(i) = batch.y.matrix().row(rows[static_cast<std::size_t>(i)]);
  }
  return {std::move(x), std::move(y)};
}

void MlpConfig::validate() const {
  if (input_dim <= 0 || hidden <= 0 || n_hidden_layers < 0 || output_dim <= 0) {
    throw ConfigError("mlp dimensions must be positive");
  }
}

ParamSet init_mlp(const MlpConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  ParamSet p;
  Index in = c.input_dim;
  for (int l = 0; l <= c.n_hidden_layers; ++l) {
    const Index out = (l == c.n_hidden_layers) ? c.output_dim : c.hidden;
    const std::string name = "mlp" + std::to_string(l);
    Tensor w({in, out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    p.add(name + ".weight", std::move(w));
    p.add(name + ".bias", Tensor::zeros({out}));
    in = out;
  }
  return p;
}

Var mlp_forward(const ParamVars& p, const MlpConfig& c, const Var& x) {
  Var h = x;
  for (int l = 0; l <= c.n_hidden_layers; ++l) {
    const std::string name = "mlp" + std::to_string(l);
    h = add_bias(matmul(h, p[name + ".weight"]), p[name + ".bias"]);
    if (l < c.n_hidden_layers) h = relu(h);
  }
  return h;
}

Var mse(const Var& prediction, const Var& target) {
  Var diff = sub(prediction, target);
  return mean(mul(diff, diff));
}

Var mlp_loss(const ParamVars& p, const MlpConfig& c, const RegressionBatch& batch) {
  Recording& rec = p.recording();
  return mse(mlp_forward(p, c, rec.constant(batch.x)), rec.constant(batch.y));
}

ParamSet init_quadratic(double theta) {
  ParamSet p;
  p.add("theta", Tensor({1}, {theta}));
  return p;
}

Var quadratic_loss(const ParamVars& p, const RegressionBatch& batch) {
  Recording& rec = p.recording();
  Var y = rec.constant(batch.y.reshaped({batch.y.size()}));
  // y - theta broadcasts theta; the square is symmetric in sign
  Var diff = sub(y, p["theta"]);
  return mean(mul(diff, diff));
}

}  // namespace msl
