#include "msl/param_set.hpp"

#include <algorithm>
#include <cmath>

namespace msl {

void ParamSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamSet::contains(std::string_view name) const { return index_.contains(std::string(name)); }

const Tensor& ParamSet::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].second;
}

Tensor& ParamSet::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

Index ParamSet::total_size() const {
  Index n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(name);
  return out;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor::zeros(t.shape()));
  return out;
}

bool ParamSet::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(), [](const Entry& e) { return e.second.all_finite(); });
}

void check_same_structure(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) throw DimensionError("parameter sets differ in size");
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) {
      throw DimensionError("parameter mismatch: '" + ia->first + "' " + to_string(ia->second.shape()) +
                           " vs '" + ib->first + "' " + to_string(ib->second.shape()));
    }
  }
}

bool bit_equal(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !bit_equal(ia->second, ib->second)) return false;
  }
  return true;
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  check_same_structure(a, b);
  double m = 0.0;
  auto ib = b.begin();
  for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
    m = std::max(m, (ia->second.values() - ib->second.values()).cwiseAbs().maxCoeff());
  }
  return m;
}

void axpy(double alpha, const ParamSet& x, ParamSet& y) {
  check_same_structure(x, y);
  auto ix = x.begin();
  for (auto iy = y.begin(); iy != y.end(); ++iy, ++ix) iy->second.values() += alpha * ix->second.values();
}

ParamSet sgd_step(const ParamSet& params, const ParamSet& grad, double lr) {
  check_same_structure(params, grad);
  ParamSet out;
  auto ig = grad.begin();
  for (auto ip = params.begin(); ip != params.end(); ++ip, ++ig) {
    Tensor t = ip->second;
    t.values() -= lr * ig->second.values();
    out.add(ip->first, std::move(t));
  }
  return out;
}

ParamVars::ParamVars(Recording& rec, const ParamSet& params, bool requires_grad) : rec_(&rec) {
  vars_.reserve(params.size());
  for (const auto& [name, t] : params) {
    index_.emplace(name, vars_.size());
    vars_.emplace_back(name, rec.leaf(t, requires_grad));
  }
}

const Var& ParamVars::operator[](std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return vars_[it->second].second;
}

bool ParamVars::contains(std::string_view name) const { return index_.contains(std::string(name)); }

ParamSet ParamVars::gradients(const GradStore& grads) const {
  ParamSet out;
  for (const auto& [name, v] : vars_) {
    out.add(name, grads.contains(v) ? grads.at(v) : Tensor::zeros(v.shape()));
  }
  return out;
}

ParamSet finite_diff_grad(const ScalarLossFn& loss_fn, const ParamSet& params, double step) {
  if (!(step > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  ParamSet probe = params;
  ParamSet out = params.zeros_like();
  for (auto& [name, t] : probe) {
    Tensor& g = out.at(name);
    for (Index i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + step;
      const double up = loss_fn(probe);
      t[i] = orig - step;
      const double down = loss_fn(probe);
      t[i] = orig;
      g[i] = (up - down) / (2.0 * step);
    }
  }
  return out;
}

std::vector<double> finite_diff_grad(const ScalarLossFn& loss_fn, const ParamSet& params, double step,
                                     std::span<const ParamCoord> coords) {
  if (!(step > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  ParamSet probe = params;
  std::vector<double> out;
  out.reserve(coords.size());
  for (const ParamCoord& c : coords) {
    Tensor& t = probe.at(c.name);
    const double orig = t[c.index];
    t[c.index] = orig + step;
    const double up = loss_fn(probe);
    t[c.index] = orig - step;
    const double down = loss_fn(probe);
    t[c.index] = orig;
    out.push_back((up - down) / (2.0 * step));
  }
  return out;
}

}  // namespace msl
