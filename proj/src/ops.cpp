#include <algorithm>
#include <cmath>

#include "msl/autodiff.hpp"
#include "msl/random.hpp"

namespace msl {

namespace {

Recording& same_recording(const Var& a, const Var& b) {
  Recording& rec = a.recording();
  if (&rec != &b.recording()) throw ContractError("operands belong to different recordings");
  return rec;
}

// True when `b` is broadcast as a single value against `a`.
bool check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return false;
  if (b.size() == 1) return true;
  throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                       to_string(b.shape()));
}

using Vec = Tensor::Storage;

}  // namespace

Var add(const Var& a, const Var& b) {
  Recording& rec = same_recording(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bcast = check_binary("add", av, bv);
  Tensor out = av;
  if (bcast) {
    out.values().array() += bv[0];
  } else {
    out.values() += bv.values();
  }
  return rec.record(OpKind::add, {a.id(), b.id()}, std::move(out),
                    [bcast](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
                      if (gi[0]) gi[0]->values() += g.values();
                      if (gi[1]) {
                        if (bcast) {
                          (*gi[1])[0] += g.values().sum();
                        } else {
                          gi[1]->values() += g.values();
                        }
                      }
                    });
}

Var sub(const Var& a, const Var& b) {
  Recording& rec = same_recording(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bcast = check_binary("sub", av, bv);
  Tensor out = av;
  if (bcast) {
    out.values().array() -= bv[0];
  } else {
    out.values() -= bv.values();
  }
  return rec.record(OpKind::sub, {a.id(), b.id()}, std::move(out),
                    [bcast](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
                      if (gi[0]) gi[0]->values() += g.values();
                      if (gi[1]) {
                        if (bcast) {
                          (*gi[1])[0] -= g.values().sum();
                        } else {
                          gi[1]->values() -= g.values();
                        }
                      }
                    });
}

Var mul(const Var& a, const Var& b) {
  Recording& rec = same_recording(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bcast = check_binary("mul", av, bv);
  Tensor out = av;
  if (bcast) {
    out.values() *= bv[0];
  } else {
    out.values().array() *= bv.values().array();
  }
  const NodeId ia = a.id();
  const NodeId ib = b.id();
  return rec.record(
      OpKind::mul, {ia, ib}, std::move(out),
      [bcast, ia, ib](const Recording& r, const Tensor& g, std::span<Tensor* const> gi) {
        const Vec& x = r.value(ia).values();
        const Vec& y = r.value(ib).values();
        if (gi[0]) {
          if (bcast) {
            gi[0]->values() += g.values() * y(0);
          } else {
            gi[0]->values().array() += g.values().array() * y.array();
          }
        }
        if (gi[1]) {
          if (bcast) {
            (*gi[1])[0] += g.values().dot(x);
          } else {
            gi[1]->values().array() += g.values().array() * x.array();
          }
        }
      });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  out.values() *= factor;
  return a.recording().record(OpKind::scale, {a.id()}, std::move(out),
                              [factor](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
                                gi[0]->values() += factor * g.values();
                              });
}

Var add_scalar(const Var& a, double offset) {
  Tensor out = a.value();
  out.values().array() += offset;
  return a.recording().record(OpKind::add_scalar, {a.id()}, std::move(out),
                              [](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
                                gi[0]->values() += g.values();
                              });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  out.values() = out.values().cwiseMax(0.0);
  const NodeId ia = a.id();
  return a.recording().record(
      OpKind::relu, {ia}, std::move(out),
      [ia](const Recording& r, const Tensor& g, std::span<Tensor* const> gi) {
        const Vec& x = r.value(ia).values();
        gi[0]->values().array() += (x.array() > 0.0).select(g.values().array(), 0.0);
      });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  out.values() = out.values().array().tanh();
  Vec y = out.values();
  return a.recording().record(
      OpKind::tanh, {a.id()}, std::move(out),
      [y = std::move(y)](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
        gi[0]->values().array() += g.values().array() * (1.0 - y.array().square());
      });
}

Var matmul(const Var& a, const Var& b) {
  Recording& rec = same_recording(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(av.shape()) + " and " +
                         to_string(bv.shape()));
  }
  Tensor out({av.dim(0), bv.dim(1)});
  out.matrix().noalias() = av.matrix() * bv.matrix();
  const NodeId ia = a.id();
  const NodeId ib = b.id();
  return rec.record(OpKind::matmul, {ia, ib}, std::move(out),
                    [ia, ib](const Recording& r, const Tensor& g, std::span<Tensor* const> gi) {
                      if (gi[0]) gi[0]->matrix().noalias() += g.matrix() * r.value(ib).matrix().transpose();
                      if (gi[1]) gi[1]->matrix().noalias() += r.value(ia).matrix().transpose() * g.matrix();
                    });
}

Var batched_matmul(const Var& a, const Var& b, bool transpose_b) {
  Recording& rec = same_recording(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
      av.dim(2) != (transpose_b ? bv.dim(2) : bv.dim(1))) {
    throw DimensionError("batched_matmul: incompatible shapes " + to_string(av.shape()) + " and " +
                         to_string(bv.shape()));
  }
  const Index groups = av.dim(0);
  const Index m = av.dim(1);
  const Index k = av.dim(2);
  const Index n = transpose_b ? bv.dim(1) : bv.dim(2);
  const Index b_rows = bv.dim(1);
  const Index b_cols = bv.dim(2);
  using CMap = Eigen::Map<const RowMatrix<double>>;
  using MMap = Eigen::Map<RowMatrix<double>>;
  Tensor out({groups, m, n});
  for (Index gidx = 0; gidx < groups; ++gidx) {
    CMap A(av.data() + gidx * m * k, m, k);
    CMap B(bv.data() + gidx * b_rows * b_cols, b_rows, b_cols);
    MMap C(out.data() + gidx * m * n, m, n);
    if (transpose_b) {
      C.noalias() = A * B.transpose();
    } else {
      C.noalias() = A * B;
    }
  }
  const NodeId ia = a.id();
  const NodeId ib = b.id();
  return rec.record(
      OpKind::batched_matmul, {ia, ib}, std::move(out),
      [=](const Recording& r, const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& x = r.value(ia);
        const Tensor& y = r.value(ib);
        for (Index gidx = 0; gidx < groups; ++gidx) {
          CMap A(x.data() + gidx * m * k, m, k);
          CMap B(y.data() + gidx * b_rows * b_cols, b_rows, b_cols);
          CMap G(g.data() + gidx * m * n, m, n);
          if (gi[0]) {
            MMap GA(gi[0]->data() + gidx * m * k, m, k);
            if (transpose_b) {
              GA.noalias() += G * B;
            } else {
              GA.noalias() += G * B.transpose();
            }
          }
          if (gi[1]) {
            MMap GB(gi[1]->data() + gidx * b_rows * b_cols, b_rows, b_cols);
            if (transpose_b) {
              GB.noalias() += G.transpose() * A;
            } else {
              GB.noalias() += A.transpose() * G;
            }
          }
        }
      });
}

Var add_bias(const Var& a, const Var& bias) {
  Recording& rec = same_recording(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (av.rank() < 1 || bv.rank() != 1 || bv.dim(0) != av.cols()) {
    throw DimensionError("add_bias: shape mismatch " + to_string(av.shape()) + " vs " +
                         to_string(bv.shape()));
  }
  Tensor out = av;
  out.matrix().rowwise() += bv.values().transpose();
  return rec.record(OpKind::add_bias, {a.id(), bias.id()}, std::move(out),
                    [](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
                      if (gi[0]) gi[0]->values() += g.values();
                      if (gi[1]) gi[1]->values() += g.matrix().colwise().sum().transpose();
                    });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.recording().record(OpKind::reshape, {a.id()}, std::move(out),
                              [](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
                                gi[0]->values() += g.values();
                              });
}

Var permute(const Var& a, std::vector<Index> perm) {
  const Tensor& av = a.value();
  const Index rank = av.rank();
  if (static_cast<Index>(perm.size()) != rank) {
    throw DimensionError("permute: axis list length does not match rank of " + to_string(av.shape()));
  }
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  for (Index p : perm) {
    if (p < 0 || p >= rank || seen[static_cast<std::size_t>(p)]) {
      throw DimensionError("permute: invalid axis permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
  std::vector<Index> in_strides(static_cast<std::size_t>(rank), 1);
  for (Index d = rank - 1; d > 0; --d) {
    in_strides[static_cast<std::size_t>(d - 1)] = in_strides[static_cast<std::size_t>(d)] * av.dim(d);
  }
  Shape out_shape(static_cast<std::size_t>(rank));
  for (Index d = 0; d < rank; ++d) out_shape[static_cast<std::size_t>(d)] = av.dim(perm[static_cast<std::size_t>(d)]);

  // source[i] = input offset of output element i
  std::vector<Index> source(static_cast<std::size_t>(av.size()));
  std::vector<Index> counter(static_cast<std::size_t>(rank), 0);
  Index offset = 0;
  for (Index i = 0; i < av.size(); ++i) {
    source[static_cast<std::size_t>(i)] = offset;
    for (Index d = rank - 1; d >= 0; --d) {
      const auto ud = static_cast<std::size_t>(d);
      const Index stride = in_strides[static_cast<std::size_t>(perm[ud])];
      if (++counter[ud] < out_shape[ud]) {
        offset += stride;
        break;
      }
      offset -= stride * (out_shape[ud] - 1);
      counter[ud] = 0;
    }
  }
  Tensor out(out_shape);
  for (Index i = 0; i < av.size(); ++i) out[i] = av[source[static_cast<std::size_t>(i)]];
  return a.recording().record(
      OpKind::permute, {a.id()}, std::move(out),
      [source = std::move(source)](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
        Tensor& ga = *gi[0];
        for (std::size_t i = 0; i < source.size(); ++i) ga[source[i]] += g[static_cast<Index>(i)];
      });
}

Var softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() < 1) throw DimensionError("softmax_rows: needs rank >= 1");
  Tensor out = av;
  auto y = out.matrix();
  for (Index r = 0; r < y.rows(); ++r) {
    const double mx = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  RowMatrix<double> saved = y;
  return a.recording().record(
      OpKind::softmax_rows, {a.id()}, std::move(out),
      [saved = std::move(saved)](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
        const auto G = g.matrix();
        const Eigen::VectorXd dots = (G.array() * saved.array()).rowwise().sum();
        gi[0]->matrix().array() += saved.array() * (G.colwise() - dots).array();
      });
}

Var log_softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() < 1) throw DimensionError("log_softmax_rows: needs rank >= 1");
  Tensor out = av;
  auto y = out.matrix();
  for (Index r = 0; r < y.rows(); ++r) {
    const double mx = y.row(r).maxCoeff();
    const double lse = mx + std::log((y.row(r).array() - mx).exp().sum());
    y.row(r).array() -= lse;
  }
  RowMatrix<double> probs = y.array().exp();
  return a.recording().record(
      OpKind::log_softmax_rows, {a.id()}, std::move(out),
      [probs = std::move(probs)](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
        const auto G = g.matrix();
        const Eigen::VectorXd sums = G.rowwise().sum();
        gi[0]->matrix() += G - (probs.array().colwise() * sums.array()).matrix();
      });
}

Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps) {
  Recording& rec = same_recording(a, gain);
  same_recording(a, bias);
  const Tensor& av = a.value();
  const Index n = av.cols();
  if (gain.value().shape() != Shape{n} || bias.value().shape() != Shape{n}) {
    throw DimensionError("layer_norm: gain/bias must have shape [" + std::to_string(n) + "]");
  }
  const auto X = av.matrix();
  RowMatrix<double> xhat(X.rows(), n);
  Eigen::VectorXd inv_std(X.rows());
  for (Index r = 0; r < X.rows(); ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mu) * inv_std(r);
  }
  Tensor out(av.shape());
  out.matrix() = (xhat.array().rowwise() * gain.value().values().transpose().array()).matrix();
  out.matrix().rowwise() += bias.value().values().transpose();
  const NodeId ig = gain.id();
  return rec.record(
      OpKind::layer_norm, {a.id(), ig, bias.id()}, std::move(out),
      [ig, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Recording& r, const Tensor& g, std::span<Tensor* const> gi) {
        const auto G = g.matrix();
        if (gi[1]) gi[1]->values() += (G.array() * xhat.array()).colwise().sum().transpose().matrix();
        if (gi[2]) gi[2]->values() += G.colwise().sum().transpose();
        if (gi[0]) {
          const RowMatrix<double> gx =
              (G.array().rowwise() * r.value(ig).values().transpose().array()).matrix();
          const Eigen::VectorXd mean_g = gx.rowwise().mean();
          const Eigen::VectorXd mean_gx = (gx.array() * xhat.array()).rowwise().mean();
          auto GA = gi[0]->matrix();
          for (Index row = 0; row < gx.rows(); ++row) {
            GA.row(row).array() +=
                inv_std(row) * (gx.row(row).array() - mean_g(row) - xhat.row(row).array() * mean_gx(row));
          }
        }
        (void)n;
      });
}

Var embedding(const Var& table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("embedding: table must be rank 2, got " + to_string(tv.shape()));
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  const Index vocab = tv.dim(0);
  const Index d = tv.dim(1);
  std::vector<int> saved(ids.begin(), ids.end());
  Tensor out({static_cast<Index>(ids.size()), d});
  auto O = out.matrix();
  const auto T = tv.matrix();
  for (std::size_t i = 0; i < saved.size(); ++i) {
    if (saved[i] < 0 || saved[i] >= vocab) {
      throw LabelError("embedding: id " + std::to_string(saved[i]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    O.row(static_cast<Index>(i)) = T.row(saved[i]);
  }
  return table.recording().record(
      OpKind::embedding, {table.id()}, std::move(out),
      [saved = std::move(saved)](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
        auto GT = gi[0]->matrix();
        const auto G = g.matrix();
        for (std::size_t i = 0; i < saved.size(); ++i) GT.row(saved[i]) += G.row(static_cast<Index>(i));
      });
}

Var cross_entropy(const Var& logits, std::span<const int> labels, std::optional<int> ignore_index) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != static_cast<Index>(labels.size())) {
    throw DimensionError("cross_entropy: logits " + to_string(lv.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const Index m = lv.dim(0);
  const Index vocab = lv.dim(1);
  const auto X = lv.matrix();
  RowMatrix<double> probs(m, vocab);
  std::vector<int> saved(labels.begin(), labels.end());
  double total = 0.0;
  Index count = 0;
  for (Index r = 0; r < m; ++r) {
    const int label = saved[static_cast<std::size_t>(r)];
    if (ignore_index && label == *ignore_index) continue;
    if (label < 0 || label >= vocab) {
      throw LabelError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
    const double mx = X.row(r).maxCoeff();
    probs.row(r) = (X.row(r).array() - mx).exp();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    total += (mx + std::log(z)) - X(r, label);
    ++count;
  }
  if (count == 0) throw DegenerateBatchError("cross_entropy: every position is ignored");
  Tensor out = Tensor::scalar(total / static_cast<double>(count));
  const double inv = 1.0 / static_cast<double>(count);
  return logits.recording().record(
      OpKind::cross_entropy, {logits.id()}, std::move(out),
      [=, probs = std::move(probs), saved = std::move(saved)](
          const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
        const double s = g[0] * inv;
        auto GA = gi[0]->matrix();
        for (Index r = 0; r < m; ++r) {
          const int label = saved[static_cast<std::size_t>(r)];
          if (ignore_index && label == *ignore_index) continue;
          GA.row(r) += s * probs.row(r);
          GA(r, label) -= s;
        }
      });
}

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().values().sum());
  return a.recording().record(OpKind::sum, {a.id()}, std::move(out),
                              [](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
                                gi[0]->values().array() += g[0];
                              });
}

Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().size());
  Tensor out = Tensor::scalar(a.value().values().sum() * inv);
  return a.recording().record(OpKind::mean, {a.id()}, std::move(out),
                              [inv](const Recording&, const Tensor& g, std::span<Tensor* const> gi) {
                                gi[0]->values().array() += g[0] * inv;
                              });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  Recording& rec = same_recording(x, weight);
  same_recording(x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) % 2 == 0 ||
      wv.dim(3) % 2 == 0 || bv.shape() != Shape{wv.dim(0)}) {
    throw DimensionError("conv2d: incompatible shapes " + to_string(xv.shape()) + ", " +
                         to_string(wv.shape()) + ", " + to_string(bv.shape()));
  }
  const Index nb = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const Index cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const Index ph = kh / 2, pw = kw / 2;
  auto xi = [=](Index b, Index c, Index i, Index j) { return ((b * cin + c) * h + i) * w + j; };
  auto wi = [=](Index o, Index c, Index i, Index j) { return ((o * cin + c) * kh + i) * kw + j; };
  auto oi = [=](Index b, Index o, Index i, Index j) { return ((b * cout + o) * h + i) * w + j; };

  Tensor out({nb, cout, h, w});
  for (Index b = 0; b < nb; ++b)
    for (Index o = 0; o < cout; ++o)
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) {
          double acc = bv[o];
          for (Index c = 0; c < cin; ++c)
            for (Index di = 0; di < kh; ++di) {
              const Index si = i + di - ph;
              if (si < 0 || si >= h) continue;
              for (Index dj = 0; dj < kw; ++dj) {
                const Index sj = j + dj - pw;
                if (sj < 0 || sj >= w) continue;
                acc += wv[wi(o, c, di, dj)] * xv[xi(b, c, si, sj)];
              }
            }
          out[oi(b, o, i, j)] = acc;
        }

  const NodeId ix = x.id();
  const NodeId iw = weight.id();
  return rec.record(
      OpKind::conv2d, {ix, iw, bias.id()}, std::move(out),
      [=](const Recording& r, const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& X = r.value(ix);
        const Tensor& W = r.value(iw);
        for (Index b = 0; b < nb; ++b)
          for (Index o = 0; o < cout; ++o)
            for (Index i = 0; i < h; ++i)
              for (Index j = 0; j < w; ++j) {
                const double go = g[oi(b, o, i, j)];
                if (gi[2]) (*gi[2])[o] += go;
                for (Index c = 0; c < cin; ++c)
                  for (Index di = 0; di < kh; ++di) {
                    const Index si = i + di - ph;
                    if (si < 0 || si >= h) continue;
                    for (Index dj = 0; dj < kw; ++dj) {
                      const Index sj = j + dj - pw;
                      if (sj < 0 || sj >= w) continue;
                      if (gi[0]) (*gi[0])[xi(b, c, si, sj)] += go * W[wi(o, c, di, dj)];
                      if (gi[1]) (*gi[1])[wi(o, c, di, dj)] += go * X[xi(b, c, si, sj)];
                    }
                  }
              }
      });
}

Var dropout(const Var& a, double p, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: probability must lie in [0, 1)");
  if (p == 0.0) return a;
  Rng rng(seed);
  Tensor mask(a.value().shape());
  const double keep_scale = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
  return mul(a, a.recording().constant(std::move(mask)));
}

}  // namespace msl
