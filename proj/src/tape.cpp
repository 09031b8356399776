#include "promptot/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "promptot/errors.hpp"

namespace promptot {

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw InvalidInputError(std::string(op) + ": expected rank-2 tensor, got " + t.shape_str());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw InvalidInputError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                            b.shape_str());
  }
}

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) {
    throw InvalidInputError(std::string(op) + ": operands live on different tapes");
  }
}

}  // namespace

Var GradTape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var GradTape::parameter(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.op_name = "parameter";
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  roots_.push_back(id);
  return Var{this, id};
}

const Tensor& GradTape::value(Var v) const {
  if (!v.valid() || v.tape != this) throw InvalidInputError("value: foreign or invalid Var");
  return nodes_[v.id].value;
}

Var GradTape::record(Tensor value, std::vector<int> inputs, BackwardFn fn, const char* op_name) {
  if (!value.all_finite()) {
    throw DivergenceError(std::string("non-finite value produced by op '") + op_name + "'");
  }
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.op_name = op_name;
  for (int in : n.inputs) {
    if (nodes_[in].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward_fn = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& GradTape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.shape().empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

std::vector<Tensor> GradTape::backward(Var loss) {
  if (!loss.valid() || loss.tape != this) {
    throw InvalidInputError("backward: loss is not a node on this tape");
  }
  if (nodes_[loss.id].value.size() != 1) {
    throw InvalidInputError("backward: loss must be scalar, got shape " +
                            nodes_[loss.id].value.shape_str());
  }
  if (nodes_[loss.id].requires_grad) {
    grad(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.shape().empty() || !n.backward_fn) continue;
      n.backward_fn(*this, id);
    }
  }
  std::vector<Tensor> out;
  out.reserve(roots_.size());
  for (int id : roots_) {
    Node& n = nodes_[id];
    if (n.grad.shape().empty()) {
      out.emplace_back(n.value.shape());
    } else {
      out.push_back(std::move(n.grad));
      n.grad = Tensor();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const int ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib},
                  [ia, ib](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    if (tp.requires_grad(ia)) {
                      Tensor& da = tp.grad(ia);
                      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                    }
                    if (tp.requires_grad(ib)) {
                      Tensor& db = tp.grad(ib);
                      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
                    }
                  },
                  "add");
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "sub");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const int ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib},
                  [ia, ib](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    if (tp.requires_grad(ia)) {
                      Tensor& da = tp.grad(ia);
                      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                    }
                    if (tp.requires_grad(ib)) {
                      Tensor& db = tp.grad(ib);
                      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
                    }
                  },
                  "sub");
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b, "hadamard");
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "hadamard");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib},
                  [ia, ib](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& av = tp.value(ia);
                    const Tensor& bv = tp.value(ib);
                    if (tp.requires_grad(ia)) {
                      Tensor& da = tp.grad(ia);
                      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
                    }
                    if (tp.requires_grad(ib)) {
                      Tensor& db = tp.grad(ib);
                      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
                    }
                  },
                  "hadamard");
}

Var affine(Var a, double scale, double shift) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * av[i] + shift;
  const int ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, scale](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) da[i] += scale * g[i];
                  },
                  "affine");
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw InvalidInputError("matmul: inner extents differ, " + av.shape_str() + " x " +
                            bv.shape_str());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = Tensor::zeros(m, n);
  {
    const double* A = av.data();
    const double* B = bv.data();
    double* C = out.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        const double* Bp = B + p * n;
        double* Ci = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
      }
    }
  }
  const int ia = a.id, ib = b.id;
  return t.record(std::move(out), {ia, ib},
                  [ia, ib, m, k, n](GradTape& tp, int self) {
                    const double* G = tp.grad(self).data();
                    if (tp.requires_grad(ia)) {
                      // dA = G * B^T
                      const double* B = tp.value(ib).data();
                      double* dA = tp.grad(ia).data();
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) {
                          const double gij = G[i * n + j];
                          const double* Bj = B;  // B[p*n+j]
                          for (std::size_t p = 0; p < k; ++p) {
                            dA[i * k + p] += gij * Bj[p * n + j];
                          }
                        }
                      }
                    }
                    if (tp.requires_grad(ib)) {
                      // dB = A^T * G
                      const double* A = tp.value(ia).data();
                      double* dB = tp.grad(ib).data();
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t p = 0; p < k; ++p) {
                          const double aip = A[i * k + p];
                          const double* Gi = G + i * n;
                          double* dBp = dB + p * n;
                          for (std::size_t j = 0; j < n; ++j) dBp[j] += aip * Gi[j];
                        }
                      }
                    }
                  },
                  "matmul");
}

Var transpose(Var a) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  require_rank2(av, "transpose");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  const int ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, m, n](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) da.at(i, j) += g.at(j, i);
                  },
                  "transpose");
}

Var reshape(Var a, std::vector<std::size_t> shape) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(std::move(shape), std::vector<double>(av.storage()));
  if (out.size() != av.size()) {
    throw InvalidInputError("reshape: element count changes from " + av.shape_str() + " to " +
                            out.shape_str());
  }
  const int ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                  },
                  "reshape");
}

Var softmax_rows(Var a) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  require_rank2(av, "softmax_rows");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = av.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(av.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= sum;
  }
  const int ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, m, n](GradTape& tp, int self) {
                    const Tensor& y = tp.value(self);
                    const Tensor& g = tp.grad(self);
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < m; ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * y.at(i, j);
                      for (std::size_t j = 0; j < n; ++j) {
                        da.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
                      }
                    }
                  },
                  "softmax_rows");
}

Var layer_norm(Var a, double eps) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  require_rank2(av, "layer_norm");
  const std::size_t m = av.rows(), n = av.cols();
  if (n < 1) throw InvalidInputError("layer_norm: empty rows");
  Tensor out = Tensor::zeros(m, n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += av.at(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = av.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = (av.at(i, j) - mean) * inv;
  }
  const int ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, m, n, inv_std = std::move(inv_std)](GradTape& tp, int self) {
                    const Tensor& y = tp.value(self);
                    const Tensor& g = tp.grad(self);
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < m; ++i) {
                      double gmean = 0.0, gymean = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        gmean += g.at(i, j);
                        gymean += g.at(i, j) * y.at(i, j);
                      }
                      gmean /= static_cast<double>(n);
                      gymean /= static_cast<double>(n);
                      for (std::size_t j = 0; j < n; ++j) {
                        da.at(i, j) +=
                            inv_std[i] * (g.at(i, j) - gmean - y.at(i, j) * gymean);
                      }
                    }
                  },
                  "layer_norm");
}

Var leaky_relu(Var a, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw InvalidInputError("leaky_relu: slope must lie in (0,1), got " + std::to_string(slope));
  }
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] >= 0.0 ? av[i] : slope * av[i];
  }
  const int ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, slope](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& x = tp.value(ia);
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      da[i] += g[i] * (x[i] >= 0.0 ? 1.0 : slope);
                    }
                  },
                  "leaky_relu");
}

Var tanh_activation(Var a) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  const int ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia](GradTape& tp, int self) {
                    const Tensor& y = tp.value(self);
                    const Tensor& g = tp.grad(self);
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * (1.0 - y[i] * y[i]);
                  },
                  "tanh");
}

Var log_elem(Var a) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
  const int ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& x = tp.value(ia);
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / x[i];
                  },
                  "log");
}

Var clamp_min(Var a, double floor) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(av[i], floor);
  const int ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, floor](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& x = tp.value(ia);
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      if (x[i] > floor) da[i] += g[i];
                    }
                  },
                  "clamp_min");
}

Var row_l2_normalize(Var a) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  require_rank2(av, "row_l2_normalize");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = Tensor::zeros(m, n);
  std::vector<double> inv_norm(m);
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += av.at(i, j) * av.at(i, j);
    const double norm = std::sqrt(sq);
    if (norm < 1e-150) {
      throw InvalidInputError("row_l2_normalize: zero row " + std::to_string(i));
    }
    inv_norm[i] = 1.0 / norm;
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = av.at(i, j) * inv_norm[i];
  }
  const int ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, m, n, inv_norm = std::move(inv_norm)](GradTape& tp, int self) {
                    const Tensor& y = tp.value(self);
                    const Tensor& g = tp.grad(self);
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < m; ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * y.at(i, j);
                      for (std::size_t j = 0; j < n; ++j) {
                        da.at(i, j) += inv_norm[i] * (g.at(i, j) - y.at(i, j) * dot);
                      }
                    }
                  },
                  "row_l2_normalize");
}

Var sum_all(Var a) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  const int ia = a.id;
  return t.record(Tensor::scalar(s), {ia},
                  [ia](GradTape& tp, int self) {
                    const double g = tp.grad(self)[0];
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
                  },
                  "sum_all");
}

Var mean_all(Var a) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  if (av.size() == 0) throw InvalidInputError("mean_all: empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  const double inv = 1.0 / static_cast<double>(av.size());
  const int ia = a.id;
  return t.record(Tensor::scalar(s * inv), {ia},
                  [ia, inv](GradTape& tp, int self) {
                    const double g = tp.grad(self)[0] * inv;
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
                  },
                  "mean_all");
}

Var mean_rows(Var a) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  require_rank2(av, "mean_rows");
  const std::size_t m = av.rows(), n = av.cols();
  if (m == 0) throw InvalidInputError("mean_rows: no rows");
  Tensor out = Tensor::zeros(1, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(0, j) += av.at(i, j);
  const double inv = 1.0 / static_cast<double>(m);
  for (std::size_t j = 0; j < n; ++j) out.at(0, j) *= inv;
  const int ia = a.id;
  return t.record(std::move(out), {ia},
                  [ia, m, n, inv](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    Tensor& da = tp.grad(ia);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) da.at(i, j) += g.at(0, j) * inv;
                  },
                  "mean_rows");
}

Var vstack(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInputError("vstack: no parts");
  GradTape& t = *parts[0].tape;
  std::size_t rows = 0;
  const std::size_t cols = t.value(parts[0]).cols();
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "vstack");
    const Tensor& v = t.value(p);
    require_rank2(v, "vstack");
    if (v.cols() != cols) {
      throw InvalidInputError("vstack: column mismatch " + v.shape_str());
    }
    offsets.push_back(rows);
    rows += v.rows();
    ids.push_back(p.id);
  }
  Tensor out = Tensor::zeros(rows, cols);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const Tensor& v = t.value(ids[k]);
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < cols; ++j) out.at(offsets[k] + i, j) = v.at(i, j);
  }
  return t.record(std::move(out), ids,
                  [ids, offsets, cols](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!tp.requires_grad(ids[k])) continue;
                      Tensor& da = tp.grad(ids[k]);
                      const std::size_t r = tp.value(ids[k]).rows();
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < cols; ++j)
                          da.at(i, j) += g.at(offsets[k] + i, j);
                    }
                  },
                  "vstack");
}

Var pick(Var a, std::size_t r, std::size_t c) {
  GradTape& t = *a.tape;
  const Tensor& av = t.value(a);
  require_rank2(av, "pick");
  if (r >= av.rows() || c >= av.cols()) {
    throw InvalidInputError("pick: index (" + std::to_string(r) + "," + std::to_string(c) +
                            ") outside " + av.shape_str());
  }
  const int ia = a.id;
  return t.record(Tensor::scalar(av.at(r, c)), {ia},
                  [ia, r, c](GradTape& tp, int self) {
                    tp.grad(ia).at(r, c) += tp.grad(self)[0];
                  },
                  "pick");
}

Var gather_rows(Var x, std::vector<int> idx) {
  GradTape& t = *x.tape;
  const Tensor& xv = t.value(x);
  require_rank2(xv, "gather_rows");
  const std::size_t n = xv.cols();
  Tensor out = Tensor::zeros(idx.size(), n);
  for (std::size_t e = 0; e < idx.size(); ++e) {
    if (idx[e] < 0 || static_cast<std::size_t>(idx[e]) >= xv.rows()) {
      throw InvalidInputError("gather_rows: index " + std::to_string(idx[e]) + " outside " +
                              xv.shape_str());
    }
    for (std::size_t j = 0; j < n; ++j) out.at(e, j) = xv.at(idx[e], j);
  }
  const int ix = x.id;
  return t.record(std::move(out), {ix},
                  [ix, idx = std::move(idx), n](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    Tensor& dx = tp.grad(ix);
                    for (std::size_t e = 0; e < idx.size(); ++e)
                      for (std::size_t j = 0; j < n; ++j) dx.at(idx[e], j) += g.at(e, j);
                  },
                  "gather_rows");
}

Var segment_softmax(Var logits, std::vector<int> offsets) {
  GradTape& t = *logits.tape;
  const Tensor& lv = t.value(logits);
  require_rank2(lv, "segment_softmax");
  if (lv.cols() != 1) {
    throw InvalidInputError("segment_softmax: expected column vector, got " + lv.shape_str());
  }
  if (offsets.size() < 2 || offsets.front() != 0 ||
      offsets.back() != static_cast<int>(lv.rows())) {
    throw InvalidInputError("segment_softmax: bad segment offsets");
  }
  Tensor out = Tensor::zeros(lv.rows(), 1);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const int lo = offsets[s], hi = offsets[s + 1];
    if (hi <= lo) throw InvalidInputError("segment_softmax: empty segment");
    double mx = lv[lo];
    for (int e = lo + 1; e < hi; ++e) mx = std::max(mx, lv[e]);
    double sum = 0.0;
    for (int e = lo; e < hi; ++e) {
      out[e] = std::exp(lv[e] - mx);
      sum += out[e];
    }
    for (int e = lo; e < hi; ++e) out[e] /= sum;
  }
  const int il = logits.id;
  return t.record(std::move(out), {il},
                  [il, offsets = std::move(offsets)](GradTape& tp, int self) {
                    const Tensor& y = tp.value(self);
                    const Tensor& g = tp.grad(self);
                    Tensor& dl = tp.grad(il);
                    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
                      const int lo = offsets[s], hi = offsets[s + 1];
                      double dot = 0.0;
                      for (int e = lo; e < hi; ++e) dot += g[e] * y[e];
                      for (int e = lo; e < hi; ++e) dl[e] += y[e] * (g[e] - dot);
                    }
                  },
                  "segment_softmax");
}

Var rowscale(Var x, Var s) {
  require_same_tape(x, s, "rowscale");
  GradTape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& sv = t.value(s);
  require_rank2(xv, "rowscale");
  if (sv.rank() != 2 || sv.cols() != 1 || sv.rows() != xv.rows()) {
    throw InvalidInputError("rowscale: scale must be " + std::to_string(xv.rows()) +
                            "x1, got " + sv.shape_str());
  }
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = sv[i] * xv.at(i, j);
  const int ix = x.id, is = s.id;
  return t.record(std::move(out), {ix, is},
                  [ix, is, m, n](GradTape& tp, int self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& xv = tp.value(ix);
                    const Tensor& sv = tp.value(is);
                    if (tp.requires_grad(ix)) {
                      Tensor& dx = tp.grad(ix);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) dx.at(i, j) += sv[i] * g.at(i, j);
                    }
                    if (tp.requires_grad(is)) {
                      Tensor& ds = tp.grad(is);
                      for (std::size_t i = 0; i < m; ++i) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * xv.at(i, j);
                        ds[i] += dot;
                      }
                    }
                  },
                  "rowscale");
}

Var scatter_weighted_sum(Var x, std::vector<int> src, std::vector<int> dst, Var w,
                         std::size_t out_rows) {
  require_same_tape(x, w, "scatter_weighted_sum");
  GradTape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  require_rank2(xv, "scatter_weighted_sum");
  if (src.size() != dst.size() || wv.size() != src.size()) {
    throw InvalidInputError("scatter_weighted_sum: edge array sizes differ");
  }
  const std::size_t n = xv.cols();
  Tensor out = Tensor::zeros(out_rows, n);
  for (std::size_t e = 0; e < src.size(); ++e) {
    if (src[e] < 0 || static_cast<std::size_t>(src[e]) >= xv.rows() || dst[e] < 0 ||
        static_cast<std::size_t>(dst[e]) >= out_rows) {
      throw InvalidInputError("scatter_weighted_sum: edge index outside range");
    }
    const double we = wv[e];
    for (std::size_t j = 0; j < n; ++j) out.at(dst[e], j) += we * xv.at(src[e], j);
  }
  const int ix = x.id, iw = w.id;
  return t.record(std::move(out), {ix, iw},
                  [ix, iw, src = std::move(src), dst = std::move(dst), n](GradTape& tp,
                                                                          int self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& xv = tp.value(ix);
                    const Tensor& wv = tp.value(iw);
                    const bool need_x = tp.requires_grad(ix);
                    const bool need_w = tp.requires_grad(iw);
                    for (std::size_t e = 0; e < src.size(); ++e) {
                      if (need_x) {
                        Tensor& dx = tp.grad(ix);
                        const double we = wv[e];
                        for (std::size_t j = 0; j < n; ++j)
                          dx.at(src[e], j) += we * g.at(dst[e], j);
                      }
                      if (need_w) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                          dot += g.at(dst[e], j) * xv.at(src[e], j);
                        tp.grad(iw)[e] += dot;
                      }
                    }
                  },
                  "scatter_weighted_sum");
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

GradCheckReport check_gradients(const std::function<Var(GradTape&)>& build_loss,
                                std::span<Tensor* const> params, double step, double tol) {
  GradCheckReport rep;
  std::vector<Tensor> analytic;
  {
    GradTape tape;
    Var loss = build_loss(tape);
    const Tensor& lv = tape.value(loss);
    if (lv.size() != 1) {
      throw InvalidInputError("check_gradients: loss must be scalar");
    }
    if (!std::isfinite(lv.item())) {
      rep.message = "non-finite loss at base point";
      return rep;
    }
    analytic = tape.backward(loss);
  }
  if (analytic.size() != params.size()) {
    throw InvalidInputError("check_gradients: build_loss registered " +
                            std::to_string(analytic.size()) + " parameters, expected " +
                            std::to_string(params.size()));
  }

  const auto eval = [&]() {
    GradTape tape;
    Var loss = build_loss(tape);
    return tape.value(loss).item();
  };

  rep.per_param_max_rel_error.assign(params.size(), 0.0);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p];
    for (std::size_t e = 0; e < theta.size(); ++e) {
      const double saved = theta[e];
      double up = 0.0, dn = 0.0;
      try {
        theta[e] = saved + step;
        up = eval();
        theta[e] = saved - step;
        dn = eval();
      } catch (const DivergenceError& err) {
        theta[e] = saved;
        rep.offending_param = static_cast<int>(p);
        rep.message = err.what();
        return rep;
      }
      theta[e] = saved;
      const double fd = (up - dn) / (2.0 * step);
      const double an = analytic[p][e];
      if (!std::isfinite(fd) || !std::isfinite(an)) {
        rep.offending_param = static_cast<int>(p);
        rep.message = "non-finite gradient for parameter " + std::to_string(p) + " element " +
                      std::to_string(e);
        return rep;
      }
      const double rel =
          std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      rep.per_param_max_rel_error[p] = std::max(rep.per_param_max_rel_error[p], rel);
      rep.max_rel_error = std::max(rep.max_rel_error, rel);
    }
  }
  rep.passed = rep.max_rel_error <= tol;
  return rep;
}

}  // namespace promptot
