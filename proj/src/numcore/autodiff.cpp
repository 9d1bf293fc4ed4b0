#include "tsp/numcore/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "tsp/error.hpp"

namespace tsp::num {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant placed on tape");
  nodes_.push_back(Node{std::move(value), {}, {}, false, "constant"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const std::string& name) {
  require(store_ != nullptr, "tape has no parameter store");
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var(this, it->second);
  const Tensor& v = store_->get(name);
  if (!v.all_finite()) throw NumericError("parameter '" + name + "' is not finite");
  nodes_.push_back(Node{v, {}, {}, true, "param"});
  param_ids_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, std::vector<std::size_t> parents, BackwardFn backward, const char* op) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite output from op '") + op + "'");
  bool rg = false;
  for (auto p : parents) rg = rg || nodes_[p].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, rg ? std::move(backward) : BackwardFn{}, rg, op});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var root) {
  require(&root.tape() == this, "backward root belongs to another tape");
  require(root.value().size() == 1, "backward root must be a scalar, got " + shape_str(root.shape()));
  require(!backward_done_, "backward already run on this tape");
  backward_done_ = true;
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id()).fill(1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    if (!n.grad.all_finite()) throw NumericError(std::string("non-finite gradient at op '") + n.op + "'");
    // The callback may allocate other nodes' grads; nodes_ itself never grows here.
    n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
}

Gradients Tape::param_grads() const {
  Gradients out;
  for (const auto& [name, id] : param_ids_) {
    Tensor g = grad(Var(const_cast<Tape*>(this), id));
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
    out.emplace(name, std::move(g));
  }
  return out;
}

// ---- Ops ------------------------------------------------------------------

namespace {

void same_tape(Var a, Var b) { require(&a.tape() == &b.tape(), "vars live on different tapes"); }

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::size_t rows_of(const Tensor& t) { return t.rank() == 1 ? 1 : t.shape()[0]; }

void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
}

// out[m,n] += a[m,k] · b[k,n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// out[m,k] += g[m,n] · b[k,n]^T
void gemm_nt(const double* g, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gr = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* br = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gr[j] * br[j];
      out[i * k + p] += s;
    }
  }
}

// out[k,n] += a[m,k]^T · g[m,n]
void gemm_tn(const double* a, const double* g, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gr = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* o = out + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * gr[j];
    }
  }
}

template <typename F, typename D>
Var unary(Var a, const char* op, F f, D dfdx_from_out) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id();
  Tape& tape = a.tape();
  const std::size_t self = tape.node_count();
  return tape.push(std::move(out), {ia},
                   [ia, self, dfdx_from_out](Tape& t, const Tensor& g) {
                     if (!t.requires_grad(ia)) return;
                     const Tensor& xv = t.value(ia);
                     const Tensor& yv = t.value(self);
                     Tensor& ga = t.grad_buffer(ia);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx_from_out(xv[i], yv[i]);
                   },
                   op);
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  require(bv.shape()[0] == k, "matmul: inner dimensions differ " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  Tensor out({m, n});
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib},
                       [ia, ib, m, k, n](Tape& t, const Tensor& g) {
                         if (t.requires_grad(ia))
                           gemm_nt(g.data().data(), t.value(ib).data().data(), t.grad_buffer(ia).data().data(), m, k, n);
                         if (t.requires_grad(ib))
                           gemm_tn(t.value(ia).data().data(), g.data().data(), t.grad_buffer(ib).data().data(), m, k, n);
                       },
                       "matmul");
}

Var dense(Var x, Var w, Var b) {
  same_tape(x, w);
  same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require_matrix(xv, "dense");
  require_matrix(wv, "dense");
  const std::size_t m = xv.shape()[0], k = xv.shape()[1], n = wv.shape()[1];
  require(wv.shape()[0] == k,
          "dense: input " + shape_str(xv.shape()) + " does not conform to weights " + shape_str(wv.shape()));
  require(bv.rank() == 1 && bv.size() == n,
          "dense: bias " + shape_str(bv.shape()) + " does not match output width " + std::to_string(n));
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = bv[j];
  gemm_nn(xv.data().data(), wv.data().data(), out.data().data(), m, k, n);
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().push(std::move(out), {ix, iw, ib},
                       [ix, iw, ib, m, k, n](Tape& t, const Tensor& g) {
                         if (t.requires_grad(ix))
                           gemm_nt(g.data().data(), t.value(iw).data().data(), t.grad_buffer(ix).data().data(), m, k, n);
                         if (t.requires_grad(iw))
                           gemm_tn(t.value(ix).data().data(), g.data().data(), t.grad_buffer(iw).data().data(), m, k, n);
                         if (t.requires_grad(ib)) {
                           Tensor& gb = t.grad_buffer(ib);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                         }
                       },
                       "dense");
}

Var add(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib},
                       [ia, ib](Tape& t, const Tensor& g) {
                         for (auto id : {ia, ib}) {
                           if (!t.requires_grad(id)) continue;
                           Tensor& gg = t.grad_buffer(id);
                           for (std::size_t i = 0; i < g.size(); ++i) gg[i] += g[i];
                         }
                       },
                       "add");
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib},
                       [ia, ib](Tape& t, const Tensor& g) {
                         if (t.requires_grad(ia)) {
                           Tensor& ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         }
                         if (t.requires_grad(ib)) {
                           Tensor& gb = t.grad_buffer(ib);
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                         }
                       },
                       "sub");
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib},
                       [ia, ib](Tape& t, const Tensor& g) {
                         if (t.requires_grad(ia)) {
                           Tensor& ga = t.grad_buffer(ia);
                           const Tensor& bv = t.value(ib);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                         }
                         if (t.requires_grad(ib)) {
                           Tensor& gb = t.grad_buffer(ib);
                           const Tensor& av = t.value(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                         }
                       },
                       "mul");
}

Var scale(Var a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var one_minus(Var a) {
  return unary(a, "one_minus", [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var mul_const(Var a, const Tensor& c) {
  same_shape(a.value(), c, "mul_const");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), {ia},
                       [ia, c](Tape& t, const Tensor& g) {
                         Tensor& ga = t.grad_buffer(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
                       },
                       "mul_const");
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = rows_of(parts[0].value());
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    require(rows_of(p.value()) == m, "concat_cols: row counts differ");
    ids.push_back(p.id());
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.data().data() + i * w, w, out.data().data() + i * total + off);
    off += w;
  }
  return parts[0].tape().push(std::move(out), ids,
                              [ids, widths, m, total](Tape& t, const Tensor& g) {
                                std::size_t off = 0;
                                for (std::size_t p = 0; p < ids.size(); ++p) {
                                  const std::size_t w = widths[p];
                                  if (t.requires_grad(ids[p])) {
                                    Tensor& gp = t.grad_buffer(ids[p]);
                                    for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off + j];
                                  }
                                  off += w;
                                }
                              },
                              "concat_cols");
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& v = a.value();
  require_matrix(v, "slice_cols");
  const std::size_t m = v.shape()[0], n = v.shape()[1];
  require(begin < end && end <= n, "slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = v.at(i, begin + j);
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), {ia},
                       [ia, begin, w, m, n](Tape& t, const Tensor& g) {
                         Tensor& ga = t.grad_buffer(ia);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
                       },
                       "slice_cols");
}

Var log_softmax_rows(Var logits) {
  const Tensor& z = logits.value();
  require_matrix(z, "log_softmax_rows");
  const std::size_t m = z.shape()[0], n = z.shape()[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const auto r = z.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double x : r) s += std::exp(x - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = r[j] - lse;
  }
  const std::size_t iz = logits.id();
  Tape& tape = logits.tape();
  const std::size_t self = tape.node_count();
  return tape.push(std::move(out), {iz},
                   [iz, self, m, n](Tape& t, const Tensor& g) {
                     // d/dz_j = g_j - p_j Σ_k g_k
                     const Tensor& lp = t.value(self);
                     Tensor& gz = t.grad_buffer(iz);
                     for (std::size_t i = 0; i < m; ++i) {
                       double gs = 0.0;
                       for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
                       for (std::size_t j = 0; j < n; ++j) gz[i * n + j] += g[i * n + j] - std::exp(lp[i * n + j]) * gs;
                     }
                   },
                   "log_softmax_rows");
}

Var entropy_rows(Var logits) {
  const Tensor& z = logits.value();
  require_matrix(z, "entropy_rows");
  const std::size_t m = z.shape()[0], n = z.shape()[1];
  Tensor logp({m, n});
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    const auto r = z.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double x : r) s += std::exp(x - mx);
    const double lse = mx + std::log(s);
    double h = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      logp.at(i, j) = r[j] - lse;
      h -= std::exp(logp.at(i, j)) * logp.at(i, j);
    }
    out.at(i, 0) = h;
  }
  const std::size_t iz = logits.id();
  return logits.tape().push(std::move(out), {iz},
                            [iz, logp = std::move(logp), m, n](Tape& t, const Tensor& g) {
                              // dH/dz_j = -p_j (log p_j + H)
                              Tensor& gz = t.grad_buffer(iz);
                              for (std::size_t i = 0; i < m; ++i) {
                                double h = 0.0;
                                for (std::size_t j = 0; j < n; ++j) h -= std::exp(logp[i * n + j]) * logp[i * n + j];
                                for (std::size_t j = 0; j < n; ++j) {
                                  const double p = std::exp(logp[i * n + j]);
                                  gz[i * n + j] += g[i] * (-p * (logp[i * n + j] + h));
                                }
                              }
                            },
                            "entropy_rows");
}

Var pick_rows(Var a, const std::vector<int>& idx) {
  const Tensor& v = a.value();
  require_matrix(v, "pick_rows");
  const std::size_t m = v.shape()[0], n = v.shape()[1];
  require(idx.size() == m, "pick_rows: index count does not match row count");
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    require(idx[i] < static_cast<int>(n), "pick_rows: column index out of range");
    out[i] = idx[i] >= 0 ? v.at(i, static_cast<std::size_t>(idx[i])) : 0.0;
  }
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), {ia},
                       [ia, idx, n](Tape& t, const Tensor& g) {
                         Tensor& ga = t.grad_buffer(ia);
                         for (std::size_t i = 0; i < idx.size(); ++i)
                           if (idx[i] >= 0) ga[i * n + static_cast<std::size_t>(idx[i])] += g[i];
                       },
                       "pick_rows");
}

Var bce_with_logits(Var logits, const Tensor& targets) {
  same_shape(logits.value(), targets, "bce_with_logits");
  const Tensor& c = logits.value();
  Tensor out(c.shape());
  for (std::size_t i = 0; i < c.size(); ++i) {
    require(targets[i] >= 0.0 && targets[i] <= 1.0, "bce_with_logits: target outside [0,1]");
    // -[u log σ(c) + (1-u) log(1-σ(c))] = softplus(c) - u c
    out[i] = softplus(c[i]) - targets[i] * c[i];
  }
  const std::size_t ic = logits.id();
  return logits.tape().push(std::move(out), {ic},
                            [ic, targets](Tape& t, const Tensor& g) {
                              const Tensor& cv = t.value(ic);
                              Tensor& gc = t.grad_buffer(ic);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                gc[i] += g[i] * (stable_sigmoid(cv[i]) - targets[i]);
                            },
                            "bce_with_logits");
}

Var sum_all(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  const std::size_t ia = a.id();
  return a.tape().push(Tensor::scalar(s), {ia},
                       [ia](Tape& t, const Tensor& g) {
                         Tensor& ga = t.grad_buffer(ia);
                         for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                       },
                       "sum_all");
}

}  // namespace tsp::num
