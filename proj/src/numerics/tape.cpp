#include "etmapg/numerics/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "etmapg/errors.hpp"

namespace etmapg {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::make(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return make(std::move(n));
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  Node n;
  n.external = &store.value(name);
  if (tracking_) {
    n.sink = &store.grad(name);
    n.needs_grad = true;
  }
  return make(std::move(n));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  if (tracking_) {
    for (const Var& v : inputs) {
      if (v.tape_ != this) throw ContractViolation("operands recorded on different tapes");
      if (nodes_[v.id_].needs_grad) n.needs_grad = true;
    }
    if (n.needs_grad) n.backward = std::move(fn);
  }
  return make(std::move(n));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.sink) return *n.sink;
  if (!n.has_grad) {
    const Tensor& v = value(id);
    n.local_grad = Tensor(v.shape(), 0.0);
    n.has_grad = true;
  }
  return n.local_grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw ContractViolation("loss belongs to a different tape");
  if (loss.value().size() != 1) {
    throw ContractViolation("backward() needs a scalar loss, got " + loss.value().shape_string());
  }
  if (!tracking_ || !nodes_[loss.id_].needs_grad) return;
  grad(loss.id_)[0] += 1.0;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && n.has_grad) n.backward(*this, id);
  }
}

namespace {

// C += A[n x k] * B[k x m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[n x k] += A[n x m] * B[k x m]^T. B is transposed into scratch first so
// the inner loop runs over contiguous memory without a reduction.
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t k) {
  thread_local std::vector<double> bt;
  bt.resize(m * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = b[p * m + j];
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * m;
    double* ci = c + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double av = ai[j];
      const double* bj = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) ci[p] += av * bj[p];
    }
  }
}

// C[k x m] += A[n x k]^T * D[n x m]
void gemm_tn(const double* a, const double* d, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* di = d + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * di[j];
    }
  }
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ConfigError(std::string(op) + ": " + detail);
}

std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

Tensor like(const Tensor& t) { return Tensor::matrix(t.rows(), t.cols()); }

// Unary elementwise op whose derivative is expressed through input x and output y.
template <class F, class D>
Var unary(const Var& a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y = like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, dfdx](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), op,
          dims(a.value()) + " vs " + dims(b.value()));
}

double log_sigmoid_scalar(double z) {
  // -softplus(-z)
  return -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))));
}

double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.rows(), "matmul", dims(av) + " * " + dims(bv));
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out = Tensor::matrix(n, m);
  gemm_nn(av.values().data(), bv.values().data(), out.values().data(), n, k, m);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) {
      gemm_nt(g.values().data(), t.value(ib).values().data(), t.grad(ia).values().data(), n, m, k);
    }
    if (t.needs_grad(ib)) {
      gemm_tn(t.value(ia).values().data(), g.values().data(), t.grad(ib).values().data(), n, k, m);
    }
  });
}

Var affine(const Var& input, const Var& weights, const Var& bias) {
  const Tensor& x = input.value();
  const Tensor& w = weights.value();
  const Tensor& b = bias.value();
  require(x.cols() == w.rows(), "affine", "input " + dims(x) + " vs weights " + dims(w));
  require(b.size() == w.cols(), "affine",
          "bias length " + std::to_string(b.size()) + " vs " + std::to_string(w.cols()) + " outputs");
  const std::size_t n = x.rows(), k = x.cols(), m = w.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(b.values().begin(), b.values().end(), out.row(i).begin());
  }
  gemm_nn(x.values().data(), w.values().data(), out.values().data(), n, k, m);
  const std::size_t ix = input.id(), iw = weights.id(), ib = bias.id();
  return input.tape().record(
      std::move(out), {input, weights, bias}, [ix, iw, ib, n, k, m](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(ix)) {
          gemm_nt(g.values().data(), t.value(iw).values().data(), t.grad(ix).values().data(), n,
                  m, k);
        }
        if (t.needs_grad(iw)) {
          gemm_tn(t.value(ix).values().data(), g.values().data(), t.grad(iw).values().data(), n,
                  k, m);
        }
        if (t.needs_grad(ib)) {
          Tensor& gb = t.grad(ib);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
          }
        }
      });
}

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  Tensor out = like(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t id : {ia, ib}) {
      if (!t.needs_grad(id)) continue;
      Tensor& gi = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  Tensor out = like(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  Tensor out = like(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(const Var& a) {
  return unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var log_sigmoid(const Var& a) {
  return unary(a, log_sigmoid_scalar, [](double x, double) { return sigmoid_scalar(-x); });
}

Var softmax_rows(const Var& logits) {
  const Tensor& x = logits.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = x.row(i);
    auto yi = y.row(i);
    const double mx = *std::max_element(xi.begin(), xi.end());
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      s += yi[j];
    }
    for (std::size_t j = 0; j < m; ++j) yi[j] /= s;
  }
  const std::size_t ia = logits.id();
  return logits.tape().record(std::move(y), {logits}, [ia, n, m](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& yv = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * yv[i * m + j];
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += yv[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

Var log_softmax_rows(const Var& logits) {
  const Tensor& x = logits.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = x.row(i);
    const double mx = *std::max_element(xi.begin(), xi.end());
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(xi[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < m; ++j) y.at(i, j) = xi[j] - lse;
  }
  const std::size_t ia = logits.id();
  return logits.tape().record(std::move(y), {logits}, [ia, n, m](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& yv = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < n; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < m; ++j) gs += g[i * m + j];
      for (std::size_t j = 0; j < m; ++j) {
        ga[i * m + j] += g[i * m + j] - std::exp(yv[i * m + j]) * gs;
      }
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(const Var& a) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y = Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v;
    y[i] = s;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, n, m](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i];
    }
  });
}

Var pick_cols(const Var& a, std::span<const int> cols) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  require(cols.size() == n, "pick_cols",
          std::to_string(cols.size()) + " indices for " + std::to_string(n) + " rows");
  std::vector<int> idx(cols.begin(), cols.end());
  Tensor y = Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    require(idx[i] >= 0 && static_cast<std::size_t>(idx[i]) < m, "pick_cols",
            "index " + std::to_string(idx[i]) + " out of range for " + std::to_string(m) + " columns");
    y[i] = x.at(i, static_cast<std::size_t>(idx[i]));
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a},
                         [ia, m, idx = std::move(idx)](Tape& t, std::size_t self) {
                           if (!t.needs_grad(ia)) return;
                           const Tensor& g = t.grad(self);
                           Tensor& ga = t.grad(ia);
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                             ga[i * m + static_cast<std::size_t>(idx[i])] += g[i];
                           }
                         });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no operands");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    require(p.rows() == n, "concat_cols", "row counts differ");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor y = Tensor::matrix(n, total);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& x = p.value();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(x.row(i).begin(), x.row(i).end(), y.row(i).begin() + static_cast<std::ptrdiff_t>(off));
    }
    off += x.cols();
  }
  return parts[0].tape().record(std::move(y), parts, [ids, widths, n, total](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.needs_grad(ids[k])) {
        Tensor& gk = t.grad(ids[k]);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < widths[k]; ++j) gk[i * widths[k] + j] += g[i * total + o + j];
        }
      }
      o += widths[k];
    }
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  require(begin < end && end <= m, "slice_cols",
          "range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + std::to_string(m));
  const std::size_t w = end - begin;
  Tensor y = Tensor::matrix(n, w);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < w; ++j) y.at(i, j) = x.at(i, begin + j);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, n, m, w, begin](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w; ++j) ga[i * m + begin + j] += g[i * w + j];
    }
  });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var minimum(const Var& a, const Var& b) {
  same_shape(a, b, "minimum");
  Tensor out = like(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(a.value()[i], b.value()[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool to_a = av[i] <= bv[i];
      const std::size_t id = to_a ? ia : ib;
      if (t.needs_grad(id)) t.grad(id)[i] += g[i];
    }
  });
}

Var head_scores(const Var& queries, const Var& keys, std::size_t heads) {
  const Tensor& q = queries.value();
  const Tensor& k = keys.value();
  const std::size_t batch = q.rows(), dim = q.cols();
  require(heads > 0 && dim % heads == 0, "head_scores",
          "dimension " + std::to_string(dim) + " not divisible into " + std::to_string(heads) + " heads");
  require(k.cols() == dim, "head_scores", "key width " + std::to_string(k.cols()) + " vs " + std::to_string(dim));
  require(k.rows() % batch == 0, "head_scores", "key rows not a multiple of query rows");
  const std::size_t n = k.rows() / batch;
  const std::size_t dk = dim / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor s = Tensor::matrix(batch * heads, n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double* qh = q.values().data() + b * dim + h * dk;
      for (std::size_t j = 0; j < n; ++j) {
        const double* kh = k.values().data() + (b * n + j) * dim + h * dk;
        double acc = 0.0;
        for (std::size_t d = 0; d < dk; ++d) acc += qh[d] * kh[d];
        s.at(b * heads + h, j) = acc * inv;
      }
    }
  }
  const std::size_t iq = queries.id(), ik = keys.id();
  return queries.tape().record(
      std::move(s), {queries, keys}, [iq, ik, batch, heads, n, dim, dk, inv](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const bool gq = t.needs_grad(iq), gk = t.needs_grad(ik);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t j = 0; j < n; ++j) {
              const double gs = g[(b * heads + h) * n + j] * inv;
              if (gs == 0.0) continue;
              const std::size_t qoff = b * dim + h * dk;
              const std::size_t koff = (b * n + j) * dim + h * dk;
              if (gq) {
                Tensor& gqv = t.grad(iq);
                for (std::size_t d = 0; d < dk; ++d) gqv[qoff + d] += gs * kv[koff + d];
              }
              if (gk) {
                Tensor& gkv = t.grad(ik);
                for (std::size_t d = 0; d < dk; ++d) gkv[koff + d] += gs * qv[qoff + d];
              }
            }
          }
        }
      });
}

Var masked_softmax_rows(const Var& scores, const Tensor& mask) {
  const Tensor& x = scores.value();
  const std::size_t rows = x.rows(), n = x.cols();
  require(mask.cols() == n, "masked_softmax_rows", "mask width mismatch");
  require(mask.rows() > 0 && rows % mask.rows() == 0, "masked_softmax_rows",
          "score rows not a multiple of mask rows");
  const std::size_t rep = rows / mask.rows();
  Tensor y = Tensor::matrix(rows, n);
  for (std::size_t r = 0; r < rows; ++r) {
    auto mr = mask.row(r / rep);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (mr[j] != 0.0) mx = std::max(mx, x.at(r, j));
    }
    if (!std::isfinite(mx)) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mr[j] != 0.0) {
        y.at(r, j) = std::exp(x.at(r, j) - mx);
        s += y.at(r, j);
      }
    }
    for (std::size_t j = 0; j < n; ++j) y.at(r, j) /= s;
  }
  const std::size_t ia = scores.id();
  return scores.tape().record(std::move(y), {scores}, [ia, rows, n](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& yv = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    // Masked entries have y = 0 and therefore receive no gradient.
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * yv[r * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += yv[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Var head_mix(const Var& weights, const Var& values, std::size_t heads) {
  const Tensor& w = weights.value();
  const Tensor& v = values.value();
  require(heads > 0 && w.rows() % heads == 0, "head_mix", "weight rows not a multiple of heads");
  const std::size_t batch = w.rows() / heads, n = w.cols(), dim = v.cols();
  require(dim % heads == 0, "head_mix", "value width not divisible into heads");
  require(v.rows() == batch * n, "head_mix", "value rows " + std::to_string(v.rows()) + " vs " +
                                                 std::to_string(batch * n));
  const std::size_t dk = dim / heads;
  Tensor out = Tensor::matrix(batch, dim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* o = out.values().data() + b * dim + h * dk;
      for (std::size_t j = 0; j < n; ++j) {
        const double a = w.at(b * heads + h, j);
        if (a == 0.0) continue;
        const double* vj = v.values().data() + (b * n + j) * dim + h * dk;
        for (std::size_t d = 0; d < dk; ++d) o[d] += a * vj[d];
      }
    }
  }
  const std::size_t iw = weights.id(), iv = values.id();
  return weights.tape().record(
      std::move(out), {weights, values}, [iw, iv, batch, heads, n, dim, dk](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& wv = t.value(iw);
        const Tensor& vv = t.value(iv);
        const bool gw = t.needs_grad(iw), gv = t.needs_grad(iv);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t goff = b * dim + h * dk;
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t voff = (b * n + j) * dim + h * dk;
              if (gw) {
                double acc = 0.0;
                for (std::size_t d = 0; d < dk; ++d) acc += g[goff + d] * vv[voff + d];
                t.grad(iw)[(b * heads + h) * n + j] += acc;
              }
              if (gv) {
                const double a = wv[(b * heads + h) * n + j];
                Tensor& gvv = t.grad(iv);
                for (std::size_t d = 0; d < dk; ++d) gvv[voff + d] += a * g[goff + d];
              }
            }
          }
        }
      });
}

}  // namespace etmapg
