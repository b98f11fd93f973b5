#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "etmapg/numerics/param_store.hpp"
#include "etmapg/numerics/tensor.hpp"

namespace etmapg {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape, rebuilt for every forward pass. Nodes are appended in
// evaluation order, so a reverse sweep over node ids is a valid topological
// order for backpropagation.
//
// A tape built with track_gradients = false records values only; parameters
// bound to it are treated as constants. Values are identical either way.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool track_gradients = true) : tracking_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Binds a parameter by reference; the store must outlive the tape and must
  // not be modified until backward() has run.
  Var param(const ParamStore& store, const std::string& name);

  // Accumulates d(loss)/d(param) into every bound parameter's gradient slot.
  void backward(const Var& loss);

  bool tracking() const { return tracking_; }
  std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }
  const Tensor& value(std::size_t id) const;
  Tensor& grad(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* sink = nullptr;
    Tensor local_grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var make(Node node);

  std::vector<Node> nodes_;
  bool tracking_;
};

// ---- differentiable operations ------------------------------------------
// Every operation works on the matrix view of its operands (rows x cols).

Var matmul(const Var& a, const Var& b);
// input[n x d_in] * weights[d_in x d_out] + bias[d_out] (bias broadcast over rows)
Var affine(const Var& input, const Var& weights, const Var& bias);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var square(const Var& a);

Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var log_sigmoid(const Var& a);

// Row-wise softmax with max subtraction.
Var softmax_rows(const Var& logits);
Var log_softmax_rows(const Var& logits);

Var sum(const Var& a);
Var mean(const Var& a);
// [n x m] -> [n x 1]
Var sum_rows(const Var& a);

// [n x m], one column index per row -> [n x 1]
Var pick_cols(const Var& a, std::span<const int> cols);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);

// Gradient passes where lo <= a <= hi.
Var clamp(const Var& a, double lo, double hi);
// Elementwise minimum; ties route the gradient to `a`.
Var minimum(const Var& a, const Var& b);

// ---- multi-head attention building blocks --------------------------------
// queries: [B x D], keys: [(B*N) x D] holding N keys per query row.
// Returns [(B*H) x N] scores q_h . k_h / sqrt(D / H).
Var head_scores(const Var& queries, const Var& keys, std::size_t heads);
// Softmax over entries with mask != 0; fully masked rows produce zeros.
// mask is [M x N] with scores.rows() a multiple of M; score row s uses mask
// row s / (scores.rows() / M), so a per-query [B x N] mask serves all heads.
Var masked_softmax_rows(const Var& scores, const Tensor& mask);
// weights: [(B*H) x N], values: [(B*N) x D] -> [B x D], head h filling
// columns [h*D/H, (h+1)*D/H).
Var head_mix(const Var& weights, const Var& values, std::size_t heads);

}  // namespace etmapg
