#pragma once

#include <span>
#include <vector>

#include "etmapg/numerics/param_store.hpp"
#include "etmapg/numerics/rng.hpp"
#include "etmapg/numerics/tape.hpp"

namespace etmapg {

// A learned broadcast: what agent `sender` put on the channel at step `sent_at`.
struct Message {
  int sender = 0;
  std::vector<double> embedding;
  long sent_at = 0;
};

// Multi-head scaled dot-product attention of one query over a set of
// messages. Query, key, value and output projections are dim x dim without
// bias; head h owns columns [h*key_dim, (h+1)*key_dim) of the projected
// vectors. With no bias anywhere, an empty message set yields a zero context.
class AttentionBlock {
 public:
  AttentionBlock(std::size_t dim, std::size_t heads);

  // Glorot-uniform projections.
  void initialize(Rng& rng);

  std::size_t dim() const { return dim_; }
  std::size_t heads() const { return heads_; }
  std::size_t key_dim() const { return dim_ / heads_; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Batched form. query_sources: [B x dim]; messages: [(B*N) x dim], N slots
  // per row; mask: [B x N], nonzero where a slot holds a message.
  // Returns contexts [B x dim].
  Var forward(Tape& tape, const Var& query_sources, const Var& messages, const Tensor& mask) const;

  // Context b_i for a single query source over an ordered message set.
  std::vector<double> aggregate(std::span<const double> query_source,
                                std::span<const Message> messages) const;

  // Per-head attention weights [heads][messages.size()] for the same inputs.
  std::vector<std::vector<double>> weights(std::span<const double> query_source,
                                           std::span<const Message> messages) const;

 private:
  void check_messages(std::span<const double> query_source, std::span<const Message> messages) const;

  std::size_t dim_;
  std::size_t heads_;
  ParamStore params_;
};

}  // namespace etmapg
