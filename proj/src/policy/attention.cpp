#include "etmapg/policy/attention.hpp"

#include <cmath>

#include "etmapg/errors.hpp"
#include "etmapg/numerics/init.hpp"

namespace etmapg {

namespace {

constexpr const char* kProjections[] = {"query", "key", "value", "output"};

}  // namespace

AttentionBlock::AttentionBlock(std::size_t dim, std::size_t heads) : dim_(dim), heads_(heads) {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("attention: message dimension " + std::to_string(dim) +
                      " must be a positive multiple of the head count " + std::to_string(heads));
  }
  for (const char* p : kProjections) params_.add(p, Tensor::matrix(dim, dim));
}

void AttentionBlock::initialize(Rng& rng) {
  for (const char* p : kProjections) params_.value(p) = glorot_uniform(dim_, dim_, rng);
}

Var AttentionBlock::forward(Tape& tape, const Var& query_sources, const Var& messages,
                            const Tensor& mask) const {
  const Var q = matmul(query_sources, tape.param(params_, "query"));
  const Var k = matmul(messages, tape.param(params_, "key"));
  const Var v = matmul(messages, tape.param(params_, "value"));
  const Var alpha = masked_softmax_rows(head_scores(q, k, heads_), mask);
  return matmul(head_mix(alpha, v, heads_), tape.param(params_, "output"));
}

void AttentionBlock::check_messages(std::span<const double> query_source,
                                    std::span<const Message> messages) const {
  if (query_source.size() != dim_) {
    throw ConfigError("attention: query source has " + std::to_string(query_source.size()) +
                      " entries, expected " + std::to_string(dim_));
  }
  for (const Message& m : messages) {
    if (m.embedding.size() != dim_) {
      throw ConfigError("attention: message from agent " + std::to_string(m.sender) + " has dimension " +
                        std::to_string(m.embedding.size()) + ", expected " + std::to_string(dim_));
    }
  }
}

std::vector<double> AttentionBlock::aggregate(std::span<const double> query_source,
                                              std::span<const Message> messages) const {
  check_messages(query_source, messages);
  if (messages.empty()) return std::vector<double>(dim_, 0.0);
  Tape tape(false);
  const std::size_t n = messages.size();
  Tensor board = Tensor::matrix(n, dim_);
  for (std::size_t j = 0; j < n; ++j) {
    std::copy(messages[j].embedding.begin(), messages[j].embedding.end(), board.row(j).begin());
  }
  const Var out = forward(tape, tape.constant(Tensor::matrix(1, dim_, {query_source.begin(), query_source.end()})),
                          tape.constant(std::move(board)), Tensor::matrix(1, n, 1.0));
  const auto v = out.value().values();
  return {v.begin(), v.end()};
}

std::vector<std::vector<double>> AttentionBlock::weights(std::span<const double> query_source,
                                                         std::span<const Message> messages) const {
  check_messages(query_source, messages);
  std::vector<std::vector<double>> out(heads_);
  if (messages.empty()) return out;
  Tape tape(false);
  const std::size_t n = messages.size();
  Tensor board = Tensor::matrix(n, dim_);
  for (std::size_t j = 0; j < n; ++j) {
    std::copy(messages[j].embedding.begin(), messages[j].embedding.end(), board.row(j).begin());
  }
  const Var board_var = tape.constant(std::move(board));
  const Var q = matmul(tape.constant(Tensor::matrix(1, dim_, {query_source.begin(), query_source.end()})),
                       tape.param(params_, "query"));
  const Var k = matmul(board_var, tape.param(params_, "key"));
  const Var alpha = masked_softmax_rows(head_scores(q, k, heads_), Tensor::matrix(1, n, 1.0));
  for (std::size_t h = 0; h < heads_; ++h) {
    const auto r = alpha.value().row(h);
    out[h].assign(r.begin(), r.end());
  }
  return out;
}

}  // namespace etmapg
