#pragma once

// Attention unit variants. Every variant scores each encoder state with the
// additive ("sum") match function e_j = v . tanh(alpha(query, s_j, ...)),
// turns the scores into a distribution over source positions and returns the
// weighted average of the states as the context.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nmtlab/autodiff.hpp"
#include "nmtlab/encoder.hpp"
#include "nmtlab/params.hpp"

namespace nmtlab {

enum class AttentionKind { base, recatt, rnnatt, hybrid1, hybrid2 };

inline std::string_view to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::base: return "base";
    case AttentionKind::recatt: return "recatt";
    case AttentionKind::rnnatt: return "rnnatt";
    case AttentionKind::hybrid1: return "hybrid1";
    case AttentionKind::hybrid2: return "hybrid2";
  }
  return "?";
}

inline AttentionKind parse_attention_kind(std::string_view s) {
  for (auto k : {AttentionKind::base, AttentionKind::recatt, AttentionKind::rnnatt, AttentionKind::hybrid1,
                 AttentionKind::hybrid2})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown attention variant '" + std::string(s) + "' (base|recatt|rnnatt|hybrid1|hybrid2)");
}

/// Sizes of the attention parameter blocks.
struct AttentionDims {
  std::size_t query = 0;     // h dim, or q dim for rnnatt
  std::size_t state = 0;     // encoder state dim (2 * hidden)
  std::size_t align = 0;     // inner dim of the match function
  std::size_t rnn_input = 0; // rnnatt: dim of [h ; c]
  std::size_t kernel = 3;    // hybrid2 convolution width (odd)
  std::size_t features = 0;  // hybrid2 feature dim per position
};

inline void add_attention_params(ParamStore& store, AttentionKind kind, const AttentionDims& d) {
  store.add("att.v", {1, d.align});
  store.add("att.W", {d.align, d.query});
  store.add("att.U", {d.align, d.state});
  switch (kind) {
    case AttentionKind::recatt: store.add("att.V", {d.align, d.state}); break;
    case AttentionKind::rnnatt: add_gru_params(store, "att.rnn", d.rnn_input, d.query); break;
    case AttentionKind::hybrid2:
      if (d.kernel % 2 == 0) throw ConfigError("hybrid2 kernel width must be odd, got " + std::to_string(d.kernel));
      store.add("att.Q", {d.features, d.kernel});
      store.add("att.V", {d.align, d.features});
      break;
    default: break;
  }
}

/// Attention weights bound on a tape. V is the third-argument matrix of the
/// match function (previous context for recatt, convolution features for
/// hybrid2).
struct AttentionParams {
  AttentionKind kind = AttentionKind::base;
  Var v, W, U;
  std::optional<Var> V;
  std::optional<Var> Q;
  std::optional<GruParams> rnn;
};

template <class Store>
inline AttentionParams bind_attention(Tape& tape, Store& store, AttentionKind kind) {
  AttentionParams p;
  p.kind = kind;
  p.v = tape.param(store.get("att.v"));
  p.W = tape.param(store.get("att.W"));
  p.U = tape.param(store.get("att.U"));
  if (store.contains("att.V")) p.V = tape.param(store.get("att.V"));
  if (store.contains("att.Q")) p.Q = tape.param(store.get("att.Q"));
  if (kind == AttentionKind::rnnatt) p.rnn = bind_gru(tape, store, "att.rnn");
  return p;
}

/// Encoder states plus the per-sentence projection U * S, computed once.
struct AttentionMemory {
  Var states;     // [D x T]
  Var projected;  // [A x T]
  Var positions;  // constant [1, 2, ..., T]
  std::size_t length = 0;
};

inline AttentionMemory make_memory(const EncoderStates& enc, const AttentionParams& p) {
  if (enc.length() == 0) throw InputError("attention: no encoder states");
  if (p.U.value().cols() != enc.dim())
    throw DimensionError("attention: state dim " + std::to_string(enc.dim()) + " but U is " + shape_str(p.U.shape()));
  AttentionMemory m;
  m.states = enc.matrix;
  m.projected = matmul(p.U, enc.matrix);
  m.length = enc.length();
  Tensor pos(Shape{m.length});
  for (std::size_t j = 0; j < m.length; ++j) pos.data[j] = static_cast<double>(j + 1);
  m.positions = enc.matrix.tape->constant(std::move(pos));
  return m;
}

struct AttentionResult {
  Var weights;  // [T], in the probability simplex
  Var context;  // [D]
};

namespace detail {

// e = v . tanh(column + M) for every column of M.
inline Var match_scores(const AttentionParams& p, Var query_term, Var per_position, std::size_t T) {
  Var act = tanh(add_column(per_position, query_term));
  return reshape(matmul(p.v, act), Shape{T});
}

inline void require_query(const AttentionParams& p, Var q, const char* op) {
  if (q.size() != p.W.value().cols())
    throw DimensionError(std::string(op) + ": query " + shape_str(q.shape()) + " but W is " + shape_str(p.W.shape()));
}

inline void require_distribution(Var w, std::size_t T, const char* op) {
  const auto& d = w.value().data;
  if (d.size() != T)
    throw DimensionError(std::string(op) + ": previous weights " + shape_str(w.shape()) + " for " + std::to_string(T) + " positions");
  double s = 0.0;
  for (double x : d) {
    if (x < 0.0) throw ContractError(std::string(op) + ": previous weights have a negative entry");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-6) throw ContractError(std::string(op) + ": previous weights sum to " + std::to_string(s));
}

inline AttentionResult finish(Var weights, const AttentionMemory& mem) {
  return {weights, matmul(mem.states, weights)};
}

}  // namespace detail

/// Baseline: e_j = v . tanh(W h + U s_j).
inline AttentionResult attend_base(Var h_prev, const AttentionMemory& mem, const AttentionParams& p) {
  detail::require_query(p, h_prev, "attend_base");
  Var e = detail::match_scores(p, matmul(p.W, h_prev), mem.projected, mem.length);
  return detail::finish(softmax_vec(e), mem);
}

/// RecAtt: the previous context enters the match function,
/// e_j = v . tanh(W h + V c_prev + U s_j).
inline AttentionResult attend_recatt(Var h_prev, Var c_prev, const AttentionMemory& mem, const AttentionParams& p) {
  detail::require_query(p, h_prev, "attend_recatt");
  if (!p.V) throw ContractError("attend_recatt: variant has no V matrix");
  if (c_prev.size() != p.V->value().cols())
    throw DimensionError("attend_recatt: previous context " + shape_str(c_prev.shape()) + " but V is " + shape_str(p.V->shape()));
  Var q = add(matmul(p.W, h_prev), matmul(*p.V, c_prev));
  Var e = detail::match_scores(p, q, mem.projected, mem.length);
  return detail::finish(softmax_vec(e), mem);
}

/// RNNAtt output: the baseline unit queried with the attention state q.
inline AttentionResult attend_rnnatt(Var q_prev, const AttentionMemory& mem, const AttentionParams& p) {
  detail::require_query(p, q_prev, "attend_rnnatt");
  Var e = detail::match_scores(p, matmul(p.W, q_prev), mem.projected, mem.length);
  return detail::finish(softmax_vec(e), mem);
}

/// RNNAtt state update: a GRU over input [h_prev ; c_i] with state q.
/// The decoder then consumes c_i (the printed c_t is read as c_i).
inline Var rnnatt_update(Var q_prev, Var h_prev, Var context, const AttentionParams& p) {
  if (!p.rnn) throw ContractError("rnnatt_update: variant has no attention RNN");
  return gru_step(concat({h_prev, context}), q_prev, *p.rnn);
}

/// HybridAtt1: baseline scores reweighted by Logistic(j - m) where
/// m = sum_j j * w_prev[j] is the previous attention center (1-based j).
/// Implemented as w = normalize(Logistic(j - m) o softmax(e)), which equals
/// the renormalized Logistic(j - m) * exp(e_j).
inline AttentionResult attend_hybrid1(Var h_prev, Var w_prev, const AttentionMemory& mem, const AttentionParams& p) {
  detail::require_query(p, h_prev, "attend_hybrid1");
  detail::require_distribution(w_prev, mem.length, "attend_hybrid1");
  Var e = detail::match_scores(p, matmul(p.W, h_prev), mem.projected, mem.length);
  Var center = sum(hadamard(mem.positions, w_prev));
  Var jump = sub(mem.positions, broadcast(center, mem.length));
  Var w = normalize(hadamard(logistic(jump), softmax_vec(e)));
  return detail::finish(w, mem);
}

/// Location features G = Q * w_prev: column j holds, for each feature row of
/// Q, the zero-padded same-length convolution of w_prev at position j.
inline Var conv_features(Var w_prev, Var Q) {
  const std::size_t width = Q.value().cols();
  if (width % 2 == 0) throw ConfigError("hybrid2 kernel width must be odd, got " + std::to_string(width));
  return matmul(Q, unfold(w_prev, width));
}

/// HybridAtt2: e_j = v . tanh(W h + U s_j + V g_j) with g = Q * w_prev.
inline AttentionResult attend_hybrid2(Var h_prev, Var w_prev, const AttentionMemory& mem, const AttentionParams& p) {
  detail::require_query(p, h_prev, "attend_hybrid2");
  if (!p.Q || !p.V) throw ContractError("attend_hybrid2: variant has no convolution parameters");
  detail::require_distribution(w_prev, mem.length, "attend_hybrid2");
  Var g = conv_features(w_prev, *p.Q);
  Var per_position = add(mem.projected, matmul(*p.V, g));
  Var e = detail::match_scores(p, matmul(p.W, h_prev), per_position, mem.length);
  return detail::finish(softmax_vec(e), mem);
}

/// Rows are decoder steps, columns source positions.
struct AlignmentMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

inline AlignmentMatrix collect_alignment(const std::vector<std::vector<double>>& per_step) {
  AlignmentMatrix m;
  if (per_step.empty()) return m;
  m.cols = per_step.front().size();
  m.rows = per_step.size();
  m.data.reserve(m.rows * m.cols);
  for (const auto& r : per_step) {
    if (r.size() != m.cols)
      throw ContractError("collect_alignment: ragged rows (" + std::to_string(r.size()) + " vs " + std::to_string(m.cols) + ")");
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

}  // namespace nmtlab
