#pragma once

// GRU cell (no biases) and the bidirectional encoder.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nmtlab/autodiff.hpp"
#include "nmtlab/corpus.hpp"
#include "nmtlab/params.hpp"

namespace nmtlab {

/// GRU weights bound on a tape. V, Vr, Vz are present when the cell takes a
/// context vector.
struct GruParams {
  Var W, U, Wr, Ur, Wz, Uz;
  std::optional<Var> V, Vr, Vz;

  std::size_t hidden() const { return U.value().rows(); }
  std::size_t input() const { return W.value().cols(); }
  std::size_t context() const { return V ? V->value().cols() : 0; }
};

inline void add_gru_params(ParamStore& store, const std::string& prefix, std::size_t input, std::size_t hidden,
                           std::size_t context = 0) {
  for (const char* n : {"W", "Wr", "Wz"}) store.add(prefix + "." + n, {hidden, input});
  for (const char* n : {"U", "Ur", "Uz"}) store.add(prefix + "." + n, {hidden, hidden});
  if (context)
    for (const char* n : {"V", "Vr", "Vz"}) store.add(prefix + "." + n, {hidden, context});
}

template <class Store>
inline GruParams bind_gru(Tape& tape, Store& store, const std::string& prefix) {
  auto p = [&](const char* n) { return tape.param(store.get(prefix + "." + n)); };
  GruParams g{p("W"), p("U"), p("Wr"), p("Ur"), p("Wz"), p("Uz"), std::nullopt, std::nullopt, std::nullopt};
  if (store.contains(prefix + ".V")) {
    g.V = p("V");
    g.Vr = p("Vr");
    g.Vz = p("Vz");
  }
  return g;
}

/// Intermediate values of one GRU step.
struct GruStep {
  Var h;          // new hidden state
  Var candidate;  // h'
  Var reset;      // r
  Var update;     // z
};

inline GruStep gru_step_detail(Var x, Var h_prev, const GruParams& p, std::optional<Var> c = std::nullopt) {
  if (x.size() != p.input() || h_prev.size() != p.hidden())
    throw DimensionError("gru_step: input " + shape_str(x.shape()) + ", state " + shape_str(h_prev.shape()) +
                         " for cell with input " + std::to_string(p.input()) + ", hidden " + std::to_string(p.hidden()));
  if (c && !p.V) throw DimensionError("gru_step: context given to a cell without context weights");
  if (c && c->size() != p.context())
    throw DimensionError("gru_step: context " + shape_str(c->shape()) + " expected [" + std::to_string(p.context()) + "]");

  Var r_pre = add(matmul(p.Wr, x), matmul(p.Ur, h_prev));
  Var z_pre = add(matmul(p.Wz, x), matmul(p.Uz, h_prev));
  Var cand_pre = matmul(p.W, x);
  if (c) {
    r_pre = add(r_pre, matmul(*p.Vr, *c));
    z_pre = add(z_pre, matmul(*p.Vz, *c));
    cand_pre = add(cand_pre, matmul(*p.V, *c));
  }
  Var r = sigmoid(r_pre);
  Var cand = tanh(add(hadamard(r, matmul(p.U, h_prev)), cand_pre));
  Var z = sigmoid(z_pre);
  Var h = add(hadamard(one_minus(z), cand), hadamard(z, h_prev));
  return {h, cand, r, z};
}

inline Var gru_step(Var x, Var h_prev, const GruParams& p, std::optional<Var> c = std::nullopt) {
  return gru_step_detail(x, h_prev, p, c).h;
}

struct EncoderStates {
  std::vector<Var> forward;   // left-to-right states
  std::vector<Var> backward;  // right-to-left states, stored by position
  std::vector<Var> states;    // s_j = [forward_j ; backward_j]
  Var matrix;                 // [2H x T], column j = s_j

  std::size_t length() const { return states.size(); }
  std::size_t dim() const { return states.empty() ? 0 : states.front().size(); }
};

/// Optional per-embedding transform (dropout during training).
using InputTransform = std::function<Var(Var)>;

inline EncoderStates encode(std::span<const TokenId> src, Var embed, const GruParams& fwd, const GruParams& bwd,
                            const InputTransform& transform = {}) {
  if (src.empty()) throw InputError("encode: empty source sentence");
  Tape& tape = *embed.tape;
  const std::size_t T = src.size();
  std::vector<Var> xs;
  xs.reserve(T);
  for (TokenId id : src) {
    Var x = row(embed, id);
    xs.push_back(transform ? transform(x) : x);
  }
  EncoderStates out;
  out.forward.resize(T);
  out.backward.resize(T);
  Var h = tape.constant(Tensor(Shape{fwd.hidden()}));
  for (std::size_t j = 0; j < T; ++j) out.forward[j] = h = gru_step(xs[j], h, fwd);
  h = tape.constant(Tensor(Shape{bwd.hidden()}));
  for (std::size_t j = T; j-- > 0;) out.backward[j] = h = gru_step(xs[j], h, bwd);
  out.states.reserve(T);
  for (std::size_t j = 0; j < T; ++j) out.states.push_back(concat({out.forward[j], out.backward[j]}));
  out.matrix = stack_columns(out.states);
  return out;
}

}  // namespace nmtlab
