#pragma once

// Decoder cells (baseline, InputFeed, CondDec) and the maxout deep-output
// layer.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nmtlab/autodiff.hpp"
#include "nmtlab/encoder.hpp"
#include "nmtlab/params.hpp"

namespace nmtlab {

enum class DecoderKind { base, inputfeed, conddec };

inline std::string_view to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::base: return "base";
    case DecoderKind::inputfeed: return "inputfeed";
    case DecoderKind::conddec: return "conddec";
  }
  return "?";
}

inline DecoderKind parse_decoder_kind(std::string_view s) {
  for (auto k : {DecoderKind::base, DecoderKind::inputfeed, DecoderKind::conddec})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown decoder variant '" + std::string(s) + "' (base|inputfeed|conddec)");
}

struct DecoderDims {
  std::size_t embed = 0;
  std::size_t hidden = 0;
  std::size_t context = 0;    // encoder state dim
  std::size_t condition = 0;  // conddec only
};

inline void add_decoder_params(ParamStore& store, DecoderKind kind, const DecoderDims& d) {
  const std::size_t ctx = kind == DecoderKind::inputfeed ? 2 * d.context : d.context;
  add_gru_params(store, "dec", d.embed, d.hidden, ctx);
  store.add("dec.N", {d.hidden, d.context / 2});
  if (kind == DecoderKind::conddec) {
    store.add("dec.Wd", {d.condition, d.embed});
    store.add("dec.Ud", {d.condition, d.hidden});
    store.add("dec.Vd", {d.condition, d.context});
    store.add("dec.Vh", {d.hidden, d.condition});
    store.add("dec.M", {d.condition, d.context});
  }
}

struct DecoderParams {
  DecoderKind kind = DecoderKind::base;
  GruParams gru;
  Var N;  // h0 map
  std::optional<Var> Wd, Ud, Vd, Vh, M;
};

template <class Store>
inline DecoderParams bind_decoder(Tape& tape, Store& store, DecoderKind kind) {
  DecoderParams p{kind, bind_gru(tape, store, "dec"), tape.param(store.get("dec.N")), {}, {}, {}, {}, {}};
  if (kind == DecoderKind::conddec) {
    p.Wd = tape.param(store.get("dec.Wd"));
    p.Ud = tape.param(store.get("dec.Ud"));
    p.Vd = tape.param(store.get("dec.Vd"));
    p.Vh = tape.param(store.get("dec.Vh"));
    p.M = tape.param(store.get("dec.M"));
  }
  return p;
}

/// h_i = GRU(y_{i-1}, h_{i-1}) with the context entering every gate through V.
inline Var decoder_step_base(Var h_prev, Var y_prev, Var context, const DecoderParams& p) {
  return gru_step(y_prev, h_prev, p.gru, context);
}

/// InputFeed: the cell sees [c_i ; c_{i-1}].
inline Var decoder_step_inputfeed(Var h_prev, Var y_prev, Var context, Var context_prev, const DecoderParams& p) {
  return gru_step(y_prev, h_prev, p.gru, concat({context, context_prev}));
}

struct CondStep {
  Var h;
  Var condition;  // sd_i
  Var decay;      // d_i
};

/// CondDec: an extra decay gate d shrinks the condition vector,
/// sd_i = d_i o sd_{i-1}, and h_i gains tanh(Vh sd_i).
inline CondStep conddec_step(Var h_prev, Var y_prev, Var context, Var sd_prev, const DecoderParams& p) {
  if (!p.Wd) throw ContractError("conddec_step: decoder has no condition parameters");
  if (sd_prev.size() != p.Wd->value().rows())
    throw DimensionError("conddec_step: condition " + shape_str(sd_prev.shape()) + " expected [" +
                         std::to_string(p.Wd->value().rows()) + "]");
  GruStep g = gru_step_detail(y_prev, h_prev, p.gru, context);
  Var d = sigmoid(add(add(matmul(*p.Wd, y_prev), matmul(*p.Ud, h_prev)), matmul(*p.Vd, context)));
  Var sd = hadamard(d, sd_prev);
  Var h = add(g.h, tanh(matmul(*p.Vh, sd)));
  return {h, sd, d};
}

/// sd_0 = tanh(M s_T) from the last encoder state.
inline Var init_condition(Var last_state, Var M) {
  if (last_state.size() != M.value().cols())
    throw DimensionError("init_condition: state " + shape_str(last_state.shape()) + " but M is " + shape_str(M.shape()));
  return tanh(matmul(M, last_state));
}

/// h_0 = tanh(N <-s_1) from the first backward encoder state.
inline Var init_decoder_state(const EncoderStates& enc, Var N) {
  if (enc.length() == 0) throw InputError("init_decoder_state: no encoder states");
  return tanh(matmul(N, enc.backward.front()));
}

struct OutputDims {
  std::size_t input = 0;   // dim of [h ; c ; y]
  std::size_t maxout = 0;  // hidden maxout units
  std::size_t pool = 2;
  std::size_t vocab = 0;
};

inline void add_output_params(ParamStore& store, const OutputDims& d) {
  if (d.pool < 2) throw ConfigError("maxout pool size must be at least 2, got " + std::to_string(d.pool));
  for (std::size_t k = 0; k < d.pool; ++k) store.add("out.P" + std::to_string(k), {d.maxout, d.input});
  store.add("out.R", {d.vocab, d.maxout});
}

struct OutputLayerParams {
  std::vector<Var> pool;  // one affine map per pool member
  Var readout;
};

template <class Store>
inline OutputLayerParams bind_output(Tape& tape, Store& store) {
  OutputLayerParams p;
  for (std::size_t k = 0; store.contains("out.P" + std::to_string(k)); ++k)
    p.pool.push_back(tape.param(store.get("out.P" + std::to_string(k))));
  p.readout = tape.param(store.get("out.R"));
  return p;
}

/// Maxout features t = max_k P_k [h ; c ; y].
inline Var maxout_features(Var h, Var context, Var y_prev, const OutputLayerParams& p) {
  if (p.pool.size() < 2) throw ContractError("deep_output: maxout pool needs at least 2 members");
  Var in = concat({h, context, y_prev});
  if (in.size() != p.pool.front().value().cols())
    throw DimensionError("deep_output: input " + shape_str(in.shape()) + " but pool maps are " +
                         shape_str(p.pool.front().shape()));
  Var t = matmul(p.pool[0], in);
  for (std::size_t k = 1; k < p.pool.size(); ++k) t = maximum(t, matmul(p.pool[k], in));
  return t;
}

/// Vocabulary logits; the caller applies softmax_vec. `transform` sees the
/// maxout features before readout (dropout during training).
inline Var deep_output(Var h, Var context, Var y_prev, const OutputLayerParams& p,
                       const InputTransform& transform = {}) {
  Var t = maxout_features(h, context, y_prev, p);
  if (transform) t = transform(t);
  return matmul(p.readout, t);
}

}  // namespace nmtlab
