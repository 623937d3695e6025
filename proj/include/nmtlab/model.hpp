#pragma once

// One (encoder, attention variant, decoder variant) configuration: parameter
// layout, initialization, and the per-step forward used by both training and
// decoding.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nmtlab/attention.hpp"
#include "nmtlab/autodiff.hpp"
#include "nmtlab/corpus.hpp"
#include "nmtlab/decoder.hpp"
#include "nmtlab/encoder.hpp"
#include "nmtlab/params.hpp"
#include "nmtlab/rng.hpp"

namespace nmtlab {

struct ModelConfig {
  AttentionKind attention = AttentionKind::base;
  DecoderKind decoder = DecoderKind::base;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t embed = 32;
  std::size_t hidden = 64;     // per encoder direction; also the decoder state
  std::size_t align = 0;       // match-function inner dim; 0 means hidden
  std::size_t att_state = 0;   // rnnatt q dim; 0 means hidden
  std::size_t condition = 32;  // conddec sd dim
  std::size_t maxout = 0;      // maxout units; 0 means hidden
  std::size_t pool = 2;
  std::size_t kernel = 3;      // hybrid2 convolution width
  std::size_t features = 8;    // hybrid2 feature dim
  bool experimental = false;   // allows conddec with recatt/rnnatt

  std::size_t align_dim() const { return align ? align : hidden; }
  std::size_t att_state_dim() const { return att_state ? att_state : hidden; }
  std::size_t maxout_dim() const { return maxout ? maxout : hidden; }
  std::size_t state_dim() const { return 2 * hidden; }
};

inline void validate(const ModelConfig& c) {
  if (c.src_vocab <= kNumReserved || c.tgt_vocab <= kNumReserved)
    throw ConfigError("vocabulary sizes must exceed the 4 reserved entries");
  if (!c.embed || !c.hidden) throw ConfigError("embed and hidden must be positive");
  if (c.decoder == DecoderKind::conddec && !c.condition) throw ConfigError("conddec needs a positive condition dim");
  if (c.pool < 2) throw ConfigError("maxout pool size must be at least 2, got " + std::to_string(c.pool));
  if (c.attention == AttentionKind::hybrid2 && (c.kernel == 0 || c.kernel % 2 == 0))
    throw ConfigError("hybrid2 kernel width must be odd, got " + std::to_string(c.kernel));
  if (c.attention == AttentionKind::hybrid2 && !c.features) throw ConfigError("hybrid2 needs a positive feature dim");
  if (c.decoder == DecoderKind::conddec &&
      (c.attention == AttentionKind::recatt || c.attention == AttentionKind::rnnatt) && !c.experimental)
    throw ConfigError("conddec combined with " + std::string(to_string(c.attention)) +
                      " is experimental; set model.experimental=true to allow it");
}

/// Flat key=value serialization (keys under "model.").
inline std::map<std::string, std::string> to_key_values(const ModelConfig& c) {
  return {
      {"model.attention", std::string(to_string(c.attention))},
      {"model.decoder", std::string(to_string(c.decoder))},
      {"model.src_vocab", std::to_string(c.src_vocab)},
      {"model.tgt_vocab", std::to_string(c.tgt_vocab)},
      {"model.embed", std::to_string(c.embed)},
      {"model.hidden", std::to_string(c.hidden)},
      {"model.align", std::to_string(c.align)},
      {"model.att_state", std::to_string(c.att_state)},
      {"model.condition", std::to_string(c.condition)},
      {"model.maxout", std::to_string(c.maxout)},
      {"model.pool", std::to_string(c.pool)},
      {"model.kernel", std::to_string(c.kernel)},
      {"model.features", std::to_string(c.features)},
      {"model.experimental", c.experimental ? "true" : "false"},
  };
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v[0] == '-') throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true/false, got '" + v + "'");
}

/// Applies one "model.*" key; returns false for keys outside the section.
inline bool apply_model_key(ModelConfig& c, const std::string& key, const std::string& v) {
  if (key == "model.attention") c.attention = parse_attention_kind(v);
  else if (key == "model.decoder") c.decoder = parse_decoder_kind(v);
  else if (key == "model.src_vocab") c.src_vocab = parse_count(key, v);
  else if (key == "model.tgt_vocab") c.tgt_vocab = parse_count(key, v);
  else if (key == "model.embed") c.embed = parse_count(key, v);
  else if (key == "model.hidden") c.hidden = parse_count(key, v);
  else if (key == "model.align") c.align = parse_count(key, v);
  else if (key == "model.att_state") c.att_state = parse_count(key, v);
  else if (key == "model.condition") c.condition = parse_count(key, v);
  else if (key == "model.maxout") c.maxout = parse_count(key, v);
  else if (key == "model.pool") c.pool = parse_count(key, v);
  else if (key == "model.kernel") c.kernel = parse_count(key, v);
  else if (key == "model.features") c.features = parse_count(key, v);
  else if (key == "model.experimental") c.experimental = parse_flag(key, v);
  else return false;
  return true;
}

/// Creates every parameter block the configuration demands, zero-filled.
inline ParamStore make_param_layout(const ModelConfig& c) {
  validate(c);
  ParamStore s;
  s.add("src.E", {c.src_vocab, c.embed});
  s.add("tgt.E", {c.tgt_vocab, c.embed});
  add_gru_params(s, "enc.fwd", c.embed, c.hidden);
  add_gru_params(s, "enc.bwd", c.embed, c.hidden);
  AttentionDims ad;
  ad.query = c.attention == AttentionKind::rnnatt ? c.att_state_dim() : c.hidden;
  ad.state = c.state_dim();
  ad.align = c.align_dim();
  ad.rnn_input = c.hidden + c.state_dim();
  ad.kernel = c.kernel;
  ad.features = c.features;
  add_attention_params(s, c.attention, ad);
  add_decoder_params(s, c.decoder, DecoderDims{c.embed, c.hidden, c.state_dim(), c.condition});
  add_output_params(s, OutputDims{c.hidden + c.state_dim() + c.embed, c.maxout_dim(), c.pool, c.tgt_vocab});
  return s;
}

/// Dropout hooks applied inside a step; empty during decoding.
struct StepTransforms {
  InputTransform embedding;
  InputTransform features;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed, double init_gain = 1.0)
      : config_(std::move(config)), params_(make_param_layout(config_)) {
    Rng rng(seed);
    for (std::size_t i = 0; i < params_.size(); ++i) init_scaled_uniform(params_.at(i), rng, init_gain);
  }

  /// Adopts existing parameters; every block must match the layout.
  Model(ModelConfig config, ParamStore params) : config_(std::move(config)), params_(make_param_layout(config_)) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const std::string& n = params_.name(i);
      if (!params.contains(n)) throw CompatibilityError("checkpoint lacks parameter block '" + n + "'");
      const Tensor& src = params.get(n);
      if (src.shape != params_.at(i).shape)
        throw CompatibilityError("parameter block '" + n + "' has shape " + shape_str(src.shape) + ", expected " +
                                 shape_str(params_.at(i).shape));
      params_.at(i).data = src.data;
    }
    if (params.size() != params_.size()) throw CompatibilityError("checkpoint has parameter blocks this model does not use");
  }

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct Bound {
    Var src_embed, tgt_embed;
    GruParams enc_fwd, enc_bwd;
    AttentionParams att;
    DecoderParams dec;
    OutputLayerParams out;
  };

  struct Context {
    Bound p;
    EncoderStates enc;
    AttentionMemory memory;
  };

  /// Recurrent decoder-side state carried between steps.
  struct State {
    Var h;
    Var context_prev;             // c_{i-1}: recatt, inputfeed
    Var weights_prev;             // w_{i-1}: hybrid1, hybrid2
    std::optional<Var> q;         // rnnatt
    std::optional<Var> condition; // conddec sd_{i-1}
    std::size_t step = 0;
  };

  struct StepResult {
    State next;
    Var logits;
    Var probs;
    Var weights;
    Var context;
  };

  /// Binds parameters on the tape. A const model binds read-only.
  Bound bind(Tape& tape) { return bind_impl(tape, params_); }
  Bound bind(Tape& tape) const { return bind_impl(tape, params_); }

  Context start(Tape& tape, std::span<const TokenId> src, const InputTransform& embed_transform = {}) {
    return start_impl(bind(tape), src, embed_transform);
  }
  Context start(Tape& tape, std::span<const TokenId> src, const InputTransform& embed_transform = {}) const {
    return start_impl(bind(tape), src, embed_transform);
  }

  State initial_state(const Context& ctx) const {
    Tape& tape = *ctx.enc.matrix.tape;
    State s;
    s.h = init_decoder_state(ctx.enc, ctx.p.dec.N);
    s.context_prev = tape.constant(Tensor(Shape{config_.state_dim()}));
    s.weights_prev = tape.constant(Tensor(Shape{ctx.enc.length()}, 1.0 / static_cast<double>(ctx.enc.length())));
    if (config_.attention == AttentionKind::rnnatt) s.q = tape.constant(Tensor(Shape{config_.att_state_dim()}));
    if (config_.decoder == DecoderKind::conddec) s.condition = init_condition(ctx.enc.states.back(), *ctx.p.dec.M);
    return s;
  }

  StepResult step(const Context& ctx, const State& s, TokenId y_prev, const StepTransforms& tf = {}) const {
    if (y_prev >= config_.tgt_vocab) throw InputError("target id " + std::to_string(y_prev) + " outside vocabulary");
    const Bound& p = ctx.p;
    Var y = row(p.tgt_embed, y_prev);
    if (tf.embedding) y = tf.embedding(y);

    StepResult r;
    r.next.step = s.step + 1;
    AttentionResult a;
    switch (config_.attention) {
      case AttentionKind::base: a = attend_base(s.h, ctx.memory, p.att); break;
      case AttentionKind::recatt: a = attend_recatt(s.h, s.context_prev, ctx.memory, p.att); break;
      case AttentionKind::rnnatt:
        a = attend_rnnatt(*s.q, ctx.memory, p.att);
        r.next.q = rnnatt_update(*s.q, s.h, a.context, p.att);
        break;
      case AttentionKind::hybrid1: a = attend_hybrid1(s.h, s.weights_prev, ctx.memory, p.att); break;
      case AttentionKind::hybrid2: a = attend_hybrid2(s.h, s.weights_prev, ctx.memory, p.att); break;
    }
    switch (config_.decoder) {
      case DecoderKind::base: r.next.h = decoder_step_base(s.h, y, a.context, p.dec); break;
      case DecoderKind::inputfeed: r.next.h = decoder_step_inputfeed(s.h, y, a.context, s.context_prev, p.dec); break;
      case DecoderKind::conddec: {
        CondStep cs = conddec_step(s.h, y, a.context, *s.condition, p.dec);
        r.next.h = cs.h;
        r.next.condition = cs.condition;
        break;
      }
    }
    r.next.context_prev = a.context;
    r.next.weights_prev = a.weights;
    r.logits = deep_output(r.next.h, a.context, y, p.out, tf.features);
    r.probs = softmax_vec(r.logits);
    r.weights = a.weights;
    r.context = a.context;
    return r;
  }

 private:
  template <class Store>
  Bound bind_impl(Tape& tape, Store& store) const {
    Bound b;
    b.src_embed = tape.param(store.get("src.E"));
    b.tgt_embed = tape.param(store.get("tgt.E"));
    b.enc_fwd = bind_gru(tape, store, "enc.fwd");
    b.enc_bwd = bind_gru(tape, store, "enc.bwd");
    b.att = bind_attention(tape, store, config_.attention);
    b.dec = bind_decoder(tape, store, config_.decoder);
    b.out = bind_output(tape, store);
    return b;
  }

  Context start_impl(Bound b, std::span<const TokenId> src, const InputTransform& embed_transform) const {
    for (TokenId id : src)
      if (id >= config_.src_vocab) throw InputError("source id " + std::to_string(id) + " outside vocabulary");
    Context ctx{std::move(b), {}, {}};
    ctx.enc = encode(src, ctx.p.src_embed, ctx.p.enc_fwd, ctx.p.enc_bwd, embed_transform);
    ctx.memory = make_memory(ctx.enc, ctx.p.att);
    return ctx;
  }

  ModelConfig config_;
  ParamStore params_;
};

}  // namespace nmtlab
