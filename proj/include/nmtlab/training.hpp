#pragma once

// Loss assembly, AdaGrad, dropout, the epoch loop and the gradient checker.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nmtlab/autodiff.hpp"
#include "nmtlab/corpus.hpp"
#include "nmtlab/decode.hpp"
#include "nmtlab/eval.hpp"
#include "nmtlab/model.hpp"
#include "nmtlab/rng.hpp"

namespace nmtlab {

struct TrainConfig {
  double lr = 0.01;
  double eps = 1e-8;
  double dropout = 0.5;
  std::size_t batch = 80;
  std::size_t max_epochs = 10;
  std::optional<std::size_t> max_updates;  // unset: no cap
  std::size_t valid_every = 0;  // updates between validations; 0: once per epoch
  std::size_t patience = 0;     // validations without improvement before stopping; 0: never
  std::size_t max_len = 50;
  LengthFilter filter = LengthFilter::either;
  double lambda_decay = 1.0;
  double lambda_left = 1.0;
  bool normalize_by_source = false;  // cost_decay divides by |src| instead of decoder steps
  double clip = 5.0;                 // global gradient-norm clip; 0 disables
  bool valid_smoothing = false;      // +1 smoothing for validation BLEU
  std::uint64_t seed = 1;
};

inline void validate(const TrainConfig& c) {
  if (!(c.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(c.eps >= 0.0)) throw ConfigError("train.eps must be non-negative");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("train.dropout must lie in [0, 1)");
  if (!c.batch) throw ConfigError("train.batch must be positive");
  if (!c.max_len) throw ConfigError("train.max_len must be positive");
  if (c.lambda_decay < 0.0 || c.lambda_left < 0.0) throw ConfigError("cost weights must be non-negative");
  if (c.clip < 0.0) throw ConfigError("train.clip must be non-negative");
}

// ---------------------------------------------------------------------------
// Losses

struct XentResult {
  Var loss;  // mean over unmasked steps
  std::size_t steps = 0;
  std::size_t clamped = 0;
};

inline constexpr double kProbFloor = 1e-12;

/// Sum of -log p(target) over unmasked steps, plus the count and clamps.
inline XentResult nll_sum(const std::vector<Var>& dists, const Ids& targets, const std::vector<std::uint8_t>& mask = {}) {
  if (dists.empty()) throw ContractError("xent_loss: no steps");
  if (dists.size() != targets.size())
    throw DimensionError("xent_loss: " + std::to_string(dists.size()) + " distributions for " +
                         std::to_string(targets.size()) + " targets");
  if (!mask.empty() && mask.size() != targets.size()) throw DimensionError("xent_loss: mask length mismatch");
  XentResult r;
  std::vector<Var> terms;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    if (targets[i] >= dists[i].size())
      throw InputError("xent_loss: target " + std::to_string(targets[i]) + " outside vocabulary of " +
                       std::to_string(dists[i].size()));
    bool clamped = false;
    terms.push_back(neg_log_pick(dists[i], targets[i], kProbFloor, &clamped));
    r.clamped += clamped;
  }
  if (terms.empty()) throw ContractError("xent_loss: every step is masked");
  r.steps = terms.size();
  r.loss = add_n(terms);
  return r;
}

inline XentResult xent_loss(const std::vector<Var>& dists, const Ids& targets, const std::vector<std::uint8_t>& mask = {}) {
  XentResult r = nll_sum(dists, targets, mask);
  r.loss = scale(r.loss, 1.0 / static_cast<double>(r.steps));
  return r;
}

struct CondCosts {
  Var decay;
  Var left;
};

/// cost_decay = (1/T) sum_j ||sd_j - sd_{j-1}||, cost_left = ||sd_T|| over
/// [sd_0 .. sd_T]. T defaults to the number of decoder steps.
inline CondCosts conddec_costs(const std::vector<Var>& sd, double T = 0.0) {
  if (sd.size() < 2) throw ContractError("conddec_costs: need sd_0 and at least one step");
  if (T <= 0.0) T = static_cast<double>(sd.size() - 1);
  std::vector<Var> diffs;
  diffs.reserve(sd.size() - 1);
  for (std::size_t j = 1; j < sd.size(); ++j) diffs.push_back(norm2(sub(sd[j], sd[j - 1])));
  return {scale(add_n(diffs), 1.0 / T), norm2(sd.back())};
}

/// xent + lambda_decay * cost_decay + lambda_left * cost_left. The auxiliary
/// costs are dropped at test time.
inline Var total_loss(Var xent, const std::optional<CondCosts>& costs, double lambda_decay, double lambda_left,
                      bool test_time = false) {
  if (test_time || !costs) return xent;
  return add_n({xent, scale(costs->decay, lambda_decay), scale(costs->left, lambda_left)});
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout: 0 with probability rate, otherwise 1 / (1 - rate).
inline Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  Tensor m(shape, 1.0);
  if (rate == 0.0) return m;
  const double keep = 1.0 / (1.0 - rate);
  for (auto& v : m.data) v = rng.uniform() < rate ? 0.0 : keep;
  return m;
}

inline InputTransform dropout_transform(Tape& tape, double rate, Rng& rng) {
  if (rate == 0.0) return {};
  return [&tape, rate, &rng](Var x) { return hadamard(x, tape.constant(dropout_mask(x.shape(), rate, rng))); };
}

// ---------------------------------------------------------------------------
// Per-sentence forward

struct SentenceForward {
  XentResult nll;                // summed over the target steps incl. EOS
  std::optional<CondCosts> costs;
  std::vector<Var> conditions;   // sd_0 .. sd_T (conddec)
  std::vector<Var> hidden;       // h_1 .. h_T
};

/// Teacher-forced pass over one pair: inputs BOS y_1 .. y_n, targets
/// y_1 .. y_n EOS.
template <class M>
inline SentenceForward forward_sentence(M& model, Tape& tape, const Ids& src, const Ids& tgt,
                                        const StepTransforms& tf = {}, bool normalize_by_source = false) {
  const Model::Context ctx = model.start(tape, src, tf.embedding);
  Model::State state = model.initial_state(ctx);
  SentenceForward f;
  if (state.condition) f.conditions.push_back(*state.condition);
  std::vector<Var> dists;
  Ids targets = tgt;
  targets.push_back(kEos);
  TokenId y = kBos;
  for (TokenId t : targets) {
    Model::StepResult r = model.step(ctx, state, y, tf);
    dists.push_back(r.probs);
    f.hidden.push_back(r.next.h);
    if (r.next.condition) f.conditions.push_back(*r.next.condition);
    state = std::move(r.next);
    y = t;
  }
  f.nll = nll_sum(dists, targets);
  if (!f.conditions.empty())
    f.costs = conddec_costs(f.conditions, normalize_by_source ? static_cast<double>(src.size()) : 0.0);
  return f;
}

/// Batch objective: summed NLL over all target tokens in the batch divided by
/// that count, plus the auxiliary costs averaged over sentences. Builds one
/// tape per sentence; gradients accumulate into the model's parameters when
/// `accumulate` is set. Returns the objective value.
struct BatchLoss {
  double value = 0.0;
  double xent = 0.0;
  std::size_t tokens = 0;
  std::size_t clamped = 0;
};

inline BatchLoss batch_objective(Model& model, const std::vector<const SentencePair*>& pairs, const TrainConfig& cfg,
                                 Rng* dropout_rng, bool accumulate) {
  BatchLoss out;
  for (const auto* p : pairs) out.tokens += p->tgt_ids.size() + 1;
  const double inv_tokens = 1.0 / static_cast<double>(out.tokens);
  const double inv_sents = 1.0 / static_cast<double>(pairs.size());
  for (const auto* p : pairs) {
    Tape tape(accumulate);
    StepTransforms tf;
    if (dropout_rng && cfg.dropout > 0.0) {
      tf.embedding = dropout_transform(tape, cfg.dropout, *dropout_rng);
      tf.features = tf.embedding;
    }
    SentenceForward f = forward_sentence(model, tape, p->src_ids, p->tgt_ids, tf, cfg.normalize_by_source);
    Var loss = scale(f.nll.loss, inv_tokens);
    out.xent += loss.value()[0];
    if (f.costs) loss = add(loss, scale(add(scale(f.costs->decay, cfg.lambda_decay), scale(f.costs->left, cfg.lambda_left)), inv_sents));
    out.value += loss.value()[0];
    out.clamped += f.nll.clamped;
    if (accumulate) tape.backward(loss);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdaGradState {
  std::vector<std::vector<double>> acc;  // one per parameter block, store order
  std::size_t updates = 0;
  std::size_t skipped = 0;  // batches dropped for non-finite gradients
};

inline double grad_norm(const ParamStore& params) {
  double s = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (double g : params.at(i).grad) s += g * g;
  return std::sqrt(s);
}

/// Rescales all gradients so their global L2 norm is at most max_norm.
inline double clip_gradients(ParamStore& params, double max_norm) {
  const double n = grad_norm(params);
  if (max_norm > 0.0 && n > max_norm) {
    const double f = max_norm / n;
    for (std::size_t i = 0; i < params.size(); ++i)
      for (double& g : params.at(i).grad) g *= f;
  }
  return n;
}

/// acc += g^2; theta -= lr * g / (sqrt(acc) + eps). A non-finite gradient
/// anywhere skips the whole update. Returns whether the update was applied.
inline bool adagrad_update(ParamStore& params, AdaGradState& st, double lr, double eps) {
  if (st.acc.empty()) {
    st.acc.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) st.acc[i].assign(params.at(i).size(), 0.0);
  }
  if (st.acc.size() != params.size()) throw ContractError("adagrad_update: state/parameter block count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params.at(i);
    if (p.grad.size() != p.size() || st.acc[i].size() != p.size())
      throw DimensionError("adagrad_update: block '" + params.name(i) + "' shape mismatch");
    for (double g : p.grad)
      if (!std::isfinite(g)) {
        ++st.skipped;
        return false;
      }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.at(i);
    auto& a = st.acc[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = p.grad[k];
      if (g == 0.0) continue;
      a[k] += g * g;
      p.data[k] -= lr * g / (std::sqrt(a[k]) + eps);
    }
  }
  ++st.updates;
  return true;
}

// ---------------------------------------------------------------------------
// Training loop

struct HistoryRecord {
  std::size_t update = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean batch objective since the previous record
  double valid_bleu = 0.0;
};

struct TrainResult {
  ParamStore best;  // parameters of the highest validation BLEU (earliest on ties)
  std::optional<std::size_t> best_record;
  std::vector<HistoryRecord> history;
  AdaGradState optimizer;
  std::string rng_state;
  std::size_t epochs = 0;
  bool diverged = false;
  std::size_t clamped = 0;
};

struct TrainHooks {
  std::function<void(const HistoryRecord&, bool improved)> on_record;
  std::function<void(const ParamStore& best, const TrainResult&)> on_best;
};

/// Greedy-decodes every pair (no post-processing) and scores BLEU.
inline double validation_bleu(const Model& model, const Vocab& tgt_vocab, const std::vector<SentencePair>& pairs,
                              bool smoothing = false) {
  if (pairs.empty()) return 0.0;
  std::vector<Tokens> hyps, refs;
  hyps.reserve(pairs.size());
  refs.reserve(pairs.size());
  for (const auto& p : pairs) {
    hyps.push_back(decode_sentence(greedy_decode(model, p.src_ids).content(), tgt_vocab));
    refs.push_back(p.tgt_tokens);
  }
  return bleu(hyps, refs, 4, smoothing).score;
}

/// Runs AdaGrad over length-sorted minibatches. The model ends holding the
/// final parameters; the best validated parameters are returned separately
/// (the final ones when there is no validation set).
/// A non-finite objective aborts training before the update is applied, so
/// the model keeps its last good parameters.
inline TrainResult train(Model& model, const Vocab& tgt_vocab, const std::vector<SentencePair>& train_pairs,
                         const std::vector<SentencePair>& valid_pairs, const TrainConfig& cfg, const TrainHooks& hooks = {},
                         std::optional<AdaGradState> resume = std::nullopt) {
  validate(cfg);
  TrainResult res;
  if (resume) res.optimizer = std::move(*resume);
  Rng rng(cfg.seed);
  ParamStore& params = model.params();
  double best_bleu = -1.0;
  std::size_t since_best = 0;
  double loss_acc = 0.0;
  std::size_t loss_n = 0;
  bool stop = cfg.max_updates && res.optimizer.updates >= *cfg.max_updates;
  if (cfg.max_epochs == 0) stop = true;
  if (!stop && train_pairs.empty()) throw InputError("train: empty training corpus");

  const auto record = [&](std::size_t epoch) {
    HistoryRecord h;
    h.update = res.optimizer.updates;
    h.epoch = epoch;
    h.train_loss = loss_n ? loss_acc / static_cast<double>(loss_n) : 0.0;
    h.valid_bleu = validation_bleu(model, tgt_vocab, valid_pairs, cfg.valid_smoothing);
    loss_acc = 0.0;
    loss_n = 0;
    res.history.push_back(h);
    const bool improved = !valid_pairs.empty() && h.valid_bleu > best_bleu;
    if (improved) {
      best_bleu = h.valid_bleu;
      res.best = params;
      res.best_record = res.history.size() - 1;
      since_best = 0;
      if (hooks.on_best) hooks.on_best(res.best, res);
    } else {
      ++since_best;
    }
    if (hooks.on_record) hooks.on_record(h, improved);
    if (cfg.patience && since_best >= cfg.patience) stop = true;
  };

  for (std::size_t epoch = 1; !stop && epoch <= cfg.max_epochs; ++epoch) {
    const std::vector<Batch> batches = make_batches(train_pairs, cfg.batch, cfg.max_len, rng.next(), cfg.filter);
    for (const Batch& b : batches) {
      std::vector<const SentencePair*> pairs;
      pairs.reserve(b.size);
      for (std::size_t i : b.pair_index) pairs.push_back(&train_pairs[i]);
      params.zero_grad();
      const BatchLoss bl = batch_objective(model, pairs, cfg, &rng, true);
      res.clamped += bl.clamped;
      if (!std::isfinite(bl.value)) {
        res.diverged = true;
        stop = true;
        break;
      }
      if (cfg.clip > 0.0) clip_gradients(params, cfg.clip);
      if (!adagrad_update(params, res.optimizer, cfg.lr, cfg.eps)) continue;
      loss_acc += bl.value;
      ++loss_n;
      if (cfg.valid_every && res.optimizer.updates % cfg.valid_every == 0) record(epoch);
      if (cfg.max_updates && res.optimizer.updates >= *cfg.max_updates) stop = true;
      if (stop) break;
    }
    res.epochs = epoch;
    if (!cfg.valid_every && !res.diverged && (loss_n || !stop)) record(epoch);
  }
  params.zero_grad();
  if (!res.best_record) res.best = params;
  res.rng_state = rng.state();
  return res;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckBlock {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_error = 0.0;
  double loss = 0.0;
  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries
/// whose true gradient is ~0 from dividing finite-difference noise by ~0.
inline constexpr double kGradCheckFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
}

/// Compares analytic gradients of the batch objective (dropout and clipping
/// off) against central differences for every non-frozen parameter block.
inline GradCheckReport grad_check(Model& model, const std::vector<SentencePair>& batch, const TrainConfig& cfg,
                                  const std::set<std::string>& frozen = {}, double step = 1e-4) {
  if (batch.empty()) throw InputError("grad_check: empty batch");
  std::vector<const SentencePair*> pairs;
  for (const auto& p : batch) pairs.push_back(&p);
  TrainConfig c = cfg;
  c.dropout = 0.0;
  ParamStore& params = model.params();
  params.zero_grad();
  GradCheckReport rep;
  rep.loss = batch_objective(model, pairs, c, nullptr, true).value;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (frozen.count(params.name(i))) continue;
    Tensor& p = params.at(i);
    GradCheckBlock b{params.name(i), p.size(), 0.0, 0.0};
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double orig = p.data[k];
      const auto at = [&](double offset) {
        p.data[k] = orig + offset;
        return batch_objective(model, pairs, c, nullptr, false).value;
      };
      // Five-point central stencil, truncation O(h^4). If the +-h and +-2h
      // quotients disagree far beyond smooth truncation, the stencil straddles
      // a max() kink and h shrinks.
      double numeric = 0.0;
      for (double h = step; h >= step * 1e-3; h *= 0.1) {
        const double d1 = (at(h) - at(-h)) / (2.0 * h);
        const double d2 = (at(2.0 * h) - at(-2.0 * h)) / (4.0 * h);
        numeric = (4.0 * d1 - d2) / 3.0;
        if (std::abs(d1 - d2) <= 1e-6 * std::max(1.0, std::abs(numeric))) break;
      }
      p.data[k] = orig;
      b.max_rel_error = std::max(b.max_rel_error, relative_error(p.grad[k], numeric));
      b.max_abs_error = std::max(b.max_abs_error, std::abs(p.grad[k] - numeric));
    }
    rep.max_rel_error = std::max(rep.max_rel_error, b.max_rel_error);
    rep.blocks.push_back(b);
  }
  params.zero_grad();
  return rep;
}

}  // namespace nmtlab
