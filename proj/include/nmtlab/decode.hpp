#pragma once

// Beam search, greedy decoding and alignment-based UNK replacement.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "nmtlab/attention.hpp"
#include "nmtlab/corpus.hpp"
#include "nmtlab/model.hpp"

namespace nmtlab {

struct Hypothesis {
  Ids tokens;  // emitted ids; ends in EOS iff finished
  double score = 0.0;
  std::vector<double> step_logprobs;
  std::vector<std::vector<double>> alignment;  // one row of weights per step
  bool finished = false;
  Model::State state;  // decoder state after the last token (search-internal)

  /// Tokens without the trailing EOS.
  Ids content() const {
    Ids t = tokens;
    if (finished && !t.empty() && t.back() == kEos) t.pop_back();
    return t;
  }
  AlignmentMatrix content_alignment() const {
    auto rows = alignment;
    if (finished && !rows.empty()) rows.pop_back();
    return collect_alignment(rows);
  }
};

inline std::size_t default_max_len(std::size_t src_len) { return 3 * src_len + 5; }

/// Stable log-softmax of a logit vector.
inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

struct BeamOptions {
  std::size_t beam = 12;
  std::size_t max_len = 0;  // 0 means 3 * |src| + 5
  bool length_norm = false;
};

inline double ranking_score(const Hypothesis& h, bool length_norm) {
  return length_norm && !h.tokens.empty() ? h.score / static_cast<double>(h.tokens.size()) : h.score;
}

/// Keeps the top (beam - finished) expansions per step by cumulative
/// log-probability; EOS expansions retire to the completed pool. Stops when
/// the pool holds `beam` hypotheses or max_len steps were taken. Returns the
/// completed pool sorted best-first, or the live partials if none finished.
/// PAD is never emitted; ties prefer the earlier parent, then the lower id.
inline std::vector<Hypothesis> beam_search(const Model& model, std::span<const TokenId> src, const BeamOptions& opt) {
  if (src.empty()) throw InputError("beam_search: empty source sentence");
  if (opt.beam == 0) throw InputError("beam_search: beam must be at least 1");
  const std::size_t max_len = opt.max_len ? opt.max_len : default_max_len(src.size());
  Tape tape(false);
  const Model::Context ctx = model.start(tape, src);
  std::vector<Hypothesis> live(1);
  live[0].state = model.initial_state(ctx);
  std::vector<Hypothesis> pool;

  struct Candidate {
    double score;
    std::size_t parent;
    TokenId token;
  };
  struct Expansion {
    Model::State next;
    std::vector<double> logp;
    std::vector<double> weights;
  };

  for (std::size_t t = 0; t < max_len && !live.empty() && pool.size() < opt.beam; ++t) {
    const std::size_t width = opt.beam - pool.size();
    std::vector<Expansion> expansions;
    expansions.reserve(live.size());
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const TokenId y_prev = live[h].tokens.empty() ? kBos : live[h].tokens.back();
      Model::StepResult r = model.step(ctx, live[h].state, y_prev);
      Expansion e{r.next, log_softmax(r.logits.value().data), r.weights.value().data};
      for (TokenId k = 0; k < e.logp.size(); ++k)
        if (k != kPad) cands.push_back({live[h].score + e.logp[k], h, k});
      expansions.push_back(std::move(e));
    }
    const auto better = [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    };
    const std::size_t keep = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);
    std::vector<Hypothesis> next_live;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      const Hypothesis& parent = live[c.parent];
      const Expansion& e = expansions[c.parent];
      Hypothesis h;
      h.tokens = parent.tokens;
      h.tokens.push_back(c.token);
      h.score = c.score;
      h.step_logprobs = parent.step_logprobs;
      h.step_logprobs.push_back(e.logp[c.token]);
      h.alignment = parent.alignment;
      h.alignment.push_back(e.weights);
      h.state = e.next;
      if (c.token == kEos) {
        h.finished = true;
        pool.push_back(std::move(h));
      } else {
        next_live.push_back(std::move(h));
      }
    }
    live = std::move(next_live);
  }

  std::vector<Hypothesis>& out = pool.empty() ? live : pool;
  std::stable_sort(out.begin(), out.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    return ranking_score(a, opt.length_norm) > ranking_score(b, opt.length_norm);
  });
  for (auto& h : out) h.state = {};
  return std::move(out);
}

inline std::vector<Hypothesis> beam_search(const Model& model, std::span<const TokenId> src, std::size_t beam,
                                           std::size_t max_len = 0) {
  return beam_search(model, src, BeamOptions{beam, max_len, false});
}

/// Argmax token per step until EOS or max_len; ties go to the lowest id.
inline Hypothesis greedy_decode(const Model& model, std::span<const TokenId> src, std::size_t max_len = 0) {
  if (src.empty()) throw InputError("greedy_decode: empty source sentence");
  if (!max_len) max_len = default_max_len(src.size());
  Tape tape(false);
  const Model::Context ctx = model.start(tape, src);
  Model::State state = model.initial_state(ctx);
  Hypothesis h;
  TokenId y = kBos;
  for (std::size_t t = 0; t < max_len; ++t) {
    Model::StepResult r = model.step(ctx, state, y);
    const std::vector<double> logp = log_softmax(r.logits.value().data);
    TokenId best = kPad;
    for (TokenId k = 0; k < logp.size(); ++k) {
      if (k == kPad) continue;
      if (best == kPad || logp[k] > logp[best]) best = k;
    }
    h.tokens.push_back(best);
    h.score += logp[best];
    h.step_logprobs.push_back(logp[best]);
    h.alignment.push_back(r.weights.value().data);
    state = r.next;
    y = best;
    if (best == kEos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Post-processing

/// Source word -> most frequently co-occurring target word.
class TranslationTable {
 public:
  struct Entry {
    std::string target;
    std::size_t count = 0;
  };

  std::optional<std::string> lookup(const std::string& src) const {
    auto it = entries_.find(src);
    if (it == entries_.end()) return std::nullopt;
    return it->second.target;
  }
  std::size_t size() const { return entries_.size(); }
  const std::unordered_map<std::string, Entry>& entries() const { return entries_; }
  void set(const std::string& src, Entry e) { entries_[src] = std::move(e); }

 private:
  std::unordered_map<std::string, Entry> entries_;
};

/// Counts sentence-level co-occurrence (each distinct source/target word pair
/// once per sentence) and keeps the argmax target per source word. Ties go to
/// the target word that is more frequent overall, then to the lower target
/// vocabulary id, then to the lexicographically smaller word. Reserved
/// tokens are ignored.
inline TranslationTable build_translation_table(const std::vector<SentencePair>& corpus, const Vocab& src_vocab,
                                                const Vocab& tgt_vocab) {
  (void)src_vocab;
  if (corpus.empty()) throw InputError("build_translation_table: empty corpus");
  std::unordered_map<std::string, std::unordered_map<std::string, std::size_t>> co;
  std::unordered_map<std::string, std::size_t> tgt_freq;
  for (const auto& p : corpus) {
    std::vector<std::string> s(p.src_tokens.begin(), p.src_tokens.end());
    std::vector<std::string> t(p.tgt_tokens.begin(), p.tgt_tokens.end());
    for (const auto& w : t)
      if (!is_reserved_token(w)) ++tgt_freq[w];
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    for (const auto& a : s) {
      if (is_reserved_token(a)) continue;
      auto& row = co[a];
      for (const auto& b : t)
        if (!is_reserved_token(b)) ++row[b];
    }
  }
  const auto id_of = [&](const std::string& w) {
    return tgt_vocab.contains(w) ? tgt_vocab.id(w) : std::numeric_limits<TokenId>::max();
  };
  TranslationTable table;
  for (const auto& [src, row] : co) {
    const std::string* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [tgt, count] : row) {
      bool take = false;
      if (!best || count > best_count) take = true;
      else if (count == best_count) {
        const std::size_t fa = tgt_freq[tgt], fb = tgt_freq[*best];
        if (fa != fb) take = fa > fb;
        else if (id_of(tgt) != id_of(*best)) take = id_of(tgt) < id_of(*best);
        else take = tgt < *best;
      }
      if (take) {
        best = &tgt;
        best_count = count;
      }
    }
    if (best) table.set(src, {*best, best_count});
  }
  return table;
}

/// Replaces each UNK with the translation of the source word holding that
/// step's highest attention weight (ties: lowest position). Untabled source
/// words are copied through.
inline Tokens replace_unk(const Tokens& hypothesis, const AlignmentMatrix& alignment, const Tokens& src_tokens,
                          const TranslationTable& table) {
  if (alignment.rows != hypothesis.size())
    throw ContractError("replace_unk: " + std::to_string(alignment.rows) + " alignment rows for " +
                        std::to_string(hypothesis.size()) + " tokens");
  Tokens out = hypothesis;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] != kUnkToken) continue;
    if (alignment.cols != src_tokens.size())
      throw ContractError("replace_unk: alignment has " + std::to_string(alignment.cols) + " columns for " +
                          std::to_string(src_tokens.size()) + " source tokens");
    const auto r = alignment.row(i);
    const std::size_t j = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    const std::string& s = src_tokens[j];
    out[i] = table.lookup(s).value_or(s);
  }
  return out;
}

}  // namespace nmtlab
