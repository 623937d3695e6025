#pragma once

// Vocabulary, parallel-corpus handling, synthetic task generation and
// length-sorted batching.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nmtlab/error.hpp"
#include "nmtlab/rng.hpp"

namespace nmtlab {

using TokenId = std::uint32_t;
using Tokens = std::vector<std::string>;
using Ids = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kNumReserved = 4;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kUnkToken = "<unk>";

inline bool is_reserved_token(std::string_view t) {
  return t == kPadToken || t == kBosToken || t == kEosToken || t == kUnkToken;
}

inline Tokens split_whitespace(std::string_view line) {
  Tokens out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join_tokens(const Tokens& t) {
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) s += ' ';
    s += t[i];
  }
  return s;
}

class Vocab {
 public:
  Vocab() : tokens_{std::string(kPadToken), std::string(kBosToken), std::string(kEosToken), std::string(kUnkToken)} {
    for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<TokenId>(i));
  }

  /// Rebuilds a vocabulary from its id-ordered token list (reserved first).
  static Vocab from_tokens(const Tokens& tokens) {
    Vocab v;
    if (tokens.size() < kNumReserved) throw InputError("vocabulary lacks reserved entries");
    for (std::size_t i = 0; i < kNumReserved; ++i)
      if (tokens[i] != v.tokens_[i]) throw InputError("vocabulary reserved entry " + std::to_string(i) + " is '" + tokens[i] + "'");
    for (std::size_t i = kNumReserved; i < tokens.size(); ++i) v.append(tokens[i]);
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const Tokens& tokens() const { return tokens_; }
  bool contains(std::string_view t) const { return ids_.count(std::string(t)) > 0; }

  TokenId id(std::string_view t) const {
    auto it = ids_.find(std::string(t));
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(tokens_.size()));
    return tokens_[id];
  }

  /// FNV-1a over the id-ordered token list.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tokens_) {
      for (unsigned char c : t) {
        h ^= c;
        h *= 1099511628211ULL;
      }
      h ^= 0xffu;
      h *= 1099511628211ULL;
    }
    return h;
  }

  void append(const std::string& t) {
    if (ids_.count(t)) throw InputError("duplicate vocabulary entry '" + t + "'");
    ids_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(t);
  }

 private:
  Tokens tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct VocabBuild {
  Vocab vocab;
  double coverage = 0.0;  // fraction of running tokens that are in-vocabulary
};

/// Keeps the max_size - 4 most frequent tokens; ties go to first occurrence.
inline VocabBuild build_vocab(const std::vector<Tokens>& corpus, std::size_t max_size) {
  if (corpus.empty()) throw InputError("build_vocab: empty corpus");
  if (max_size < kNumReserved) throw InputError("build_vocab: max_size must be at least 4");
  struct Entry {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Entry> counts;
  std::vector<std::string> order;
  std::size_t total = 0;
  for (const auto& sent : corpus)
    for (const auto& tok : sent) {
      ++total;
      if (is_reserved_token(tok)) continue;
      auto [it, inserted] = counts.try_emplace(tok, Entry{0, order.size()});
      if (inserted) order.push_back(tok);
      ++it->second.count;
    }
  if (total == 0) throw InputError("build_vocab: corpus has no tokens");
  std::vector<const std::string*> ranked;
  ranked.reserve(order.size());
  for (const auto& t : order) ranked.push_back(&t);
  std::stable_sort(ranked.begin(), ranked.end(), [&](const std::string* a, const std::string* b) {
    return counts.at(*a).count > counts.at(*b).count;
  });
  VocabBuild out;
  const std::size_t keep = std::min(ranked.size(), max_size - kNumReserved);
  std::size_t kept_mass = 0;
  for (std::size_t i = 0; i < keep; ++i) {
    out.vocab.append(*ranked[i]);
    kept_mass += counts.at(*ranked[i]).count;
  }
  out.coverage = static_cast<double>(kept_mass) / static_cast<double>(total);
  return out;
}

/// Out-of-vocabulary tokens map to UNK. With markers, BOS is prepended and
/// EOS appended (target side only).
inline Ids encode_sentence(const Tokens& tokens, const Vocab& vocab, bool add_markers = false) {
  Ids out;
  out.reserve(tokens.size() + 2);
  if (add_markers) out.push_back(kBos);
  for (const auto& t : tokens) out.push_back(vocab.id(t));
  if (add_markers) out.push_back(kEos);
  return out;
}

/// Inverse of encode_sentence; PAD/BOS/EOS markers are dropped.
inline Tokens decode_sentence(const Ids& ids, const Vocab& vocab) {
  Tokens out;
  for (TokenId id : ids) {
    const std::string& t = vocab.token(id);
    if (id == kPad || id == kBos || id == kEos) continue;
    out.push_back(t);
  }
  return out;
}

struct SentencePair {
  Tokens src_tokens;
  Tokens tgt_tokens;
  Ids src_ids;
  Ids tgt_ids;  // no markers
};

inline SentencePair make_pair(Tokens src, Tokens tgt, const Vocab& src_vocab, const Vocab& tgt_vocab) {
  if (src.empty() || tgt.empty()) throw InputError("sentence pair with an empty side");
  SentencePair p;
  p.src_ids = encode_sentence(src, src_vocab);
  p.tgt_ids = encode_sentence(tgt, tgt_vocab);
  p.src_tokens = std::move(src);
  p.tgt_tokens = std::move(tgt);
  return p;
}

struct RawParallel {
  std::vector<Tokens> src;
  std::vector<Tokens> tgt;
};

inline std::vector<Tokens> read_token_lines(const std::string& path, bool allow_empty = false) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<Tokens> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    Tokens t = split_whitespace(line);
    if (t.empty() && !allow_empty) throw InputError(path + ":" + std::to_string(lineno) + ": empty sentence");
    out.push_back(std::move(t));
  }
  return out;
}

/// Two aligned files, one whitespace-tokenized sentence per line.
inline RawParallel read_parallel(const std::string& src_path, const std::string& tgt_path) {
  RawParallel r{read_token_lines(src_path), read_token_lines(tgt_path)};
  if (r.src.size() != r.tgt.size())
    throw InputError("parallel files differ in line count: '" + src_path + "' has " + std::to_string(r.src.size()) +
                     ", '" + tgt_path + "' has " + std::to_string(r.tgt.size()));
  return r;
}

inline void write_token_lines(const std::string& path, const std::vector<Tokens>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (const auto& l : lines) out << join_tokens(l) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::vector<SentencePair> make_pairs(const RawParallel& raw, const Vocab& src_vocab, const Vocab& tgt_vocab) {
  std::vector<SentencePair> out;
  out.reserve(raw.src.size());
  for (std::size_t i = 0; i < raw.src.size(); ++i) out.push_back(make_pair(raw.src[i], raw.tgt[i], src_vocab, tgt_vocab));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class Permutation { identity, reverse, swap_pairs };
enum class Fertility { identity, double_class, drop_double };

struct SynthTaskSpec {
  std::size_t vocab_size = 20;
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  Permutation permutation = Permutation::reverse;
  Fertility fertility = Fertility::identity;
  std::uint64_t seed = 1;
};

inline std::string synth_token(std::size_t i) { return "w" + std::to_string(i); }

/// Index of a synthetic token "w<i>".
inline std::size_t synth_index(const std::string& t) { return static_cast<std::size_t>(std::stoul(t.substr(1))); }

/// Copies produced by one source token: class i%3==0 doubles; under
/// drop_double class i%3==1 is deleted.
inline std::size_t fertility_of(Fertility f, std::size_t index) {
  switch (f) {
    case Fertility::identity: return 1;
    case Fertility::double_class: return index % 3 == 0 ? 2 : 1;
    case Fertility::drop_double: return index % 3 == 0 ? 2 : (index % 3 == 1 ? 0 : 1);
  }
  return 1;
}

/// Target = fertility(permutation(source)).
inline Tokens apply_synth_rules(const Tokens& src, Permutation p, Fertility f) {
  Tokens permuted = src;
  switch (p) {
    case Permutation::identity: break;
    case Permutation::reverse: std::reverse(permuted.begin(), permuted.end()); break;
    case Permutation::swap_pairs:
      for (std::size_t i = 0; i + 1 < permuted.size(); i += 2) std::swap(permuted[i], permuted[i + 1]);
      break;
  }
  Tokens out;
  for (const auto& t : permuted)
    for (std::size_t k = fertility_of(f, synth_index(t)); k > 0; --k) out.push_back(t);
  return out;
}

struct TokenPair {
  Tokens src;
  Tokens tgt;
};

/// Deterministic in spec.seed. Sources whose target would be empty are redrawn.
inline std::vector<TokenPair> gen_synthetic(const SynthTaskSpec& spec, std::size_t n) {
  if (spec.max_len < spec.min_len) throw InputError("gen_synthetic: max_len < min_len");
  if (spec.min_len == 0) throw InputError("gen_synthetic: min_len must be positive");
  if (spec.vocab_size == 0) throw InputError("gen_synthetic: vocab_size must be positive");
  if (n == 0) throw InputError("gen_synthetic: n must be positive");
  if (spec.fertility == Fertility::drop_double && spec.vocab_size < 2)
    throw InputError("gen_synthetic: drop_double needs vocab_size >= 2");
  Rng rng(spec.seed);
  std::vector<TokenPair> out;
  out.reserve(n);
  while (out.size() < n) {
    const std::size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    Tokens src;
    for (std::size_t i = 0; i < len; ++i) src.push_back(synth_token(rng.below(spec.vocab_size)));
    Tokens tgt = apply_synth_rules(src, spec.permutation, spec.fertility);
    if (tgt.empty()) continue;
    out.push_back({std::move(src), std::move(tgt)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

enum class LengthFilter { either, source, target };

struct Batch {
  std::size_t size = 0;
  std::size_t src_width = 0;
  std::size_t tgt_width = 0;
  std::vector<TokenId> src;  // size x src_width, PAD-filled
  std::vector<TokenId> tgt;  // size x tgt_width, PAD-filled
  std::vector<std::size_t> src_lengths;
  std::vector<std::size_t> tgt_lengths;
  std::vector<std::uint8_t> src_mask;  // 1 on real cells
  std::vector<std::uint8_t> tgt_mask;
  std::vector<std::size_t> pair_index;  // into the input pair list

  Ids src_row(std::size_t b) const {
    return Ids(src.begin() + static_cast<std::ptrdiff_t>(b * src_width),
               src.begin() + static_cast<std::ptrdiff_t>(b * src_width + src_lengths[b]));
  }
  Ids tgt_row(std::size_t b) const {
    return Ids(tgt.begin() + static_cast<std::ptrdiff_t>(b * tgt_width),
               tgt.begin() + static_cast<std::ptrdiff_t>(b * tgt_width + tgt_lengths[b]));
  }
};

inline bool passes_length_filter(const SentencePair& p, std::size_t max_len, LengthFilter f) {
  switch (f) {
    case LengthFilter::either: return p.src_ids.size() <= max_len && p.tgt_ids.size() <= max_len;
    case LengthFilter::source: return p.src_ids.size() <= max_len;
    case LengthFilter::target: return p.tgt_ids.size() <= max_len;
  }
  return true;
}

/// Drops over-long pairs, shuffles, sorts each window of 12 * batch_size
/// pairs by length, cuts it into batches and shuffles the batch order.
inline std::vector<Batch> make_batches(const std::vector<SentencePair>& pairs, std::size_t batch_size, std::size_t max_len,
                                       std::uint64_t shuffle_seed, LengthFilter filter = LengthFilter::either,
                                       std::size_t sort_window_batches = 12) {
  if (batch_size == 0) throw InputError("make_batches: batch_size must be positive");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (passes_length_filter(pairs[i], max_len, filter)) idx.push_back(i);
  if (idx.empty()) throw InputError("make_batches: every pair was filtered out");
  Rng rng(shuffle_seed);
  rng.shuffle(idx.begin(), idx.end());
  const std::size_t window = std::max<std::size_t>(1, sort_window_batches) * batch_size;
  std::vector<Batch> batches;
  for (std::size_t w = 0; w < idx.size(); w += window) {
    auto first = idx.begin() + static_cast<std::ptrdiff_t>(w);
    auto last = idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), w + window));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
      const auto& pa = pairs[a];
      const auto& pb = pairs[b];
      if (pa.src_ids.size() != pb.src_ids.size()) return pa.src_ids.size() < pb.src_ids.size();
      return pa.tgt_ids.size() < pb.tgt_ids.size();
    });
    for (auto it = first; it < last; it += static_cast<std::ptrdiff_t>(std::min<std::size_t>(batch_size, static_cast<std::size_t>(last - it)))) {
      const auto end = it + static_cast<std::ptrdiff_t>(std::min<std::size_t>(batch_size, static_cast<std::size_t>(last - it)));
      Batch b;
      for (auto k = it; k < end; ++k) {
        b.pair_index.push_back(*k);
        b.src_lengths.push_back(pairs[*k].src_ids.size());
        b.tgt_lengths.push_back(pairs[*k].tgt_ids.size());
      }
      b.size = b.pair_index.size();
      b.src_width = *std::max_element(b.src_lengths.begin(), b.src_lengths.end());
      b.tgt_width = *std::max_element(b.tgt_lengths.begin(), b.tgt_lengths.end());
      b.src.assign(b.size * b.src_width, kPad);
      b.tgt.assign(b.size * b.tgt_width, kPad);
      b.src_mask.assign(b.size * b.src_width, 0);
      b.tgt_mask.assign(b.size * b.tgt_width, 0);
      for (std::size_t r = 0; r < b.size; ++r) {
        const auto& p = pairs[b.pair_index[r]];
        for (std::size_t c = 0; c < p.src_ids.size(); ++c) {
          b.src[r * b.src_width + c] = p.src_ids[c];
          b.src_mask[r * b.src_width + c] = 1;
        }
        for (std::size_t c = 0; c < p.tgt_ids.size(); ++c) {
          b.tgt[r * b.tgt_width + c] = p.tgt_ids[c];
          b.tgt_mask[r * b.tgt_width + c] = 1;
        }
      }
      batches.push_back(std::move(b));
    }
  }
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

}  // namespace nmtlab
