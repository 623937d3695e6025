#pragma once

// BLEU, alignment pathology diagnostics and alignment export.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nmtlab/attention.hpp"
#include "nmtlab/corpus.hpp"
#include "nmtlab/error.hpp"

namespace nmtlab {

struct BleuReport {
  double score = 0.0;
  std::vector<double> precisions;  // modified precision for n = 1..max_n
  std::vector<std::size_t> matches, totals;
  double brevity_penalty = 1.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
  bool smoothed = false;
};

namespace detail {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NgramCounts ngrams(const Tokens& s, std::size_t n) {
  NgramCounts c;
  if (s.size() < n) return c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Tokens(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

}  // namespace detail

/// Corpus-level BLEU. Clipping uses the max count over references; the
/// effective reference length per sentence is the closest one (shorter wins
/// ties). With smoothing, n > 1 precisions use (m + 1) / (t + 1).
inline BleuReport bleu(const std::vector<Tokens>& hyps, const std::vector<std::vector<Tokens>>& refs,
                       std::size_t max_n = 4, bool smoothing = false) {
  if (hyps.empty()) throw InputError("bleu: empty hypothesis set");
  if (hyps.size() != refs.size())
    throw InputError("bleu: " + std::to_string(hyps.size()) + " hypotheses but " + std::to_string(refs.size()) + " references");
  if (max_n == 0) throw InputError("bleu: max_n must be positive");
  BleuReport r;
  r.smoothed = smoothing;
  r.matches.assign(max_n, 0);
  r.totals.assign(max_n, 0);
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const Tokens& h = hyps[s];
    if (refs[s].empty()) throw InputError("bleu: sentence " + std::to_string(s) + " has no reference");
    r.hyp_length += h.size();
    std::size_t best = refs[s].front().size();
    for (const auto& ref : refs[s]) {
      const auto d = [&](std::size_t len) { return len > h.size() ? len - h.size() : h.size() - len; };
      if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) best = ref.size();
    }
    r.ref_length += best;
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto hc = detail::ngrams(h, n);
      detail::NgramCounts maxref;
      for (const auto& ref : refs[s])
        for (const auto& [g, c] : detail::ngrams(ref, n)) maxref[g] = std::max(maxref[g], c);
      for (const auto& [g, c] : hc) {
        auto it = maxref.find(g);
        r.matches[n - 1] += std::min(c, it == maxref.end() ? 0 : it->second);
        r.totals[n - 1] += c;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < max_n; ++n) {
    double p;
    if (smoothing && n > 0) p = (r.matches[n] + 1.0) / (r.totals[n] + 1.0);
    else p = r.totals[n] ? static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]) : 0.0;
    r.precisions.push_back(p);
    if (p <= 0.0) zero = true;
    else log_sum += std::log(p);
  }
  if (r.hyp_length == 0) r.brevity_penalty = 0.0;
  else if (r.hyp_length < r.ref_length)
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_length) / static_cast<double>(r.hyp_length));
  r.score = zero ? 0.0 : r.brevity_penalty * std::exp(log_sum / static_cast<double>(max_n));
  return r;
}

inline BleuReport bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, std::size_t max_n = 4,
                       bool smoothing = false) {
  std::vector<std::vector<Tokens>> multi;
  multi.reserve(refs.size());
  for (const auto& r : refs) multi.push_back({r});
  return bleu(hyps, multi, max_n, smoothing);
}

// ---------------------------------------------------------------------------
// Diagnostics. Positions are 1-based (target steps and source columns).

struct RepetitionRun {
  std::size_t start = 0;   // first target step of the run
  std::size_t column = 0;  // shared argmax source position
  std::size_t length = 0;
  bool operator==(const RepetitionRun&) const = default;
};

struct UncoveredPosition {
  std::size_t column = 0;
  double mass = 0.0;
};

struct DiagnosticReport {
  std::vector<RepetitionRun> runs;
  std::vector<UncoveredPosition> uncovered;
  double total_mass = 0.0;  // equals the row count for well-formed matrices
  bool repetition_flag() const { return !runs.empty(); }
  bool coverage_flag() const { return !uncovered.empty(); }
};

/// Lowest column wins ties.
inline std::size_t row_argmax(const AlignmentMatrix& a, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < a.cols; ++c)
    if (a.at(r, c) > a.at(r, best)) best = c;
  return best;
}

/// Maximal runs of consecutive rows sharing an argmax column.
inline std::vector<RepetitionRun> diagnose_repetition(const AlignmentMatrix& a, std::size_t run_threshold = 2) {
  std::vector<RepetitionRun> runs;
  if (a.rows == 0 || a.cols == 0) return runs;
  std::size_t start = 0, col = row_argmax(a, 0);
  for (std::size_t r = 1; r <= a.rows; ++r) {
    const bool same = r < a.rows && row_argmax(a, r) == col;
    if (same) continue;
    if (r - start >= run_threshold) runs.push_back({start + 1, col + 1, r - start});
    if (r < a.rows) {
      start = r;
      col = row_argmax(a, r);
    }
  }
  return runs;
}

/// Source positions whose column mass is below the threshold.
inline std::vector<UncoveredPosition> diagnose_coverage(const AlignmentMatrix& a, double mass_threshold = 0.2) {
  std::vector<UncoveredPosition> out;
  for (std::size_t c = 0; c < a.cols; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < a.rows; ++r) m += a.at(r, c);
    if (m < mass_threshold) out.push_back({c + 1, m});
  }
  return out;
}

inline DiagnosticReport diagnose(const AlignmentMatrix& a, std::size_t run_threshold = 2, double mass_threshold = 0.2) {
  DiagnosticReport d;
  d.runs = diagnose_repetition(a, run_threshold);
  d.uncovered = diagnose_coverage(a, mass_threshold);
  for (double x : a.data) d.total_mass += x;
  return d;
}

// ---------------------------------------------------------------------------
// Export

enum class AlignmentFormat { csv, pgm };

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

}  // namespace detail

/// CSV: a header of source tokens (leading empty cell), then one row per
/// target token with weights at 6 decimals.
inline std::string alignment_csv(const AlignmentMatrix& a, const Tokens& src, const Tokens& tgt) {
  if (src.size() != a.cols || tgt.size() != a.rows)
    throw ContractError("export_alignment: matrix is " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                        " but the pair has " + std::to_string(tgt.size()) + " target and " +
                        std::to_string(src.size()) + " source tokens");
  std::string out;
  for (const auto& s : src) out += "," + detail::csv_field(s);
  out += "\n";
  char buf[32];
  for (std::size_t r = 0; r < a.rows; ++r) {
    out += detail::csv_field(tgt[r]);
    for (std::size_t c = 0; c < a.cols; ++c) {
      std::snprintf(buf, sizeof buf, ",%.6f", a.at(r, c));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

/// Binary PGM (P5), width = source length; weight 1 maps to 0 (darkest).
inline std::string alignment_pgm(const AlignmentMatrix& a) {
  std::string out = "P5\n" + std::to_string(a.cols) + " " + std::to_string(a.rows) + "\n255\n";
  for (double w : a.data) {
    const double v = std::clamp(std::round(255.0 * (1.0 - w)), 0.0, 255.0);
    out += static_cast<char>(static_cast<unsigned char>(v));
  }
  return out;
}

inline void export_alignment(const AlignmentMatrix& a, const Tokens& src, const Tokens& tgt, const std::string& path,
                             AlignmentFormat format) {
  const std::string body = format == AlignmentFormat::csv ? alignment_csv(a, src, tgt) : alignment_pgm(a);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

struct AlignmentSidecar {
  Tokens src, tgt;
  AlignmentMatrix matrix;
};

inline AlignmentSidecar parse_alignment_csv(const std::string& text, const std::string& origin = "<csv>") {
  std::istringstream in(text);
  std::string line;
  AlignmentSidecar s;
  if (!std::getline(in, line)) throw InputError(origin + ": empty alignment file");
  auto header = detail::csv_split(line);
  if (header.empty() || !header[0].empty()) throw InputError(origin + ": header must start with an empty cell");
  s.src.assign(header.begin() + 1, header.end());
  s.matrix.cols = s.src.size();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = detail::csv_split(line);
    if (cells.size() != s.matrix.cols + 1)
      throw InputError(origin + ":" + std::to_string(lineno) + ": expected " + std::to_string(s.matrix.cols + 1) + " cells");
    s.tgt.push_back(cells[0]);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[c], &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != cells[c].size()) throw InputError(origin + ":" + std::to_string(lineno) + ": bad weight '" + cells[c] + "'");
      s.matrix.data.push_back(v);
    }
    ++s.matrix.rows;
  }
  return s;
}

inline AlignmentSidecar read_alignment_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_alignment_csv(ss.str(), path);
}

}  // namespace nmtlab
