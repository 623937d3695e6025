#pragma once

// Experiment configuration: a flat key=value text format with dotted
// section prefixes. '#' starts a comment; blank lines are ignored; a later
// assignment to the same key wins. Unknown keys are errors.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nmtlab/corpus.hpp"
#include "nmtlab/error.hpp"
#include "nmtlab/model.hpp"
#include "nmtlab/training.hpp"

namespace nmtlab {

struct DataConfig {
  std::string train_src, train_tgt;
  std::string valid_src, valid_tgt;
  std::size_t src_vocab_size = 30000;  // cap incl. reserved entries
  std::size_t tgt_vocab_size = 30000;
};

struct DecodeConfig {
  std::size_t beam = 12;
  std::size_t max_len = 0;  // 0: 3 * |src| + 5
  bool length_norm = false;
  bool post_process = false;
};

struct OutputConfig {
  std::string checkpoint = "model.ckpt";
  std::string log = "train_log.jsonl";
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  SynthTaskSpec synth;
  std::size_t synth_pairs = 1000;
  DecodeConfig decode;
  OutputConfig output;
  std::uint64_t seed = 1;
};

inline std::string to_string(Permutation p) {
  switch (p) {
    case Permutation::identity: return "identity";
    case Permutation::reverse: return "reverse";
    case Permutation::swap_pairs: return "swap_pairs";
  }
  return "?";
}

inline std::string to_string(Fertility f) {
  switch (f) {
    case Fertility::identity: return "identity";
    case Fertility::double_class: return "double_class";
    case Fertility::drop_double: return "drop_double";
  }
  return "?";
}

inline std::string to_string(LengthFilter f) {
  switch (f) {
    case LengthFilter::either: return "either";
    case LengthFilter::source: return "source";
    case LengthFilter::target: return "target";
  }
  return "?";
}

namespace detail {

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return x;
}

template <class E, std::size_t N>
inline E parse_enum(const std::string& key, const std::string& v, const std::pair<const char*, E> (&options)[N]) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (v == name) return value;
    names += (names.empty() ? "" : "|") + std::string(name);
  }
  throw ConfigError("'" + key + "' expects one of " + names + ", got '" + v + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_real(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace detail

/// Applies one assignment. Throws ConfigError for unknown keys or bad values.
inline void apply_key(ExperimentConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_real;
  if (apply_model_key(c.model, key, v)) return;
  TrainConfig& t = c.train;
  if (key == "seed") c.seed = parse_count(key, v);
  else if (key == "train.lr") t.lr = parse_real(key, v);
  else if (key == "train.eps") t.eps = parse_real(key, v);
  else if (key == "train.dropout") t.dropout = parse_real(key, v);
  else if (key == "train.batch") t.batch = parse_count(key, v);
  else if (key == "train.max_epochs") t.max_epochs = parse_count(key, v);
  else if (key == "train.max_updates") t.max_updates = v == "none" ? std::nullopt : std::optional(parse_count(key, v));
  else if (key == "train.valid_every") t.valid_every = parse_count(key, v);
  else if (key == "train.patience") t.patience = parse_count(key, v);
  else if (key == "train.max_len") t.max_len = parse_count(key, v);
  else if (key == "train.length_filter")
    t.filter = detail::parse_enum(key, v, {std::pair{"either", LengthFilter::either}, std::pair{"source", LengthFilter::source},
                                           std::pair{"target", LengthFilter::target}});
  else if (key == "train.lambda_decay") t.lambda_decay = parse_real(key, v);
  else if (key == "train.lambda_left") t.lambda_left = parse_real(key, v);
  else if (key == "train.normalize_by_source") t.normalize_by_source = parse_flag(key, v);
  else if (key == "train.clip") t.clip = parse_real(key, v);
  else if (key == "train.valid_smoothing") t.valid_smoothing = parse_flag(key, v);
  else if (key == "data.train_src") c.data.train_src = v;
  else if (key == "data.train_tgt") c.data.train_tgt = v;
  else if (key == "data.valid_src") c.data.valid_src = v;
  else if (key == "data.valid_tgt") c.data.valid_tgt = v;
  else if (key == "data.src_vocab_size") c.data.src_vocab_size = parse_count(key, v);
  else if (key == "data.tgt_vocab_size") c.data.tgt_vocab_size = parse_count(key, v);
  else if (key == "data.synth.vocab_size") c.synth.vocab_size = parse_count(key, v);
  else if (key == "data.synth.min_len") c.synth.min_len = parse_count(key, v);
  else if (key == "data.synth.max_len") c.synth.max_len = parse_count(key, v);
  else if (key == "data.synth.permutation")
    c.synth.permutation = detail::parse_enum(key, v, {std::pair{"identity", Permutation::identity}, std::pair{"reverse", Permutation::reverse},
                                                      std::pair{"swap_pairs", Permutation::swap_pairs}});
  else if (key == "data.synth.fertility")
    c.synth.fertility = detail::parse_enum(key, v, {std::pair{"identity", Fertility::identity}, std::pair{"double_class", Fertility::double_class},
                                                    std::pair{"drop_double", Fertility::drop_double}});
  else if (key == "data.synth.seed") c.synth.seed = parse_count(key, v);
  else if (key == "data.synth.pairs") c.synth_pairs = parse_count(key, v);
  else if (key == "decode.beam") c.decode.beam = parse_count(key, v);
  else if (key == "decode.max_len") c.decode.max_len = parse_count(key, v);
  else if (key == "decode.length_norm") c.decode.length_norm = parse_flag(key, v);
  else if (key == "decode.post_process") c.decode.post_process = parse_flag(key, v);
  else if (key == "output.checkpoint") c.output.checkpoint = v;
  else if (key == "output.log") c.output.log = v;
  else throw ConfigError("unknown config key '" + key + "'");
}

/// Splits config text into (key, value) assignments in file order.
inline std::vector<std::pair<std::string, std::string>> parse_assignments(const std::string& text,
                                                                          const std::string& origin = "<config>") {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

/// "key=value" override as given on the command line.
inline std::pair<std::string, std::string> parse_override(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + s + "' is not key=value");
  return {detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1))};
}

inline void validate(const ExperimentConfig& c) {
  validate(c.train);
  if (c.decode.beam == 0) throw ConfigError("decode.beam must be at least 1");
  if (c.model.decoder == DecoderKind::conddec &&
      (c.model.attention == AttentionKind::recatt || c.model.attention == AttentionKind::rnnatt) && !c.model.experimental)
    throw ConfigError("conddec combined with " + std::string(to_string(c.model.attention)) +
                      " is experimental; set model.experimental=true to allow it");
}

inline ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {},
                                     const std::string& origin = "<config>") {
  ExperimentConfig c;
  for (const auto& [k, v] : parse_assignments(text, origin)) {
    try {
      apply_key(c, k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
  for (const auto& o : overrides) {
    const auto [k, v] = parse_override(o);
    apply_key(c, k, v);
  }
  c.train.seed = c.seed;
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), overrides, path);
}

/// Canonical text form: every key, sorted, one per line. Parsing it back
/// yields an equal configuration.
inline std::string config_text(const ExperimentConfig& c) {
  using detail::fmt_real;
  std::map<std::string, std::string> kv = to_key_values(c.model);
  const TrainConfig& t = c.train;
  kv["seed"] = std::to_string(c.seed);
  kv["train.lr"] = fmt_real(t.lr);
  kv["train.eps"] = fmt_real(t.eps);
  kv["train.dropout"] = fmt_real(t.dropout);
  kv["train.batch"] = std::to_string(t.batch);
  kv["train.max_epochs"] = std::to_string(t.max_epochs);
  kv["train.max_updates"] = t.max_updates ? std::to_string(*t.max_updates) : "none";
  kv["train.valid_every"] = std::to_string(t.valid_every);
  kv["train.patience"] = std::to_string(t.patience);
  kv["train.max_len"] = std::to_string(t.max_len);
  kv["train.length_filter"] = to_string(t.filter);
  kv["train.lambda_decay"] = fmt_real(t.lambda_decay);
  kv["train.lambda_left"] = fmt_real(t.lambda_left);
  kv["train.normalize_by_source"] = t.normalize_by_source ? "true" : "false";
  kv["train.clip"] = fmt_real(t.clip);
  kv["train.valid_smoothing"] = t.valid_smoothing ? "true" : "false";
  kv["data.train_src"] = c.data.train_src;
  kv["data.train_tgt"] = c.data.train_tgt;
  kv["data.valid_src"] = c.data.valid_src;
  kv["data.valid_tgt"] = c.data.valid_tgt;
  kv["data.src_vocab_size"] = std::to_string(c.data.src_vocab_size);
  kv["data.tgt_vocab_size"] = std::to_string(c.data.tgt_vocab_size);
  kv["data.synth.vocab_size"] = std::to_string(c.synth.vocab_size);
  kv["data.synth.min_len"] = std::to_string(c.synth.min_len);
  kv["data.synth.max_len"] = std::to_string(c.synth.max_len);
  kv["data.synth.permutation"] = to_string(c.synth.permutation);
  kv["data.synth.fertility"] = to_string(c.synth.fertility);
  kv["data.synth.seed"] = std::to_string(c.synth.seed);
  kv["data.synth.pairs"] = std::to_string(c.synth_pairs);
  kv["decode.beam"] = std::to_string(c.decode.beam);
  kv["decode.max_len"] = std::to_string(c.decode.max_len);
  kv["decode.length_norm"] = c.decode.length_norm ? "true" : "false";
  kv["decode.post_process"] = c.decode.post_process ? "true" : "false";
  kv["output.checkpoint"] = c.output.checkpoint;
  kv["output.log"] = c.output.log;
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace nmtlab
