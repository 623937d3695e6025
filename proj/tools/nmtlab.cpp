// nmtlab command-line driver: gen-data | train | translate | evaluate |
// diagnose | gradcheck.
//
// Exit codes: 0 success, 1 gradient check failed, 2 usage, 3 config,
// 4 input, 5 compatibility, 6 io, 7 internal error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nmtlab/checkpoint.hpp"
#include "nmtlab/config.hpp"
#include "nmtlab/corpus.hpp"
#include "nmtlab/decode.hpp"
#include "nmtlab/eval.hpp"
#include "nmtlab/model.hpp"
#include "nmtlab/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace nmtlab;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kConfig = 3, kInput = 4, kCompat = 5, kIo = 6, kInternal = 7 };

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path + "'");
}

ExperimentConfig read_config(const std::string& path, const std::vector<std::string>& overrides) {
  if (path.empty()) return parse_config("", overrides, "<defaults>");
  return load_config(path, overrides);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string config, out;
  std::vector<std::string> overrides;
};

int cmd_gen_data(const GenDataArgs& a) {
  ExperimentConfig c = read_config(a.config, a.overrides);
  const std::size_t n = c.synth_pairs;
  if (n < 3) throw ConfigError("data.synth.pairs must be at least 3 for a train/valid/test split");
  auto pairs = gen_synthetic(c.synth, n);
  const std::size_t n_train = n * 8 / 10, n_valid = n / 10;
  const std::size_t bounds[] = {0, n_train, n_train + n_valid, n};
  const char* names[] = {"train", "valid", "test"};
  fs::create_directories(a.out);
  for (int s = 0; s < 3; ++s) {
    std::vector<Tokens> src, tgt;
    for (std::size_t i = bounds[s]; i < bounds[s + 1]; ++i) {
      src.push_back(pairs[i].src);
      tgt.push_back(pairs[i].tgt);
    }
    write_token_lines((fs::path(a.out) / (std::string(names[s]) + ".src")).string(), src);
    write_token_lines((fs::path(a.out) / (std::string(names[s]) + ".tgt")).string(), tgt);
    std::cout << names[s] << " " << src.size() << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a) {
  ExperimentConfig c = read_config(a.config, a.overrides);
  if (c.data.train_src.empty() || c.data.train_tgt.empty())
    throw ConfigError("data.train_src and data.train_tgt are required for training");
  const RawParallel raw = read_parallel(c.data.train_src, c.data.train_tgt);
  if (raw.src.empty()) throw InputError("training corpus is empty");
  const Vocab src_vocab = build_vocab(raw.src, c.data.src_vocab_size).vocab;
  const Vocab tgt_vocab = build_vocab(raw.tgt, c.data.tgt_vocab_size).vocab;
  const auto train_pairs = make_pairs(raw, src_vocab, tgt_vocab);
  std::vector<SentencePair> valid_pairs;
  if (!c.data.valid_src.empty() || !c.data.valid_tgt.empty())
    valid_pairs = make_pairs(read_parallel(c.data.valid_src, c.data.valid_tgt), src_vocab, tgt_vocab);

  c.model.src_vocab = src_vocab.size();
  c.model.tgt_vocab = tgt_vocab.size();
  Model model(c.model, c.seed);

  Checkpoint ck;
  ck.config_text = config_text(c);
  ck.model = c.model;
  ck.src_vocab = src_vocab;
  ck.tgt_vocab = tgt_vocab;

  std::ofstream log(c.output.log, std::ios::binary);
  if (!log) throw IoError("cannot write log '" + c.output.log + "'");
  const auto t0 = std::chrono::steady_clock::now();
  TrainHooks hooks;
  hooks.on_record = [&](const HistoryRecord& h, bool improved) {
    json j;
    j["update"] = h.update;
    j["epoch"] = h.epoch;
    j["train_loss"] = h.train_loss;
    j["valid_bleu"] = h.valid_bleu;
    j["best"] = improved;
    j["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << j.dump() << "\n" << std::flush;
    std::cerr << "update " << h.update << " epoch " << h.epoch << " loss " << h.train_loss << " valid_bleu "
              << h.valid_bleu << (improved ? " *" : "") << "\n";
  };
  hooks.on_best = [&](const ParamStore& best, const TrainResult& r) {
    ck.params = best;
    ck.optimizer = r.optimizer;
    ck.history = r.history;
    save_checkpoint(ck, c.output.checkpoint);
  };
  TrainResult r = train(model, tgt_vocab, train_pairs, valid_pairs, c.train, hooks);
  ck.params = r.best;
  ck.optimizer = r.optimizer;
  ck.rng_state = r.rng_state;
  ck.history = r.history;
  save_checkpoint(ck, c.output.checkpoint);
  std::cout << "updates " << r.optimizer.updates << "\nrecords " << r.history.size() << "\nskipped "
            << r.optimizer.skipped << "\ncheckpoint " << c.output.checkpoint << "\n";
  if (r.best_record) std::cout << "best_valid_bleu " << r.history[*r.best_record].valid_bleu << "\n";
  if (r.diverged) {
    std::cerr << "training diverged (non-finite loss); the last good parameters were kept\n";
    return kInternal;
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct TranslateArgs {
  std::string checkpoint, input, output, align_dir, align_format = "csv", corpus_src, corpus_tgt;
  std::size_t beam = 12, max_len = 0;
  bool length_norm = false, post_process = false, greedy = false;
};

int cmd_translate(const TranslateArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Model model = model_from_checkpoint(ck);
  const auto lines = read_token_lines(a.input, true);
  std::optional<TranslationTable> table;
  if (a.post_process) {
    if (a.corpus_src.empty() || a.corpus_tgt.empty())
      throw ConfigError("--post-process needs --corpus-src and --corpus-tgt to build the translation table");
    table = build_translation_table(make_pairs(read_parallel(a.corpus_src, a.corpus_tgt), ck.src_vocab, ck.tgt_vocab),
                                    ck.src_vocab, ck.tgt_vocab);
  }
  if (!a.align_dir.empty()) fs::create_directories(a.align_dir);
  std::ofstream out(a.output, std::ios::binary);
  if (!out) throw IoError("cannot write '" + a.output + "'");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) {
      out << "\n";
      continue;
    }
    const Ids src = encode_sentence(lines[i], ck.src_vocab);
    const Hypothesis h = a.greedy ? greedy_decode(model, src, a.max_len)
                                  : beam_search(model, src, BeamOptions{a.beam, a.max_len, a.length_norm}).front();
    Tokens words;
    for (TokenId id : h.content()) words.push_back(ck.tgt_vocab.token(id));
    const AlignmentMatrix align = h.content_alignment();
    if (table) words = replace_unk(words, align, lines[i], *table);
    out << join_tokens(words) << "\n";
    if (!a.align_dir.empty() && !words.empty()) {
      std::ostringstream stem;
      stem << "sent" << std::setw(6) << std::setfill('0') << (i + 1);
      const fs::path base = fs::path(a.align_dir) / stem.str();
      if (a.align_format == "csv" || a.align_format == "both")
        export_alignment(align, lines[i], words, base.string() + ".csv", AlignmentFormat::csv);
      if (a.align_format == "pgm" || a.align_format == "both")
        export_alignment(align, lines[i], words, base.string() + ".pgm", AlignmentFormat::pgm);
    }
  }
  if (!out) throw IoError("write failed for '" + a.output + "'");
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string hyp, json_out;
  std::vector<std::string> refs;
  std::size_t max_n = 4;
  bool smooth = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto hyps = read_token_lines(a.hyp, true);
  std::vector<std::vector<Tokens>> refs(hyps.size());
  for (const auto& path : a.refs) {
    const auto r = read_token_lines(path, true);
    if (r.size() != hyps.size())
      throw InputError("'" + path + "' has " + std::to_string(r.size()) + " lines but '" + a.hyp + "' has " +
                       std::to_string(hyps.size()));
    for (std::size_t i = 0; i < r.size(); ++i) refs[i].push_back(r[i]);
  }
  const BleuReport rep = bleu(hyps, refs, a.max_n, a.smooth);
  std::cout << std::fixed << std::setprecision(6) << "BLEU " << rep.score << "\n";
  for (std::size_t n = 0; n < rep.precisions.size(); ++n)
    std::cout << "p" << n + 1 << " " << rep.precisions[n] << " (" << rep.matches[n] << "/" << rep.totals[n] << ")\n";
  std::cout << "BP " << rep.brevity_penalty << "\nhyp_len " << rep.hyp_length << "\nref_len " << rep.ref_length << "\n";
  json j;
  j["bleu"] = rep.score;
  j["precisions"] = rep.precisions;
  j["matches"] = rep.matches;
  j["totals"] = rep.totals;
  j["brevity_penalty"] = rep.brevity_penalty;
  j["hyp_length"] = rep.hyp_length;
  j["ref_length"] = rep.ref_length;
  j["smoothing"] = rep.smoothed;
  if (!a.json_out.empty()) write_text(a.json_out, j.dump(2) + "\n");
  return kOk;
}

// ---------------------------------------------------------------------------

struct DiagnoseArgs {
  std::string dir, out;
  std::size_t run_threshold = 2;
  double mass_threshold = 0.2;
};

int cmd_diagnose(const DiagnoseArgs& a) {
  if (!fs::is_directory(a.dir)) throw IoError("'" + a.dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json report;
  report["run_threshold"] = a.run_threshold;
  report["mass_threshold"] = a.mass_threshold;
  report["files"] = json::array();
  std::size_t rep_flags = 0, cov_flags = 0;
  for (const auto& f : files) {
    const AlignmentSidecar s = read_alignment_csv(f.string());
    const DiagnosticReport d = diagnose(s.matrix, a.run_threshold, a.mass_threshold);
    json jf;
    jf["file"] = f.filename().string();
    jf["rows"] = s.matrix.rows;
    jf["cols"] = s.matrix.cols;
    jf["runs"] = json::array();
    for (const auto& r : d.runs) jf["runs"].push_back({{"start", r.start}, {"column", r.column}, {"length", r.length}});
    jf["uncovered"] = json::array();
    for (const auto& u : d.uncovered) jf["uncovered"].push_back({{"column", u.column}, {"mass", u.mass}});
    jf["repetition"] = d.repetition_flag();
    jf["coverage"] = d.coverage_flag();
    report["files"].push_back(jf);
    rep_flags += d.repetition_flag();
    cov_flags += d.coverage_flag();
    std::cout << f.filename().string() << ": " << d.runs.size() << " repetition run(s), " << d.uncovered.size()
              << " uncovered position(s)\n";
  }
  report["summary"] = {{"files", files.size()}, {"repetition_flagged", rep_flags}, {"coverage_flagged", cov_flags}};
  std::cout << "files " << files.size() << "\nrepetition_flagged " << rep_flags << "\ncoverage_flagged " << cov_flags
            << "\n";
  if (!a.out.empty()) write_text(a.out, report.dump(2) + "\n");
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string config;
  std::vector<std::string> overrides, frozen;
  double tolerance = 1e-4;
  std::size_t sentences = 2;
};

// Tiny defaults so finite differences stay cheap: 11-entry vocabularies,
// sentences of at most 5 tokens.
const std::vector<std::string> kGradcheckDefaults = {
    "model.hidden=8",      "model.embed=6",       "model.condition=5",   "model.features=4",
    "data.synth.vocab_size=7", "data.synth.min_len=2", "data.synth.max_len=5", "data.synth.permutation=reverse"};

int cmd_gradcheck(const GradcheckArgs& a) {
  std::string text;
  if (!a.config.empty()) {
    std::ifstream f(a.config);
    if (!f) throw IoError("cannot open config '" + a.config + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }
  // Defaults first, then the file, then explicit overrides.
  ExperimentConfig c;
  for (const auto& d : kGradcheckDefaults) {
    const auto [k, v] = parse_override(d);
    apply_key(c, k, v);
  }
  for (const auto& [k, v] : parse_assignments(text, a.config.empty() ? "<defaults>" : a.config)) apply_key(c, k, v);
  for (const auto& o : a.overrides) {
    const auto [k, v] = parse_override(o);
    apply_key(c, k, v);
  }
  c.train.seed = c.seed;
  validate(c);

  const auto raw = gen_synthetic(c.synth, std::max<std::size_t>(a.sentences, 1));
  Vocab sv, tv;
  for (std::size_t i = 0; i < c.synth.vocab_size; ++i) {
    sv.append(synth_token(i));
    tv.append(synth_token(i));
  }
  std::vector<SentencePair> batch;
  for (const auto& p : raw) batch.push_back(make_pair(p.src, p.tgt, sv, tv));
  c.model.src_vocab = sv.size();
  c.model.tgt_vocab = tv.size();
  Model model(c.model, c.seed);
  const std::set<std::string> frozen(a.frozen.begin(), a.frozen.end());
  for (const auto& f : frozen)
    if (!model.params().contains(f)) throw ConfigError("--freeze: no parameter block '" + f + "'");
  const GradCheckReport rep = grad_check(model, batch, c.train, frozen);
  std::cout << "config " << to_string(c.model.attention) << "/" << to_string(c.model.decoder) << "\n";
  for (const auto& b : rep.blocks)
    std::cout << std::left << std::setw(14) << b.name << " entries " << std::setw(5) << b.entries << " max_rel_err "
              << std::scientific << std::setprecision(3) << b.max_rel_error << std::defaultfloat << "\n";
  const bool ok = rep.passed(a.tolerance);
  std::cout << "max_rel_err " << std::scientific << rep.max_rel_error << std::defaultfloat << " tolerance "
            << a.tolerance << " " << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nmtlab: attention-based encoder-decoder translation laboratory"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic train/valid/test split (80/10/10)");
  gen->add_option("--config", gd.config, "Config file (data.synth.* keys)");
  gen->add_option("--out", gd.out, "Output directory")->required();
  gen->add_option("--set", gd.overrides, "key=value override (repeatable)");

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Train a model; writes the best checkpoint and a JSON-lines log");
  trn->add_option("--config", tr.config, "Config file")->required();
  trn->add_option("--set", tr.overrides, "key=value override (repeatable)");

  TranslateArgs tl;
  auto* tra = app.add_subcommand("translate", "Beam-search translation, one sentence per line");
  tra->add_option("--checkpoint", tl.checkpoint)->required();
  tra->add_option("--input", tl.input)->required();
  tra->add_option("--output", tl.output)->required();
  tra->add_option("--beam", tl.beam, "Beam size")->check(CLI::PositiveNumber);
  tra->add_option("--max-len", tl.max_len, "Max output length (0: 3*|src|+5)");
  tra->add_flag("--length-norm", tl.length_norm, "Rank finished hypotheses by per-token log-prob");
  tra->add_flag("--greedy", tl.greedy, "Greedy decoding instead of beam search");
  tra->add_flag("--post-process", tl.post_process, "Replace UNK via attention and a co-occurrence table");
  tra->add_option("--corpus-src", tl.corpus_src, "Parallel corpus (source side) for the translation table");
  tra->add_option("--corpus-tgt", tl.corpus_tgt, "Parallel corpus (target side) for the translation table");
  tra->add_option("--align", tl.align_dir, "Directory for per-sentence alignment sidecars");
  tra->add_option("--align-format", tl.align_format, "csv|pgm|both")->check(CLI::IsMember({"csv", "pgm", "both"}));

  EvaluateArgs ev;
  auto* eva = app.add_subcommand("evaluate", "Corpus BLEU of a hypothesis file");
  eva->add_option("--hyp", ev.hyp)->required();
  eva->add_option("--ref", ev.refs, "Reference file (repeatable for multiple references)")->required();
  eva->add_option("--max-n", ev.max_n)->check(CLI::PositiveNumber);
  eva->add_flag("--smooth", ev.smooth, "+1 smoothing for n > 1");
  eva->add_option("--json", ev.json_out, "Write the report as JSON");

  DiagnoseArgs dg;
  auto* dia = app.add_subcommand("diagnose", "Repetition and coverage diagnostics over CSV alignment sidecars");
  dia->add_option("--dir", dg.dir)->required();
  dia->add_option("--run-threshold", dg.run_threshold)->check(CLI::PositiveNumber);
  dia->add_option("--mass-threshold", dg.mass_threshold);
  dia->add_option("--out", dg.out, "Write the report as JSON");

  GradcheckArgs gc;
  auto* grd = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients on a tiny batch");
  grd->add_option("--config", gc.config, "Config file (tiny defaults otherwise)");
  grd->add_option("--set", gc.overrides, "key=value override (repeatable)");
  grd->add_option("--tolerance", gc.tolerance, "Max relative error");
  grd->add_option("--freeze", gc.frozen, "Parameter block to exclude (repeatable)");
  grd->add_option("--sentences", gc.sentences, "Batch size")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gd);
    if (*trn) return cmd_train(tr);
    if (*tra) return cmd_translate(tl);
    if (*eva) return cmd_evaluate(ev);
    if (*dia) return cmd_diagnose(dg);
    if (*grd) return cmd_gradcheck(gc);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const CompatibilityError& e) {
    std::cerr << "compatibility error: " << e.what() << "\n";
    return kCompat;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}
