#pragma once

// Binary checkpoint container. All integers are little-endian; reals are
// IEEE-754 binary64 stored by bit pattern, so a round trip is exact.
//
//   magic      8 bytes  "NMTLABCK"
//   version    u32
//   config     str      experiment config echo (free text)
//   model      u32 count, then count x (str key, str value)
//   vocab x2   u64 hash, u32 count, count x str   (source, then target)
//   params     u32 count, then count x (str name, u32 rank, rank x u64 dim,
//              prod(dims) x f64)
//   optimizer  u64 updates, u64 skipped, u32 blocks, blocks x (u64 n, n x f64)
//   rng        str
//   history    u32 count, count x (u64 update, u64 epoch, f64 loss, f64 bleu)
//
// str = u32 byte length + bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nmtlab/corpus.hpp"
#include "nmtlab/model.hpp"
#include "nmtlab/training.hpp"

namespace nmtlab {

inline constexpr char kCheckpointMagic[8] = {'N', 'M', 'T', 'L', 'A', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;
  ModelConfig model;
  Vocab src_vocab, tgt_vocab;
  ParamStore params;
  AdaGradState optimizer;
  std::string rng_state;
  std::vector<HistoryRecord> history;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  template <class T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string origin) : buf_(buf), origin_(std::move(origin)) {}

  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(char* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw InputError(origin_ + ": corrupt checkpoint (" + what + " at byte " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail("truncated");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  const std::string& buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline void write_vocab(ByteWriter& w, const Vocab& v) {
  w.u64(v.hash());
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (const auto& t : v.tokens()) w.str(t);
}

inline Vocab read_vocab(ByteReader& r, const char* side) {
  const std::uint64_t stored = r.u64();
  const std::uint32_t n = r.u32();
  Tokens toks;
  toks.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) toks.push_back(r.str());
  Vocab v = Vocab::from_tokens(toks);
  if (v.hash() != stored)
    throw CompatibilityError(std::string(side) + " vocabulary hash mismatch: stored " + std::to_string(stored) +
                             ", contents hash to " + std::to_string(v.hash()));
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(c.config_text);
  const auto kv = to_key_values(c.model);
  w.u32(static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    w.str(k);
    w.str(v);
  }
  detail::write_vocab(w, c.src_vocab);
  detail::write_vocab(w, c.tgt_vocab);
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    const Tensor& t = c.params.at(i);
    w.str(c.params.name(i));
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) w.u64(d);
    for (double x : t.data) w.f64(x);
  }
  w.u64(c.optimizer.updates);
  w.u64(c.optimizer.skipped);
  w.u32(static_cast<std::uint32_t>(c.optimizer.acc.size()));
  for (const auto& a : c.optimizer.acc) {
    w.u64(a.size());
    for (double x : a) w.f64(x);
  }
  w.str(c.rng_state);
  w.u32(static_cast<std::uint32_t>(c.history.size()));
  for (const auto& h : c.history) {
    w.u64(h.update);
    w.u64(h.epoch);
    w.f64(h.train_loss);
    w.f64(h.valid_bleu);
  }
  return w.take();
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<checkpoint>") {
  detail::ByteReader r(bytes, origin);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw CompatibilityError(origin + ": not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CompatibilityError(origin + ": checkpoint version " + std::to_string(version) + ", expected " +
                             std::to_string(kCheckpointVersion));
  Checkpoint c;
  c.config_text = r.str();
  const std::uint32_t nkv = r.u32();
  for (std::uint32_t i = 0; i < nkv; ++i) {
    const std::string k = r.str();
    const std::string v = r.str();
    if (!apply_model_key(c.model, k, v)) throw CompatibilityError(origin + ": unknown model key '" + k + "'");
  }
  validate(c.model);
  c.src_vocab = detail::read_vocab(r, "source");
  c.tgt_vocab = detail::read_vocab(r, "target");
  if (c.src_vocab.size() != c.model.src_vocab || c.tgt_vocab.size() != c.model.tgt_vocab)
    throw CompatibilityError(origin + ": embedded vocabularies do not match the model's vocabulary sizes");
  const std::uint32_t nparams = r.u32();
  for (std::uint32_t i = 0; i < nparams; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 4) r.fail("bad rank for '" + name + "'");
    Shape s;
    std::uint64_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      s.push_back(r.u64());
      if (s.back() == 0 || s.back() > (1ull << 32)) r.fail("bad extent for '" + name + "'");
      total *= s.back();
      if (total > (1ull << 32)) r.fail("oversized block '" + name + "'");
    }
    Tensor& t = c.params.add(name, s);
    for (auto& x : t.data) x = r.f64();
  }
  c.optimizer.updates = r.u64();
  c.optimizer.skipped = r.u64();
  const std::uint32_t nacc = r.u32();
  for (std::uint32_t i = 0; i < nacc; ++i) {
    const std::uint64_t n = r.u64();
    if (i >= c.params.size() || n != c.params.at(i).size()) r.fail("optimizer block " + std::to_string(i) + " size");
    std::vector<double> a(n);
    for (auto& x : a) x = r.f64();
    c.optimizer.acc.push_back(std::move(a));
  }
  c.rng_state = r.str();
  const std::uint32_t nh = r.u32();
  for (std::uint32_t i = 0; i < nh; ++i) {
    HistoryRecord h;
    h.update = r.u64();
    h.epoch = r.u64();
    h.train_loss = r.f64();
    h.valid_bleu = r.f64();
    c.history.push_back(h);
  }
  if (!r.done()) r.fail("trailing bytes");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str(), path);
}

/// Rebuilds the model; block names and shapes must match the config layout.
inline Model model_from_checkpoint(const Checkpoint& c) { return Model(c.model, c.params); }

}  // namespace nmtlab
