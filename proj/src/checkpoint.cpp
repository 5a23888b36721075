// Copyright 2026 The advc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "advc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace advc {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'C', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  void u32(uint32_t x) { raw(&x, 4); }
  void u64(uint64_t x) { raw(&x, 8); }
  void i32(int32_t x) { raw(&x, 4); }
  void f64(double x) { raw(&x, 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void mat(const ag::Mat& m) {
    u32(static_cast<uint32_t>(m.rows()));
    u32(static_cast<uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  void vec(const Eigen::RowVectorXd& v) {
    u32(static_cast<uint32_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
  }
  const std::string& bytes() const { return buf_; }

 private:
  void raw(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, size_t limit) : buf_(buf), limit_(limit) {}

  uint32_t u32() {
    uint32_t x;
    raw(&x, 4);
    return x;
  }
  uint64_t u64() {
    uint64_t x;
    raw(&x, 8);
    return x;
  }
  int32_t i32() {
    int32_t x;
    raw(&x, 4);
    return x;
  }
  double f64() {
    double x;
    raw(&x, 8);
    return x;
  }
  std::string str() {
    uint32_t n = u32();
    check(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  ag::Mat mat() {
    uint32_t r = u32(), c = u32();
    check(static_cast<size_t>(r) * c * 8);
    ag::Mat m(r, c);
    for (uint32_t i = 0; i < r; ++i)
      for (uint32_t j = 0; j < c; ++j) m(i, j) = f64();
    return m;
  }
  Eigen::RowVectorXd vec() {
    uint32_t n = u32();
    check(static_cast<size_t>(n) * 8);
    Eigen::RowVectorXd v(n);
    for (uint32_t i = 0; i < n; ++i) v(i) = f64();
    return v;
  }
  size_t pos() const { return pos_; }

 private:
  void check(size_t n) {
    if (pos_ + n > limit_) throw IntegrityError("checkpoint truncated");
  }
  void raw(void* p, size_t n) {
    check(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  const std::string& buf_;
  size_t limit_;
  size_t pos_ = 0;
};

void write_config(Writer& w, const NetConfig& c) {
  w.i32(c.mel_dim);
  w.i32(c.rec_conv_channels);
  w.i32(c.rec_lstm_hidden);
  w.f64(c.rec_dropout);
  w.i32(c.dec_hidden);
  w.i32(c.dec_embed);
  w.i32(c.attn_dim);
  w.i32(c.attn_loc_filters);
  w.i32(c.attn_loc_kernel);
  w.i32(c.cls_channels);
  w.i32(c.syn_prenet);
  w.i32(c.syn_lstm_hidden);
  w.i32(c.syn_frames_per_step);
  w.i32(c.syn_postnet_channels);
  w.i32(c.spk_embed);
  w.f64(c.prenet_dropout);
  w.f64(c.postnet_dropout);
  w.i32(c.dis_channels);
  w.f64(c.leaky_slope);
  w.f64(c.bn_momentum);
  w.f64(c.bn_eps);
  w.i32(c.n_speakers);
  w.i32(c.n_phonemes);
}

NetConfig read_config(Reader& r) {
  NetConfig c;
  c.mel_dim = r.i32();
  c.rec_conv_channels = r.i32();
  c.rec_lstm_hidden = r.i32();
  c.rec_dropout = r.f64();
  c.dec_hidden = r.i32();
  c.dec_embed = r.i32();
  c.attn_dim = r.i32();
  c.attn_loc_filters = r.i32();
  c.attn_loc_kernel = r.i32();
  c.cls_channels = r.i32();
  c.syn_prenet = r.i32();
  c.syn_lstm_hidden = r.i32();
  c.syn_frames_per_step = r.i32();
  c.syn_postnet_channels = r.i32();
  c.spk_embed = r.i32();
  c.prenet_dropout = r.f64();
  c.postnet_dropout = r.f64();
  c.dis_channels = r.i32();
  c.leaky_slope = r.f64();
  c.bn_momentum = r.f64();
  c.bn_eps = r.f64();
  c.n_speakers = r.i32();
  c.n_phonemes = r.i32();
  return c;
}

const char* kComponentPrefixes[] = {"rec.", "dec.", "cls.", "cls2.", "syn.", "dis"};

bool known_component(const std::string& name) {
  for (const char* p : kComponentPrefixes)
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

}  // namespace

const ag::Mat* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : arrays)
    if (n == name) return &m;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  Writer w;
  w.u32(kVersion);
  w.i32(c.stage);
  w.u64(c.step);
  write_config(w, c.cfg);

  w.u32(static_cast<uint32_t>(c.speakers.size()));
  for (const auto& s : c.speakers) w.str(s);
  w.u32(static_cast<uint32_t>(c.phonemes.size()));
  for (const auto& p : c.phonemes) w.str(p);

  w.vec(c.stats.mean);
  w.vec(c.stats.stdev);
  w.u64(c.stats.feature_fingerprint);

  w.u32(static_cast<uint32_t>(c.arrays.size()));
  for (const auto& [name, m] : c.arrays) {
    w.str(name);
    w.mat(m);
  }

  w.u32(static_cast<uint32_t>(c.opt.size()));
  for (const auto& [name, slot] : c.opt) {
    w.str(name);
    w.u64(slot.t);
    w.mat(slot.m);
    w.mat(slot.v);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  std::string hashed(kMagic, 8);
  hashed += w.bytes();
  uint64_t h = fnv1a64(hashed.data(), hashed.size());
  out.write(reinterpret_cast<const char*>(&h), 8);
  if (!out) throw DataError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < 8 + 8 + 4) throw IntegrityError("checkpoint too small: " + path);

  uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (fnv1a64(buf.data(), buf.size() - 8) != stored)
    throw IntegrityError("checkpoint hash mismatch: " + path);
  if (std::memcmp(buf.data(), kMagic, 8) != 0)
    throw IntegrityError("not a checkpoint file: " + path);

  Reader rd(buf, buf.size() - 8);
  rd.u64();  // magic bytes
  if (rd.u32() != kVersion) throw IntegrityError("unsupported checkpoint version");

  Checkpoint c;
  c.stage = rd.i32();
  c.step = rd.u64();
  c.cfg = read_config(rd);

  uint32_t ns = rd.u32();
  for (uint32_t i = 0; i < ns; ++i) c.speakers.push_back(rd.str());
  uint32_t np = rd.u32();
  for (uint32_t i = 0; i < np; ++i) c.phonemes.push_back(rd.str());

  c.stats.mean = rd.vec();
  c.stats.stdev = rd.vec();
  c.stats.feature_fingerprint = rd.u64();

  uint32_t na = rd.u32();
  for (uint32_t i = 0; i < na; ++i) {
    std::string name = rd.str();
    c.arrays.emplace_back(name, rd.mat());
  }

  uint32_t no = rd.u32();
  for (uint32_t i = 0; i < no; ++i) {
    std::string name = rd.str();
    AdamSlot slot;
    slot.t = rd.u64();
    slot.m = rd.mat();
    slot.v = rd.mat();
    c.opt.emplace(name, std::move(slot));
  }
  if (rd.pos() != buf.size() - 8)
    throw IntegrityError("checkpoint has trailing bytes: " + path);
  return c;
}

Checkpoint snapshot(const Model& model, int stage, uint64_t step,
                    const std::vector<std::string>& speakers,
                    const std::vector<std::string>& phonemes, const NormStats& stats,
                    const std::map<std::string, AdamSlot>& opt) {
  Checkpoint c;
  c.stage = stage;
  c.step = step;
  c.cfg = model.cfg;
  c.speakers = speakers;
  c.phonemes = phonemes;
  c.stats = stats;
  for (const auto& e : model.store.entries()) c.arrays.emplace_back(e.name, e.node->m());
  c.opt = opt;
  return c;
}

void restore(Model& model, const Checkpoint& c,
             const std::vector<std::string>& reinit_prefixes) {
  auto may_reinit = [&](const std::string& name) {
    for (const auto& p : reinit_prefixes)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  };

  std::unordered_map<std::string, const ag::Mat*> by_name;
  for (const auto& [n, m] : c.arrays) by_name[n] = &m;

  std::unordered_set<std::string> consumed;
  for (const auto& e : model.store.entries()) {
    auto it = by_name.find(e.name);
    if (it != by_name.end() && it->second->rows() == e.node->m().rows() &&
        it->second->cols() == e.node->m().cols()) {
      e.node->val[0] = *it->second;
      consumed.insert(e.name);
      continue;
    }
    if (may_reinit(e.name)) continue;
    if (it == by_name.end())
      throw IntegrityError("checkpoint lacks parameter: " + e.name);
    throw IntegrityError("checkpoint shape mismatch for: " + e.name);
  }

  for (const auto& [n, m] : c.arrays) {
    (void)m;
    if (consumed.count(n)) continue;
    // leftovers are fine when the model deliberately re-initializes them or
    // never builds the component (critics during conversion)
    bool tolerated = known_component(n) && (may_reinit(n) || !model.store.has(n));
    if (!tolerated) throw IntegrityError("checkpoint carries unknown array: " + n);
  }
}

void check_compatible(const NetConfig& a, const NetConfig& b) {
  std::vector<std::string> bad;
  auto req = [&](bool ok, const char* field) {
    if (!ok) bad.push_back(field);
  };
  req(a.mel_dim == b.mel_dim, "mel_dim");
  req(a.rec_conv_channels == b.rec_conv_channels, "rec_conv_channels");
  req(a.rec_lstm_hidden == b.rec_lstm_hidden, "rec_lstm_hidden");
  req(a.dec_hidden == b.dec_hidden, "dec_hidden");
  req(a.dec_embed == b.dec_embed, "dec_embed");
  req(a.attn_dim == b.attn_dim, "attn_dim");
  req(a.attn_loc_filters == b.attn_loc_filters, "attn_loc_filters");
  req(a.attn_loc_kernel == b.attn_loc_kernel, "attn_loc_kernel");
  req(a.cls_channels == b.cls_channels, "cls_channels");
  req(a.syn_prenet == b.syn_prenet, "syn_prenet");
  req(a.syn_lstm_hidden == b.syn_lstm_hidden, "syn_lstm_hidden");
  req(a.syn_frames_per_step == b.syn_frames_per_step, "syn_frames_per_step");
  req(a.syn_postnet_channels == b.syn_postnet_channels, "syn_postnet_channels");
  req(a.spk_embed == b.spk_embed, "spk_embed");
  req(a.dis_channels == b.dis_channels, "dis_channels");
  req(a.n_phonemes == b.n_phonemes, "n_phonemes");
  if (!bad.empty()) {
    std::string msg = "checkpoint widths are incompatible:";
    for (const auto& f : bad) msg += " " + f;
    throw ConfigError(msg);
  }
}

}  // namespace advc
