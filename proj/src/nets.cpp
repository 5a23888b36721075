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

#include "advc/nets.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace advc {

namespace ag = advc::ag;

namespace {

// QR of a tall gaussian matrix; the shorter dimension comes out orthonormal.
ag::Mat orthogonal_mat(Rng& rng, int rows, int cols) {
  bool flip = rows < cols;
  int r = flip ? cols : rows;
  int c = flip ? rows : cols;
  ag::Mat a(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<ag::Mat> qr(a);
  ag::Mat q = qr.householderQ() * ag::Mat::Identity(r, c);
  ag::Mat rr = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (int j = 0; j < c; ++j)
    if (rr(j, j) < 0.0) q.col(j) = -q.col(j);
  if (flip) return q.transpose();
  return q;
}

ag::Mat init_mat(Init init, int rows, int cols, Rng& rng) {
  switch (init) {
    case Init::kZero:
      return ag::Mat::Zero(rows, cols);
    case Init::kOne:
      return ag::Mat::Ones(rows, cols);
    case Init::kOrthogonal:
      return orthogonal_mat(rng, rows, cols);
    case Init::kNormalSmall: {
      ag::Mat m(rows, cols);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = 0.1 * rng.normal();
      return m;
    }
    case Init::kUniformFanIn:
    default: {
      double k = 1.0 / std::sqrt(static_cast<double>(rows));
      ag::Mat m(rows, cols);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-k, k);
      return m;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// NetConfig

uint64_t NetConfig::fingerprint() const {
  std::ostringstream ss;
  ss << "netcfg:" << mel_dim << ':' << rec_conv_channels << ':' << rec_lstm_hidden << ':'
     << rec_dropout << ':' << dec_hidden << ':' << dec_embed << ':' << attn_dim << ':'
     << attn_loc_filters << ':' << attn_loc_kernel << ':' << cls_channels << ':'
     << syn_prenet << ':' << syn_lstm_hidden << ':' << syn_frames_per_step << ':'
     << syn_postnet_channels << ':' << spk_embed << ':' << prenet_dropout << ':'
     << postnet_dropout << ':' << dis_channels
     << ':' << leaky_slope << ':' << bn_momentum << ':' << bn_eps << ':' << n_speakers << ':'
     << n_phonemes;
  return fnv1a64(ss.str());
}

NetConfig NetConfig::toy(int n_speakers, int n_phonemes) {
  NetConfig c;
  c.rec_conv_channels = 48;
  c.rec_lstm_hidden = 24;
  c.dec_hidden = 32;
  c.dec_embed = 16;
  c.attn_dim = 32;
  c.attn_loc_filters = 8;
  c.attn_loc_kernel = 7;
  c.cls_channels = 32;
  c.syn_prenet = 32;
  c.syn_lstm_hidden = 48;
  c.syn_postnet_channels = 32;
  // regularization shrinks with the corpus: half the full-size prenet noise,
  // or the decoder's pre-postnet branch never converges on toy-sized data
  c.prenet_dropout = 0.25;
  c.spk_embed = 16;
  c.dis_channels = 24;
  c.n_speakers = n_speakers;
  c.n_phonemes = n_phonemes;
  return c;
}

// ---------------------------------------------------------------------------
// ParamStore

ag::NodePtr ParamStore::param(const std::string& name, int rows, int cols, Init init,
                              Rng& rng) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  auto node = ag::param(init_mat(init, rows, cols, rng));
  index_[name] = entries_.size();
  entries_.push_back({name, node, true});
  return node;
}

ag::NodePtr ParamStore::buffer(const std::string& name, int rows, int cols, double fill) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  auto node = ag::constant(ag::Mat::Constant(rows, cols, fill));
  index_[name] = entries_.size();
  entries_.push_back({name, node, false});
  return node;
}

ag::NodePtr ParamStore::lookup(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].node;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) != 0; }

std::vector<ag::NodePtr> ParamStore::trainable(const std::string& prefix) const {
  std::vector<ag::NodePtr> out;
  for (const auto& e : entries_)
    if (e.trainable && e.name.rfind(prefix, 0) == 0) out.push_back(e.node);
  return out;
}

long ParamStore::scalar_count(const std::string& prefix) const {
  long n = 0;
  for (const auto& e : entries_)
    if (e.trainable && e.name.rfind(prefix, 0) == 0)
      n += static_cast<long>(e.node->m().size());
  return n;
}

uint64_t ParamStore::arch_fingerprint() const {
  std::ostringstream ss;
  for (const auto& e : entries_)
    ss << e.name << ':' << e.node->m().rows() << 'x' << e.node->m().cols() << ':'
       << (e.trainable ? 'p' : 'b') << ';';
  return fnv1a64(ss.str());
}

std::string ParamStore::describe() const {
  std::ostringstream ss;
  long total = 0;
  for (const auto& e : entries_) {
    ss << e.name << ' ' << e.node->m().rows() << 'x' << e.node->m().cols()
       << (e.trainable ? "" : " (buffer)") << '\n';
    if (e.trainable) total += static_cast<long>(e.node->m().size());
  }
  ss << "trainable scalars: " << total << '\n';
  return ss.str();
}

// ---------------------------------------------------------------------------
// Layers

Conv1d Conv1d::create(ParamStore& ps, const std::string& name, int in, int out, int kernel,
                      int stride, Rng& rng) {
  Conv1d c;
  c.kernel = kernel;
  c.stride = stride;
  c.w = ps.param(name + ".w", kernel * in, out, Init::kUniformFanIn, rng);
  c.b = ps.param(name + ".b", 1, out, Init::kZero, rng);
  return c;
}

ag::NodePtr Conv1d::forward(const ag::NodePtr& x) const {
  return ag::add(ag::matmul(ag::im2col(x, kernel, stride), w), b);
}

BatchNorm1d BatchNorm1d::create(ParamStore& ps, const std::string& name, int channels,
                                const NetConfig& cfg) {
  BatchNorm1d bn;
  bn.momentum = cfg.bn_momentum;
  bn.eps = cfg.bn_eps;
  Rng dummy(0);
  bn.gamma = ps.param(name + ".gamma", 1, channels, Init::kOne, dummy);
  bn.beta = ps.param(name + ".beta", 1, channels, Init::kZero, dummy);
  bn.run_mean = ps.buffer(name + ".run_mean", 1, channels, 0.0);
  bn.run_var = ps.buffer(name + ".run_var", 1, channels, 1.0);
  return bn;
}

ag::NodePtr BatchNorm1d::forward(const ag::NodePtr& x, const std::vector<int>& valid,
                                 Mode mode) const {
  if (mode == Mode::kEval) {
    auto mu = ag::constant(run_mean->val);
    auto sd = ag::constant((run_var->m().array() + eps).sqrt().matrix());
    auto xhat = ag::mul(ag::sub(x, mu), ag::recip(sd));
    return ag::add(ag::mul(xhat, gamma), beta);
  }
  long n = 0;
  for (size_t i = 0; i < valid.size(); ++i)
    n += std::min<long>(valid[i], static_cast<long>(x->val[i].rows()));
  if (n < 2) throw NumericError("batch norm needs at least two valid frames");
  auto xm = ag::zero_pad_rows(x, valid);
  auto mu = ag::scale(ag::sum_rows(xm), 1.0 / static_cast<double>(n));
  auto d = ag::zero_pad_rows(ag::sub(x, mu), valid);
  auto var = ag::scale(ag::sum_rows(ag::square(d)), 1.0 / static_cast<double>(n));
  auto xhat = ag::mul(d, ag::recip(ag::sqrt_(ag::add_scalar(var, eps))));
  auto out = ag::add(ag::mul(xhat, gamma), beta);
  // running stats track the batch statistics outside the tape
  run_mean->val[0] = (1.0 - momentum) * run_mean->m() + momentum * mu->m();
  run_var->val[0] = (1.0 - momentum) * run_var->m() + momentum * var->m();
  return out;
}

ag::NodePtr dropout(const ag::NodePtr& x, double p, Mode mode, Rng& rng) {
  if (mode == Mode::kEval || p <= 0.0) return x;
  double keep = 1.0 - p;
  ag::Value mask(x->val.size());
  for (size_t i = 0; i < x->val.size(); ++i) {
    mask[i].resize(x->val[i].rows(), x->val[i].cols());
    for (Eigen::Index r = 0; r < mask[i].rows(); ++r)
      for (Eigen::Index c = 0; c < mask[i].cols(); ++c)
        mask[i](r, c) = rng.uniform() < keep ? 1.0 / keep : 0.0;
  }
  return ag::mul(x, ag::constant(std::move(mask)));
}

Linear Linear::create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                      bool bias) {
  Linear l;
  l.w = ps.param(name + ".w", in, out, Init::kUniformFanIn, rng);
  if (bias) l.b = ps.param(name + ".b", 1, out, Init::kZero, rng);
  return l;
}

ag::NodePtr Linear::forward(const ag::NodePtr& x) const {
  auto y = ag::matmul(x, w);
  return b ? ag::add(y, b) : y;
}

LstmCell LstmCell::create(ParamStore& ps, const std::string& name, int in, int hidden,
                          Rng& rng) {
  LstmCell c;
  c.hidden = hidden;
  c.wx = ps.param(name + ".wx", in, 4 * hidden, Init::kUniformFanIn, rng);
  c.wh = ps.param(name + ".wh", hidden, 4 * hidden, Init::kOrthogonal, rng);
  c.b = ps.param(name + ".b", 1, 4 * hidden, Init::kZero, rng);
  c.b->val[0].middleCols(hidden, hidden).setOnes();  // forget gate starts open
  return c;
}

std::pair<ag::NodePtr, ag::NodePtr> LstmCell::step(const ag::NodePtr& xt,
                                                   const ag::NodePtr& h,
                                                   const ag::NodePtr& c) const {
  auto gates = ag::add(ag::add(ag::matmul(xt, wx), ag::matmul(h, wh)), b);
  auto i = ag::sigmoid(ag::slice_cols(gates, 0, hidden));
  auto f = ag::sigmoid(ag::slice_cols(gates, hidden, hidden));
  auto g = ag::tanh_(ag::slice_cols(gates, 2 * hidden, hidden));
  auto o = ag::sigmoid(ag::slice_cols(gates, 3 * hidden, hidden));
  auto c2 = ag::add(ag::mul(f, c), ag::mul(i, g));
  auto h2 = ag::mul(o, ag::tanh_(c2));
  return {h2, c2};
}

ag::NodePtr lstm_forward(const LstmCell& cell, const ag::NodePtr& x,
                         const std::vector<int>& valid) {
  int batch = x->batch();
  Eigen::Index t_total = x->val[0].rows();
  for (const auto& m : x->val)
    if (m.rows() != t_total) throw ConfigError("lstm_forward: ragged batch");
  auto h = ag::constant(ag::Mat::Zero(batch, cell.hidden));
  auto c = ag::constant(ag::Mat::Zero(batch, cell.hidden));
  std::vector<ag::NodePtr> steps;
  steps.reserve(static_cast<size_t>(t_total));
  for (Eigen::Index t = 0; t < t_total; ++t) {
    auto [h2, c2] = cell.step(ag::rows_at(x, static_cast<int>(t)), h, c);
    h = h2;
    c = c2;
    steps.push_back(h);
  }
  return ag::pack_steps(steps, valid);
}

ag::NodePtr blstm_forward(const LstmCell& fwd, const LstmCell& bwd, const ag::NodePtr& x,
                          const std::vector<int>& valid) {
  auto f = lstm_forward(fwd, x, valid);
  auto rb = lstm_forward(bwd, ag::reverse_valid(x, valid), valid);
  auto b = ag::reverse_valid(rb, valid);
  return ag::concat_cols(f, b);
}

std::vector<int> shrink_valid(const std::vector<int>& valid, int div) {
  std::vector<int> out(valid.size());
  for (size_t i = 0; i < valid.size(); ++i) out[i] = (valid[i] + div - 1) / div;
  return out;
}

// ---------------------------------------------------------------------------
// Recognizer

Recognizer Recognizer::create(ParamStore& ps, const NetConfig& cfg, Rng& rng) {
  Recognizer r;
  r.drop = cfg.rec_dropout;
  r.conv1 = Conv1d::create(ps, "rec.conv1", cfg.mel_dim, cfg.rec_conv_channels, 5, 2, rng);
  r.bn1 = BatchNorm1d::create(ps, "rec.bn1", cfg.rec_conv_channels, cfg);
  r.l1f = LstmCell::create(ps, "rec.l1f", cfg.rec_conv_channels, cfg.rec_lstm_hidden, rng);
  r.l1b = LstmCell::create(ps, "rec.l1b", cfg.rec_conv_channels, cfg.rec_lstm_hidden, rng);
  r.conv2 = Conv1d::create(ps, "rec.conv2", cfg.h_dim(), cfg.rec_conv_channels, 5, 2, rng);
  r.bn2 = BatchNorm1d::create(ps, "rec.bn2", cfg.rec_conv_channels, cfg);
  r.l2f = LstmCell::create(ps, "rec.l2f", cfg.rec_conv_channels, cfg.rec_lstm_hidden, rng);
  r.l2b = LstmCell::create(ps, "rec.l2b", cfg.rec_conv_channels, cfg.rec_lstm_hidden, rng);
  return r;
}

RecognizerOut Recognizer::forward(const ag::NodePtr& mel, const std::vector<int>& valid,
                                  Mode mode, Rng& rng) const {
  RecognizerOut out;
  auto v1 = shrink_valid(valid, 2);
  auto x = conv1.forward(mel);
  x = ag::relu(bn1.forward(x, v1, mode));
  x = ag::zero_pad_rows(dropout(x, drop, mode, rng), v1);
  out.h1 = blstm_forward(l1f, l1b, x, v1);
  out.valid_h1 = v1;

  auto v2 = shrink_valid(v1, 2);
  auto y = conv2.forward(out.h1);
  y = ag::relu(bn2.forward(y, v2, mode));
  y = ag::zero_pad_rows(dropout(y, drop, mode, rng), v2);
  out.h = blstm_forward(l2f, l2b, y, v2);
  out.valid_h = v2;
  return out;
}

// ---------------------------------------------------------------------------
// Speaker classifier

SpeakerClassifier SpeakerClassifier::create(ParamStore& ps, const std::string& prefix,
                                            const NetConfig& cfg, Rng& rng) {
  SpeakerClassifier s;
  s.slope = cfg.leaky_slope;
  s.c1 = Conv1d::create(ps, prefix + ".c1", cfg.h_dim(), cfg.cls_channels, 5, 1, rng);
  s.n1 = BatchNorm1d::create(ps, prefix + ".n1", cfg.cls_channels, cfg);
  s.c2 = Conv1d::create(ps, prefix + ".c2", cfg.cls_channels, cfg.cls_channels, 5, 1, rng);
  s.n2 = BatchNorm1d::create(ps, prefix + ".n2", cfg.cls_channels, cfg);
  s.c3 = Conv1d::create(ps, prefix + ".c3", cfg.cls_channels, cfg.cls_channels, 5, 1, rng);
  s.n3 = BatchNorm1d::create(ps, prefix + ".n3", cfg.cls_channels, cfg);
  s.fc = Linear::create(ps, prefix + ".fc", cfg.cls_channels, cfg.n_speakers, rng);
  return s;
}

ag::NodePtr SpeakerClassifier::forward(const ag::NodePtr& h, const std::vector<int>& valid,
                                       Mode mode) const {
  auto x = ag::zero_pad_rows(ag::leaky_relu(n1.forward(c1.forward(h), valid, mode), slope),
                             valid);
  x = ag::zero_pad_rows(ag::leaky_relu(n2.forward(c2.forward(x), valid, mode), slope), valid);
  x = ag::zero_pad_rows(ag::leaky_relu(n3.forward(c3.forward(x), valid, mode), slope), valid);
  return ag::zero_pad_rows(fc.forward(x), valid);
}

// ---------------------------------------------------------------------------
// Phoneme decoder

PhonemeDecoder PhonemeDecoder::create(ParamStore& ps, const NetConfig& cfg, Rng& rng) {
  PhonemeDecoder d;
  d.n_classes = cfg.n_phonemes + 1;
  d.embed = ps.param("dec.embed", d.n_classes, cfg.dec_embed, Init::kNormalSmall, rng);
  d.cell = LstmCell::create(ps, "dec.cell", cfg.dec_embed + cfg.h_dim(), cfg.dec_hidden, rng);
  d.w_key = Linear::create(ps, "dec.key", cfg.h_dim(), cfg.attn_dim, rng);
  d.w_query = Linear::create(ps, "dec.query", cfg.dec_hidden, cfg.attn_dim, rng, false);
  d.loc_conv = Conv1d::create(ps, "dec.loc_conv", 1, cfg.attn_loc_filters,
                              cfg.attn_loc_kernel, 1, rng);
  d.w_loc = Linear::create(ps, "dec.loc", cfg.attn_loc_filters, cfg.attn_dim, rng, false);
  d.v = ps.param("dec.v", cfg.attn_dim, 1, Init::kUniformFanIn, rng);
  d.w_out = Linear::create(ps, "dec.out", cfg.dec_hidden + cfg.h_dim(), d.n_classes, rng);
  return d;
}

namespace {

// Shared attention step: scores from content keys, the decoder state and
// the previous alignment; returns the new alignment.
ag::NodePtr attend(const PhonemeDecoder& d, const ag::NodePtr& keys, const ag::NodePtr& state,
                   const ag::NodePtr& w_prev, const std::vector<int>& valid_h) {
  auto loc = d.w_loc.forward(d.loc_conv.forward(w_prev));
  auto q = d.w_query.forward(state);  // single B x attn
  auto e = ag::matmul(ag::tanh_(ag::add(ag::add_rowvec_per_item(keys, q), loc)), d.v);
  return ag::softmax_over_rows_per_item(e, valid_h);
}

ag::NodePtr uniform_alignment(const ag::NodePtr& h, const std::vector<int>& valid_h) {
  ag::Value w(h->val.size());
  for (size_t i = 0; i < h->val.size(); ++i) {
    w[i] = ag::Mat::Zero(h->val[i].rows(), 1);
    int v = std::min<int>(valid_h[i], static_cast<int>(h->val[i].rows()));
    for (int t = 0; t < v; ++t) w[i](t, 0) = 1.0 / v;
  }
  return ag::constant(std::move(w));
}

}  // namespace

std::vector<ag::NodePtr> PhonemeDecoder::forward_teacher(
    const ag::NodePtr& h, const std::vector<int>& valid_h,
    const std::vector<std::vector<int>>& targets) const {
  int batch = h->batch();
  if (static_cast<int>(targets.size()) != batch)
    throw ConfigError("phoneme decoder: target count does not match batch");
  size_t max_len = 0;
  for (const auto& t : targets) max_len = std::max(max_len, t.size());
  int sos = n_classes - 1;

  auto keys = w_key.forward(h);
  auto w_prev = uniform_alignment(h, valid_h);
  auto ctx = ag::weighted_sum_rows(h, w_prev);
  auto hs = ag::constant(ag::Mat::Zero(batch, cell.hidden));
  auto cs = ag::constant(ag::Mat::Zero(batch, cell.hidden));

  std::vector<ag::NodePtr> logps;
  logps.reserve(max_len + 1);
  for (size_t j = 0; j <= max_len; ++j) {
    std::vector<int> ids(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      const auto& t = targets[static_cast<size_t>(i)];
      ids[static_cast<size_t>(i)] = (j == 0 || j - 1 >= t.size()) ? sos : t[j - 1];
    }
    auto x_in = ag::concat_cols(ag::gather_rows(embed, ids), ctx);
    auto [h2, c2] = cell.step(x_in, hs, cs);
    hs = h2;
    cs = c2;
    w_prev = attend(*this, keys, hs, w_prev, valid_h);
    ctx = ag::weighted_sum_rows(h, w_prev);
    logps.push_back(ag::log_softmax_rows(w_out.forward(ag::concat_cols(hs, ctx))));
  }
  return logps;
}

PhonemeDecoder::Decoded PhonemeDecoder::greedy_decode(const ag::NodePtr& h,
                                                      const std::vector<int>& valid_h) const {
  ag::NoGradGuard guard;
  int batch = h->batch();
  int sos = n_classes - 1;
  int eos = n_classes - 1;
  int cap = 0;
  for (int v : valid_h) cap = std::max(cap, v);
  cap *= 2;

  auto keys = w_key.forward(h);
  auto w_prev = uniform_alignment(h, valid_h);
  auto ctx = ag::weighted_sum_rows(h, w_prev);
  auto hs = ag::constant(ag::Mat::Zero(batch, cell.hidden));
  auto cs = ag::constant(ag::Mat::Zero(batch, cell.hidden));

  Decoded out;
  out.seqs.resize(static_cast<size_t>(batch));
  std::vector<bool> done(static_cast<size_t>(batch), false);
  std::vector<int> prev(static_cast<size_t>(batch), sos);
  for (int j = 0; j < cap; ++j) {
    auto x_in = ag::concat_cols(ag::gather_rows(embed, prev), ctx);
    auto [h2, c2] = cell.step(x_in, hs, cs);
    hs = h2;
    cs = c2;
    w_prev = attend(*this, keys, hs, w_prev, valid_h);
    ctx = ag::weighted_sum_rows(h, w_prev);
    auto logits = w_out.forward(ag::concat_cols(hs, ctx));
    bool all_done = true;
    for (int i = 0; i < batch; ++i) {
      if (done[static_cast<size_t>(i)]) continue;
      Eigen::Index arg;
      logits->m().row(i).maxCoeff(&arg);
      if (static_cast<int>(arg) == eos) {
        done[static_cast<size_t>(i)] = true;
      } else {
        out.seqs[static_cast<size_t>(i)].push_back(static_cast<int>(arg));
        prev[static_cast<size_t>(i)] = static_cast<int>(arg);
        all_done = false;
      }
    }
    if (all_done && std::all_of(done.begin(), done.end(), [](bool b) { return b; })) break;
  }
  out.truncated = !std::all_of(done.begin(), done.end(), [](bool b) { return b; });
  return out;
}

// ---------------------------------------------------------------------------
// Synthesizer

Synthesizer Synthesizer::create(ParamStore& ps, const NetConfig& cfg, Rng& rng) {
  Synthesizer s;
  s.frames_per_step = cfg.syn_frames_per_step;
  s.mel_dim = cfg.mel_dim;
  s.prenet_drop = cfg.prenet_dropout;
  s.postnet_drop = cfg.postnet_dropout;
  int r = cfg.syn_frames_per_step;
  int rcond = r * cfg.cond_dim();
  s.pre1 = Linear::create(ps, "syn.pre1", r * cfg.mel_dim, cfg.syn_prenet, rng);
  s.pre2 = Linear::create(ps, "syn.pre2", cfg.syn_prenet, cfg.syn_prenet, rng);
  s.rnn1 = LstmCell::create(ps, "syn.rnn1", cfg.syn_prenet + rcond, cfg.syn_lstm_hidden, rng);
  s.rnn2 = LstmCell::create(ps, "syn.rnn2", cfg.syn_lstm_hidden, cfg.syn_lstm_hidden, rng);
  s.proj = Linear::create(ps, "syn.proj", cfg.syn_lstm_hidden + rcond, r * cfg.mel_dim, rng);
  int ch = cfg.mel_dim;
  for (int i = 0; i < 5; ++i) {
    std::string name = "syn.post" + std::to_string(i + 1);
    s.pc[i] = Conv1d::create(ps, name, ch, cfg.syn_postnet_channels, 5, 1, rng);
    s.pn[i] = BatchNorm1d::create(ps, name + ".bn", cfg.syn_postnet_channels, cfg);
    ch = cfg.syn_postnet_channels;
  }
  s.pc_out = Conv1d::create(ps, "syn.post_out", ch, cfg.mel_dim, 5, 1, rng);
  s.spk_table = ps.param("syn.spk_table", cfg.n_speakers, cfg.spk_embed, Init::kNormalSmall,
                         rng);
  return s;
}

SynthOut Synthesizer::forward(const ag::NodePtr& h, const std::vector<int>& valid_h,
                              const std::vector<int>& speaker_ids,
                              const std::vector<int>& valid_x, int total_frames, Mode mode,
                              Rng& rng, const ag::NodePtr* teacher) const {
  (void)valid_h;
  int batch = h->batch();
  int r = frames_per_step;
  if (total_frames % 4 != 0 || total_frames % r != 0)
    throw ConfigError("synthesizer: total frames must cover the upsample factor");
  if (static_cast<Eigen::Index>(total_frames) != h->val[0].rows() * 4)
    throw ConfigError("synthesizer: H length does not match output frames / 4");

  // conditioning: quarter-rate H repeated up to frame rate, speaker row on every frame
  auto emb = ag::gather_rows(spk_table, speaker_ids);  // B x E
  ag::Value zeros(static_cast<size_t>(batch));
  for (int i = 0; i < batch; ++i)
    zeros[static_cast<size_t>(i)] = ag::Mat::Zero(total_frames, emb->cols());
  auto emb_frames = ag::add_rowvec_per_item(ag::constant(std::move(zeros)), emb);
  auto cond = ag::zero_pad_rows(
      ag::concat_cols(ag::repeat_rows(h, 4), emb_frames), valid_x);
  auto groups = ag::fold_frames(cond, r);  // batch (T/r) x (r*cond_dim)
  auto valid_g = shrink_valid(valid_x, r);

  ag::NodePtr tf_groups;
  if (teacher) tf_groups = ag::fold_frames(*teacher, r);

  int steps = total_frames / r;
  auto h1 = ag::constant(ag::Mat::Zero(batch, rnn1.hidden));
  auto c1 = ag::constant(ag::Mat::Zero(batch, rnn1.hidden));
  auto h2 = ag::constant(ag::Mat::Zero(batch, rnn2.hidden));
  auto c2 = ag::constant(ag::Mat::Zero(batch, rnn2.hidden));
  auto prev = ag::constant(ag::Mat::Zero(batch, r * mel_dim));

  std::vector<ag::NodePtr> outs;
  outs.reserve(static_cast<size_t>(steps));
  for (int j = 0; j < steps; ++j) {
    auto p = dropout(ag::relu(pre1.forward(prev)), prenet_drop, mode, rng);
    p = dropout(ag::relu(pre2.forward(p)), prenet_drop, mode, rng);
    auto cj = ag::rows_at(groups, j);
    auto [nh1, nc1] = rnn1.step(ag::concat_cols(p, cj), h1, c1);
    h1 = nh1;
    c1 = nc1;
    auto [nh2, nc2] = rnn2.step(h1, h2, c2);
    h2 = nh2;
    c2 = nc2;
    auto out_j = proj.forward(ag::concat_cols(h2, cj));
    outs.push_back(out_j);
    prev = teacher ? ag::rows_at(tf_groups, j) : out_j;
  }
  auto pre_groups = ag::pack_steps(outs, valid_g);
  SynthOut so;
  so.pre = ag::zero_pad_rows(ag::unfold_frames(pre_groups, r), valid_x);

  auto x = so.pre;
  for (int i = 0; i < 5; ++i) {
    x = pc[i].forward(x);
    x = ag::relu(pn[i].forward(x, valid_x, mode));
    x = ag::zero_pad_rows(dropout(x, postnet_drop, mode, rng), valid_x);
  }
  auto res = pc_out.forward(x);
  so.post = ag::zero_pad_rows(ag::add(so.pre, res), valid_x);
  return so;
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator Discriminator::create(ParamStore& ps, const std::string& prefix,
                                    const NetConfig& cfg, Rng& rng) {
  Discriminator d;
  d.slope = cfg.leaky_slope;
  d.c1 = Conv1d::create(ps, prefix + ".c1", cfg.mel_dim, cfg.dis_channels, 5, 2, rng);
  d.c2 = Conv1d::create(ps, prefix + ".c2", cfg.dis_channels, cfg.dis_channels, 5, 2, rng);
  d.c3 = Conv1d::create(ps, prefix + ".c3", cfg.dis_channels, cfg.dis_channels, 5, 2, rng);
  d.c4 = Conv1d::create(ps, prefix + ".c4", cfg.dis_channels, 1, 5, 2, rng);
  return d;
}

ag::NodePtr Discriminator::forward(const ag::NodePtr& x, const std::vector<int>& valid) const {
  auto v1 = shrink_valid(valid, 2);
  auto a = ag::zero_pad_rows(ag::leaky_relu(c1.forward(x), slope), v1);
  auto v2 = shrink_valid(v1, 2);
  auto b = ag::zero_pad_rows(ag::leaky_relu(c2.forward(a), slope), v2);
  auto v3 = shrink_valid(v2, 2);
  auto c = ag::zero_pad_rows(ag::leaky_relu(c3.forward(b), slope), v3);
  auto v4 = shrink_valid(v3, 2);
  auto d = ag::zero_pad_rows(c4.forward(c), v4);
  auto sums = ag::sum_all_per_item(d);  // B x 1; pads contribute nothing
  ag::Mat inv(x->batch(), 1);
  for (int i = 0; i < x->batch(); ++i) inv(i, 0) = 1.0 / static_cast<double>(v4[static_cast<size_t>(i)]);
  return ag::mul(sums, ag::constant(std::move(inv)));
}

// ---------------------------------------------------------------------------
// Model

std::unique_ptr<Model> Model::create(const NetConfig& cfg, uint64_t seed,
                                     bool with_discriminators) {
  if (cfg.n_speakers < 2) throw ConfigError("model needs at least two speakers");
  if (cfg.n_phonemes < 1) throw ConfigError("model needs a phoneme inventory");
  auto m = std::make_unique<Model>();
  m->cfg = cfg;
  Rng master(seed);
  Rng r_rec = master.fork(1);
  Rng r_dec = master.fork(2);
  Rng r_cls = master.fork(3);
  Rng r_cls2 = master.fork(4);
  Rng r_syn = master.fork(5);
  m->rec = Recognizer::create(m->store, cfg, r_rec);
  m->dec = PhonemeDecoder::create(m->store, cfg, r_dec);
  m->cls = SpeakerClassifier::create(m->store, "cls", cfg, r_cls);
  m->cls2 = SpeakerClassifier::create(m->store, "cls2", cfg, r_cls2);
  m->syn = Synthesizer::create(m->store, cfg, r_syn);
  if (with_discriminators) {
    for (int i = 0; i < cfg.n_speakers; ++i) {
      Rng r_dis = master.fork(100 + static_cast<uint64_t>(i));
      m->dis.push_back(
          Discriminator::create(m->store, "dis" + std::to_string(i), cfg, r_dis));
    }
  }
  return m;
}

std::vector<ag::NodePtr> Model::main_params() const {
  auto out = store.trainable("rec.");
  auto d = store.trainable("dec.");
  auto s = store.trainable("syn.");
  out.insert(out.end(), d.begin(), d.end());
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::vector<ag::NodePtr> Model::classifier_params() const {
  auto out = store.trainable("cls.");
  auto b = store.trainable("cls2.");
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<ag::NodePtr> Model::discriminator_params() const {
  return store.trainable("dis");
}

}  // namespace advc
