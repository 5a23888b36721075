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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "advc/autodiff.hpp"
#include "advc/common.hpp"
#include "advc/nets.hpp"
#include "testutil.hpp"

using namespace advc;
using test::max_grad_rel_err;
using test::random_mat;
using test::random_value;

namespace {

// Widths small enough for finite-difference sweeps over every parameter.
NetConfig tiny_config() {
  NetConfig c;
  c.mel_dim = 6;
  c.rec_conv_channels = 8;
  c.rec_lstm_hidden = 4;
  c.rec_dropout = 0.0;
  c.dec_hidden = 6;
  c.dec_embed = 5;
  c.attn_dim = 6;
  c.attn_loc_filters = 3;
  c.attn_loc_kernel = 5;
  c.cls_channels = 7;
  c.syn_prenet = 6;
  c.syn_lstm_hidden = 8;
  c.syn_postnet_channels = 7;
  c.spk_embed = 4;
  c.prenet_dropout = 0.0;
  c.postnet_dropout = 0.0;
  c.dis_channels = 6;
  c.n_speakers = 2;
  c.n_phonemes = 3;
  return c;
}

// Batch of `valid` frame counts padded to a shared multiple of four.
ag::NodePtr random_mel(Rng& rng, const std::vector<int>& valid, int mel_dim,
                       int extra_pad = 0) {
  int max_v = 0;
  for (int v : valid) max_v = std::max(max_v, v);
  int total = ((max_v + 3) / 4) * 4 + extra_pad;
  ag::Value val;
  for (int v : valid) {
    ag::Mat m = ag::Mat::Zero(total, mel_dim);
    m.topRows(v) = random_mat(rng, v, mel_dim);
    val.push_back(m);
  }
  return ag::constant(std::move(val));
}

}  // namespace

TEST_CASE("param store names, counts and fingerprints") {
  ParamStore ps;
  Rng rng(7);
  auto a = ps.param("x.w", 3, 4, Init::kUniformFanIn, rng);
  ps.buffer("x.m", 1, 4, 0.0);
  CHECK(ps.lookup("x.w") == a);
  CHECK(ps.has("x.m"));
  CHECK(!ps.has("x.q"));
  CHECK_THROWS_AS(ps.lookup("x.q"), ConfigError);
  CHECK_THROWS_AS(ps.param("x.w", 1, 1, Init::kZero, rng), ConfigError);
  CHECK(ps.scalar_count() == 12);         // buffers do not count
  CHECK(ps.trainable("x.").size() == 1);  // buffers are not trainable
  uint64_t f1 = ps.arch_fingerprint();

  ParamStore ps2;
  Rng rng2(9);
  ps2.param("x.w", 3, 4, Init::kUniformFanIn, rng2);
  ps2.buffer("x.m", 1, 4, 0.0);
  CHECK(ps2.arch_fingerprint() == f1);  // values differ, architecture equal

  ParamStore ps3;
  ps3.param("x.w", 4, 3, Init::kZero, rng);
  ps3.buffer("x.m", 1, 4, 0.0);
  CHECK(ps3.arch_fingerprint() != f1);  // shape is part of the identity
}

TEST_CASE("orthogonal init is orthonormal along the short dimension") {
  Rng rng(3);
  ParamStore ps;
  auto cell = LstmCell::create(ps, "c", 5, 4, rng);
  // wh is 4 x 16: rows must be orthonormal
  ag::Mat g = cell.wh->m() * cell.wh->m().transpose();
  CHECK((g - ag::Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
  // forget-gate bias starts at one, the other gates at zero
  CHECK(cell.b->m().middleCols(4, 4).minCoeff() == 1.0);
  CHECK(cell.b->m().leftCols(4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("batch norm normalizes valid rows and tracks running stats") {
  NetConfig cfg = tiny_config();
  ParamStore ps;
  auto bn = BatchNorm1d::create(ps, "bn", 3, cfg);
  Rng rng(11);
  std::vector<int> valid = {5, 3};
  ag::Value v = random_value(rng, {8, 8}, 3);
  for (size_t i = 0; i < v.size(); ++i) v[i].bottomRows(8 - valid[i]).setZero();
  auto x = ag::constant(v);

  auto y = bn.forward(x, valid, Mode::kTrain);
  // valid rows have zero mean and unit (biased) variance per channel
  ag::Mat rows(valid[0] + valid[1], 3);
  rows << y->val[0].topRows(valid[0]), y->val[1].topRows(valid[1]);
  ag::Mat mean = rows.colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() < 1e-12);
  ag::Mat var = (rows.rowwise() - mean.row(0)).array().square().colwise().mean();
  CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-4);  // eps shifts it slightly

  // adding pad rows must not change the statistics or the valid outputs
  ag::Value v2 = v;
  for (auto& m : v2) {
    ag::Mat bigger = ag::Mat::Zero(12, 3);
    bigger.topRows(8) = m;
    m = bigger;
  }
  ParamStore ps2;
  auto bn2 = BatchNorm1d::create(ps2, "bn", 3, cfg);
  auto y2 = bn2.forward(ag::constant(v2), valid, Mode::kTrain);
  for (size_t i = 0; i < 2; ++i) {
    double d = (y2->val[i].topRows(valid[i]) - y->val[i].topRows(valid[i]))
                   .cwiseAbs()
                   .maxCoeff();
    CHECK(d == 0.0);
  }
  CHECK((bn2.run_mean->m() - bn.run_mean->m()).cwiseAbs().maxCoeff() == 0.0);

  // eval mode uses the buffers, not the batch
  auto ye = bn.forward(x, valid, Mode::kEval);
  ag::Mat expect = (x->val[0].row(0).array() - bn.run_mean->m().array()) /
                   (bn.run_var->m().array() + cfg.bn_eps).sqrt();
  CHECK((ye->val[0].row(0) - expect.matrix()).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(bn.forward(x, {1, 0}, Mode::kTrain), NumericError);
}

TEST_CASE("dropout scales kept entries and vanishes in eval mode") {
  Rng rng(5);
  auto x = ag::constant(ag::Mat::Ones(50, 40));
  auto y = dropout(x, 0.5, Mode::kTrain, rng);
  int zeros = 0, twos = 0;
  for (Eigen::Index r = 0; r < 50; ++r)
    for (Eigen::Index c = 0; c < 40; ++c) {
      if (y->m()(r, c) == 0.0) ++zeros;
      if (y->m()(r, c) == 2.0) ++twos;
    }
  CHECK(zeros + twos == 2000);
  CHECK(zeros > 800);
  CHECK(zeros < 1200);
  CHECK(dropout(x, 0.5, Mode::kEval, rng) == x);
  CHECK(dropout(x, 0.0, Mode::kTrain, rng) == x);
}

TEST_CASE("lstm forward masks pads and ignores pad frames of other items") {
  Rng rng(13);
  ParamStore ps;
  auto cell = LstmCell::create(ps, "c", 3, 4, rng);
  std::vector<int> valid = {6, 4};
  auto x = random_mel(rng, valid, 3);
  auto y = lstm_forward(cell, x, valid);
  CHECK(y->val[0].rows() == x->val[0].rows());
  CHECK(y->val[1].bottomRows(y->val[1].rows() - 4).cwiseAbs().maxCoeff() == 0.0);

  // longer shared padding leaves every valid row untouched
  ag::Value v2 = x->val;
  for (auto& m : v2) {
    ag::Mat bigger = ag::Mat::Zero(m.rows() + 8, 3);
    bigger.topRows(m.rows()) = m;
    m = bigger;
  }
  auto y2 = lstm_forward(cell, ag::constant(v2), valid);
  for (size_t i = 0; i < 2; ++i) {
    double d =
        (y2->val[i].topRows(valid[i]) - y->val[i].topRows(valid[i])).cwiseAbs().maxCoeff();
    CHECK(d == 0.0);
  }
}

TEST_CASE("blstm backward direction sees the future, not the pads") {
  Rng rng(17);
  ParamStore ps;
  auto f = LstmCell::create(ps, "f", 3, 4, rng);
  auto b = LstmCell::create(ps, "b", 3, 4, rng);
  std::vector<int> valid = {5, 7};
  auto x = random_mel(rng, valid, 3);
  auto y = blstm_forward(f, b, x, valid);
  CHECK(y->cols() == 8);

  // the backward half at the last valid frame equals a single step from rest
  auto xt = ag::constant(ag::Mat(x->val[0].row(valid[0] - 1)));
  auto h0 = ag::constant(ag::Mat::Zero(1, 4));
  auto [h1, c1] = b.step(xt, h0, h0);
  CHECK((y->val[0].row(valid[0] - 1).rightCols(4) - h1->m().row(0)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("recognizer halves time twice and keeps the padding contract") {
  NetConfig cfg = tiny_config();
  Rng init(23);
  ParamStore ps;
  auto rec = Recognizer::create(ps, cfg, init);
  Rng data(29);
  Rng drop(31);
  std::vector<int> valid = {14, 9, 16};
  auto mel = random_mel(data, valid, cfg.mel_dim);
  auto out = rec.forward(mel, valid, Mode::kEval, drop);
  CHECK(out.h1->val[0].rows() == 8);   // 16 -> 8
  CHECK(out.h->val[0].rows() == 4);    // -> 4
  CHECK(out.valid_h1 == std::vector<int>{7, 5, 8});
  CHECK(out.valid_h == std::vector<int>{4, 3, 4});
  CHECK(out.h->cols() == cfg.h_dim());
  for (size_t i = 0; i < valid.size(); ++i) {
    auto& m = out.h->val[i];
    if (m.rows() > out.valid_h[i])
      CHECK(m.bottomRows(m.rows() - out.valid_h[i]).cwiseAbs().maxCoeff() == 0.0);
  }

  // same items, more shared padding: valid rows must match exactly
  auto mel2 = random_mel(data, valid, cfg.mel_dim, 8);
  for (size_t i = 0; i < valid.size(); ++i)
    mel2->val[i].topRows(valid[i]) = mel->val[i].topRows(valid[i]);
  auto out2 = rec.forward(mel2, valid, Mode::kEval, drop);
  for (size_t i = 0; i < valid.size(); ++i) {
    double d = (out2.h->val[i].topRows(out.valid_h[i]) -
                out.h->val[i].topRows(out.valid_h[i]))
                   .cwiseAbs()
                   .maxCoeff();
    CHECK(d < 1e-12);
  }
}

TEST_CASE("speaker classifier emits masked frame logits") {
  NetConfig cfg = tiny_config();
  Rng init(37);
  ParamStore ps;
  auto cls = SpeakerClassifier::create(ps, "cls", cfg, init);
  Rng data(41);
  std::vector<int> valid = {6, 3};
  auto h = random_mel(data, valid, cfg.h_dim());
  auto y = cls.forward(h, valid, Mode::kTrain);
  CHECK(y->cols() == cfg.n_speakers);
  CHECK(y->val[1].bottomRows(y->val[1].rows() - 3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("phoneme decoder teacher forcing emits log distributions per step") {
  NetConfig cfg = tiny_config();
  Rng init(43);
  ParamStore ps;
  auto dec = PhonemeDecoder::create(ps, cfg, init);
  Rng data(47);
  std::vector<int> valid = {8, 5};
  auto h = random_mel(data, valid, cfg.h_dim());
  std::vector<std::vector<int>> targets = {{0, 2, 1}, {1}};
  auto logps = dec.forward_teacher(h, valid, targets);
  CHECK(logps.size() == 4);  // max length + end symbol
  for (const auto& lp : logps) {
    CHECK(lp->val.size() == 1);
    CHECK(lp->m().rows() == 2);
    CHECK(lp->m().cols() == cfg.n_phonemes + 1);
    ag::Mat sums = lp->m().array().exp().rowwise().sum();
    CHECK((sums.array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("greedy decode is deterministic and respects the step cap") {
  NetConfig cfg = tiny_config();
  Rng init(53);
  ParamStore ps;
  auto dec = PhonemeDecoder::create(ps, cfg, init);
  Rng data(59);
  std::vector<int> valid = {8, 6};
  auto h = random_mel(data, valid, cfg.h_dim());
  auto a = dec.greedy_decode(h, valid);
  auto b = dec.greedy_decode(h, valid);
  CHECK(a.seqs == b.seqs);
  CHECK(a.truncated == b.truncated);
  for (const auto& s : a.seqs) CHECK(s.size() <= 16);  // 2 * max valid
  if (!a.truncated)
    for (const auto& s : a.seqs) CHECK(s.size() < 16);
}

TEST_CASE("synthesizer output geometry and padding contract") {
  NetConfig cfg = tiny_config();
  Rng init(61);
  ParamStore ps;
  auto syn = Synthesizer::create(ps, cfg, init);
  Rng data(67);
  Rng drop(71);
  std::vector<int> valid_x = {14, 9};
  auto mel = random_mel(data, valid_x, cfg.mel_dim);  // teacher frames
  int total = static_cast<int>(mel->val[0].rows());
  std::vector<int> valid_h = shrink_valid(valid_x, 4);
  auto h = random_mel(data, valid_h, cfg.h_dim());
  // align H padding with the frame padding
  for (auto& m : h->val) {
    ag::Mat fixed = ag::Mat::Zero(total / 4, cfg.h_dim());
    fixed.topRows(std::min<Eigen::Index>(m.rows(), total / 4)) =
        m.topRows(std::min<Eigen::Index>(m.rows(), total / 4));
    m = fixed;
  }
  for (size_t i = 0; i < valid_h.size(); ++i)
    h->val[i].bottomRows(h->val[i].rows() - valid_h[i]).setZero();

  auto out = syn.forward(h, valid_h, {0, 1}, valid_x, total, Mode::kTrain, drop, &mel);
  CHECK(out.pre->val[0].rows() == total);
  CHECK(out.post->cols() == cfg.mel_dim);
  for (size_t i = 0; i < valid_x.size(); ++i) {
    auto& m = out.post->val[i];
    CHECK(m.bottomRows(m.rows() - valid_x[i]).cwiseAbs().maxCoeff() == 0.0);
  }

  // free-running mode also runs and produces the same geometry
  auto fr = syn.forward(h, valid_h, {0, 1}, valid_x, total, Mode::kEval, drop, nullptr);
  CHECK(fr.post->val[1].rows() == total);

  // eval mode is deterministic
  auto fr2 = syn.forward(h, valid_h, {0, 1}, valid_x, total, Mode::kEval, drop, nullptr);
  for (size_t i = 0; i < 2; ++i)
    CHECK((fr.post->val[i] - fr2.post->val[i]).cwiseAbs().maxCoeff() == 0.0);

  // speaker identity changes the output
  auto other = syn.forward(h, valid_h, {1, 0}, valid_x, total, Mode::kEval, drop, nullptr);
  CHECK((other.post->val[0] - fr.post->val[0]).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("discriminator scores are means over valid critic frames") {
  NetConfig cfg = tiny_config();
  Rng init(73);
  ParamStore ps;
  auto dis = Discriminator::create(ps, "dis0", cfg, init);
  Rng data(79);
  std::vector<int> valid = {16, 11};
  auto x = random_mel(data, valid, cfg.mel_dim);
  auto s = dis.forward(x, valid);
  CHECK(s->val.size() == 1);
  CHECK(s->m().rows() == 2);
  CHECK(s->m().cols() == 1);

  // padding invariance holds exactly: no batch norm couples items
  auto x2 = random_mel(data, valid, cfg.mel_dim, 8);
  for (size_t i = 0; i < valid.size(); ++i)
    x2->val[i].topRows(valid[i]) = x->val[i].topRows(valid[i]);
  auto s2 = dis.forward(x2, valid);
  CHECK((s->m() - s2->m()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("recognizer gradients match finite differences") {
  NetConfig cfg = tiny_config();
  Rng init(83);
  ParamStore ps;
  auto rec = Recognizer::create(ps, cfg, init);
  Rng data(89);
  std::vector<int> valid = {7, 5};
  auto mel = random_mel(data, valid, cfg.mel_dim);
  auto v1 = shrink_valid(valid, 2);
  auto vh = shrink_valid(valid, 4);
  auto t1 = ag::constant(random_value(data, {4, 4}, cfg.h_dim()));
  auto t2 = ag::constant(random_value(data, {2, 2}, cfg.h_dim()));
  Rng drop(97);
  auto make_loss = [&]() {
    auto out = rec.forward(mel, valid, Mode::kTrain, drop);
    return ag::add(ag::masked_mse(out.h1, t1, v1), ag::masked_mse(out.h, t2, vh));
  };
  CHECK(max_grad_rel_err(make_loss, ps.trainable()) < 1e-6);
}

TEST_CASE("speaker classifier gradients match finite differences") {
  NetConfig cfg = tiny_config();
  Rng init(101);
  ParamStore ps;
  auto cls = SpeakerClassifier::create(ps, "cls", cfg, init);
  Rng data(103);
  std::vector<int> valid = {5, 3};
  auto h = random_mel(data, valid, cfg.h_dim());
  auto w = ag::constant(random_value(data, {8, 8}, cfg.n_speakers, 0.5));
  auto make_loss = [&]() {
    auto y = cls.forward(h, valid, Mode::kTrain);
    return ag::sum_all(ag::mul(y, w));
  };
  CHECK(max_grad_rel_err(make_loss, ps.trainable()) < 1e-6);
}

TEST_CASE("phoneme decoder gradients match finite differences") {
  NetConfig cfg = tiny_config();
  Rng init(107);
  ParamStore ps;
  auto dec = PhonemeDecoder::create(ps, cfg, init);
  Rng data(109);
  std::vector<int> valid = {6, 4};
  auto h = random_mel(data, valid, cfg.h_dim());
  std::vector<std::vector<int>> targets = {{0, 2}, {1}};
  ag::Mat w1 = random_mat(data, 2, cfg.n_phonemes + 1, 0.3);
  ag::Mat w2 = random_mat(data, 2, cfg.n_phonemes + 1, 0.3);
  ag::Mat w3 = random_mat(data, 2, cfg.n_phonemes + 1, 0.3);
  auto make_loss = [&]() {
    auto lps = dec.forward_teacher(h, valid, targets);
    auto l = ag::sum_all(ag::mul(lps[0], ag::constant(w1)));
    l = ag::add(l, ag::sum_all(ag::mul(lps[1], ag::constant(w2))));
    return ag::add(l, ag::sum_all(ag::mul(lps[2], ag::constant(w3))));
  };
  CHECK(max_grad_rel_err(make_loss, ps.trainable()) < 1e-6);
}

TEST_CASE("synthesizer gradients match finite differences in both modes") {
  NetConfig cfg = tiny_config();
  Rng init(113);
  ParamStore ps;
  auto syn = Synthesizer::create(ps, cfg, init);
  Rng data(127);
  std::vector<int> valid_x = {8, 6};
  auto mel = random_mel(data, valid_x, cfg.mel_dim);
  int total = static_cast<int>(mel->val[0].rows());
  auto valid_h = shrink_valid(valid_x, 4);
  ag::Value hv;
  for (int v : valid_h) {
    ag::Mat m = ag::Mat::Zero(total / 4, cfg.h_dim());
    m.topRows(v) = random_mat(data, v, cfg.h_dim());
    hv.push_back(m);
  }
  auto h = ag::constant(hv);
  Rng drop(131);

  // zero biases put the first prenet activation exactly on the relu kink,
  // where finite differences are meaningless; nudge every parameter off it
  for (const auto& p : ps.trainable())
    p->val[0] += random_mat(data, static_cast<int>(p->m().rows()),
                            static_cast<int>(p->m().cols()), 0.02);

  auto teacher_loss = [&]() {
    auto out = syn.forward(h, valid_h, {0, 1}, valid_x, total, Mode::kTrain, drop, &mel);
    return ag::add(ag::masked_mse(out.pre, mel, valid_x),
                   ag::masked_mse(out.post, mel, valid_x));
  };
  CHECK(max_grad_rel_err(teacher_loss, ps.trainable()) < 1e-6);

  auto free_loss = [&]() {
    auto out = syn.forward(h, valid_h, {0, 1}, valid_x, total, Mode::kTrain, drop, nullptr);
    return ag::masked_mse(out.post, mel, valid_x);
  };
  CHECK(max_grad_rel_err(free_loss, ps.trainable()) < 1e-6);
}

TEST_CASE("discriminator gradients and the gradient penalty double backward") {
  NetConfig cfg = tiny_config();
  Rng init(137);
  ParamStore ps;
  auto dis = Discriminator::create(ps, "dis0", cfg, init);
  Rng data(139);
  std::vector<int> valid = {8, 6};
  auto x = random_mel(data, valid, cfg.mel_dim);
  auto score_loss = [&]() { return ag::sum_all(dis.forward(x, valid)); };
  CHECK(max_grad_rel_err(score_loss, ps.trainable()) < 1e-6);

  // the training-time penalty: second derivatives through the critic
  auto xhat = ag::param(x->val);
  auto gp_loss = [&]() {
    auto score = ag::sum_all(dis.forward(xhat, valid));
    auto gx = ag::gradient(score, {xhat}, /*create_graph=*/true)[0];
    auto norm = ag::sqrt_(ag::add_scalar(ag::sum_all(ag::square(gx)), 1e-12));
    return ag::square(ag::add_scalar(norm, -1.0));
  };
  CHECK(max_grad_rel_err(gp_loss, ps.trainable()) < 1e-6);
  CHECK(max_grad_rel_err(gp_loss, {xhat}) < 1e-6);
}

TEST_CASE("model partitions cover every trainable parameter once") {
  NetConfig cfg = NetConfig::toy(3, 8);
  auto m = Model::create(cfg, 42, /*with_discriminators=*/true);
  CHECK(m->dis.size() == 3);
  long total = m->store.scalar_count();
  long parts = 0;
  for (const auto& p : m->main_params()) parts += static_cast<long>(p->m().size());
  for (const auto& p : m->classifier_params()) parts += static_cast<long>(p->m().size());
  for (const auto& p : m->discriminator_params()) parts += static_cast<long>(p->m().size());
  CHECK(parts == total);

  auto m2 = Model::create(cfg, 42, true);
  CHECK(m2->store.arch_fingerprint() == m->store.arch_fingerprint());
  // same seed -> bit-identical initialization
  const auto& e1 = m->store.entries();
  const auto& e2 = m2->store.entries();
  REQUIRE(e1.size() == e2.size());
  for (size_t i = 0; i < e1.size(); ++i) {
    CHECK(e1[i].name == e2[i].name);
    CHECK((e1[i].node->m() - e2[i].node->m()).cwiseAbs().maxCoeff() == 0.0);
  }

  auto m3 = Model::create(cfg, 43, true);
  bool any_diff = false;
  for (size_t i = 0; i < e1.size(); ++i)
    if (e1[i].trainable &&
        (e1[i].node->m() - m3->store.entries()[i].node->m()).cwiseAbs().maxCoeff() > 0)
      any_diff = true;
  CHECK(any_diff);

  auto pretrain = Model::create(cfg, 42, false);
  CHECK(pretrain->discriminator_params().empty());
  CHECK(pretrain->store.has("rec.conv1.w"));
  CHECK(!pretrain->store.has("dis0.c1.w"));

  CHECK_THROWS_AS(Model::create(NetConfig::toy(1, 8), 1, false), ConfigError);
}

TEST_CASE("recognizer to synthesizer round trip composes") {
  NetConfig cfg = tiny_config();
  auto m = Model::create(cfg, 7, false);
  Rng data(149);
  Rng drop(151);
  std::vector<int> valid = {12, 10};
  auto mel = random_mel(data, valid, cfg.mel_dim);
  int total = static_cast<int>(mel->val[0].rows());
  auto r = m->rec.forward(mel, valid, Mode::kTrain, drop);
  auto s = m->syn.forward(r.h, r.valid_h, {0, 1}, valid, total, Mode::kTrain, drop, &mel);
  auto loss = ag::masked_mse(s.post, mel, valid);
  CHECK(ag::all_finite(loss));
  auto grads = ag::gradient(loss, m->main_params());
  for (const auto& g : grads) CHECK(ag::all_finite(g));
}
