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
#include <sstream>

#include "advc/common.hpp"
#include "advc/trainer.hpp"
#include "testutil.hpp"

using namespace advc;
using test::random_mat;

namespace {

NetConfig tiny_config() {
  NetConfig c;
  c.mel_dim = 6;
  c.rec_conv_channels = 8;
  c.rec_lstm_hidden = 4;
  c.rec_dropout = 0.1;
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
  c.dis_channels = 6;
  c.n_speakers = 2;
  c.n_phonemes = 3;
  return c;
}

DataSet synth_dataset(int n_utts, uint64_t seed, int mel_dim = 6) {
  DataSet ds;
  ds.manifest.speakers = {"s0", "s1"};
  ds.manifest.phoneme_inventory = {"aa", "bb", "cc", "dd"};
  Rng rng(seed);
  for (int i = 0; i < n_utts; ++i) {
    Utterance u;
    u.id = "utt" + std::to_string(i);
    u.speaker = i % 2 == 0 ? "s0" : "s1";
    int n_ph = 2 + i % 3;
    for (int p = 0; p < n_ph; ++p)
      u.phonemes.push_back(ds.manifest.phoneme_inventory[
          static_cast<size_t>(rng.uniform_int(4))]);
    ds.manifest.utts.push_back(std::move(u));
    int t = 16 + (i % 3) * 4;
    ds.mel.push_back(random_mat(rng, t, mel_dim, 0.5));
  }
  ds.stats.mean = Eigen::RowVectorXd::Zero(mel_dim);
  ds.stats.stdev = Eigen::RowVectorXd::Ones(mel_dim);
  ds.stats.feature_fingerprint = ds.cfg.fingerprint();
  return ds;
}

std::vector<ag::Mat> snapshot_params(const ParamStore& store, const std::string& prefix) {
  std::vector<ag::Mat> out;
  for (const auto& e : store.entries())
    if (e.name.rfind(prefix, 0) == 0) out.push_back(e.node->m());
  return out;
}

bool identical(const std::vector<ag::Mat>& a, const std::vector<ag::Mat>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!(a[i] == b[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("adam follows the standard update and partitions by prefix") {
  ParamStore ps;
  Rng rng(1);
  auto p = ps.param("a.w", 1, 1, Init::kZero, rng);
  ps.param("b.w", 1, 1, Init::kZero, rng);
  ps.buffer("a.buf", 1, 1, 0.0);
  Adam opt(ps, {"a."}, 0.001);
  REQUIRE(opt.params().size() == 1);  // buffer and other prefix excluded

  // constant unit gradient: bias correction makes each step almost exactly lr
  for (int k = 1; k <= 3; ++k) {
    opt.step({ag::constant(ag::Mat::Ones(1, 1))});
    CHECK(std::abs(p->m()(0, 0) + 0.001 * k) < 1e-9);
  }

  ag::Mat nan_g(1, 1);
  nan_g(0, 0) = std::nan("");
  CHECK_THROWS_AS(opt.step({ag::constant(nan_g)}), NumericError);

  std::map<std::string, AdamSlot> st;
  opt.export_state(st);
  REQUIRE(st.count("a.w") == 1);
  CHECK(st["a.w"].t == 3);

  Adam opt2(ps, {"a."}, 0.001);
  opt2.import_state(st);
  std::map<std::string, AdamSlot> st2;
  opt2.export_state(st2);
  CHECK(st2["a.w"].m == st["a.w"].m);

  st["a.w"].m = ag::Mat::Zero(2, 2);
  st["a.w"].v = ag::Mat::Zero(2, 2);
  CHECK_THROWS_AS(opt2.import_state(st), IntegrityError);
}

TEST_CASE("training steps run and log finite objectives") {
  NetConfig cfg = tiny_config();
  auto model = Model::create(cfg, 5, false);
  DataSet ds = synth_dataset(6, 17);
  TrainConfig tc;
  tc.seed = 7;
  tc.batch_size = 4;
  tc.max_steps = 3;
  tc.weights = LossWeights::pretrain();
  std::ostringstream log;
  Trainer tr(*model, ds, nullptr, tc, &log);
  auto res = tr.run();
  CHECK(res.steps == 3);
  CHECK(std::isfinite(res.final_total));
  CHECK(!res.ran_validation);

  // one JSON object per step with the expected keys
  std::istringstream lines(log.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    CHECK(line.find("\"step\":") != std::string::npos);
    CHECK(line.find("\"rec\":") != std::string::npos);
    ++count;
  }
  CHECK(count == 3);
}

TEST_CASE("partitions not scheduled never move") {
  NetConfig cfg = tiny_config();
  DataSet ds = synth_dataset(6, 19);

  SUBCASE("main-only schedule leaves classifiers and critics untouched") {
    auto model = Model::create(cfg, 5, true);
    TrainConfig tc;
    tc.seed = 3;
    tc.batch_size = 3;
    tc.max_steps = 5;
    tc.classifier_updates = 0;  // adversarial terms active, classifiers frozen
    tc.gan_warmup_steps = 1000;
    tc.weights = LossWeights::finetune();
    auto cls_before = snapshot_params(model->store, "cls");
    auto dis_before = snapshot_params(model->store, "dis");
    auto main_before = snapshot_params(model->store, "rec.");
    Trainer tr(*model, ds, nullptr, tc, nullptr);
    tr.run();
    CHECK(identical(snapshot_params(model->store, "cls"), cls_before));
    CHECK(identical(snapshot_params(model->store, "dis"), dis_before));
    CHECK(!identical(snapshot_params(model->store, "rec."), main_before));
  }

  SUBCASE("frozen recognizer trains only the synthesizer") {
    auto model = Model::create(cfg, 5, false);
    TrainConfig tc;
    tc.seed = 3;
    tc.batch_size = 3;
    tc.max_steps = 3;
    tc.freeze_recognizer = true;
    auto rec_before = snapshot_params(model->store, "rec.");
    auto dec_before = snapshot_params(model->store, "dec.");
    auto cls_before = snapshot_params(model->store, "cls");
    auto syn_before = snapshot_params(model->store, "syn.");
    Trainer tr(*model, ds, nullptr, tc, nullptr);
    tr.run();
    CHECK(identical(snapshot_params(model->store, "rec."), rec_before));
    CHECK(identical(snapshot_params(model->store, "dec."), dec_before));
    CHECK(identical(snapshot_params(model->store, "cls"), cls_before));
    CHECK(!identical(snapshot_params(model->store, "syn."), syn_before));
  }

  SUBCASE("critic warmup delays the first critic update") {
    auto model = Model::create(cfg, 5, true);
    TrainConfig tc;
    tc.seed = 3;
    tc.batch_size = 4;
    tc.max_steps = 1;
    tc.no_adv = true;
    tc.gan_warmup_steps = 2;
    tc.weights = LossWeights::finetune();
    Trainer tr(*model, ds, nullptr, tc, nullptr);
    auto dis_before = snapshot_params(model->store, "dis");
    auto s1 = tr.step_once();
    CHECK(s1.dis == 0.0);
    CHECK(identical(snapshot_params(model->store, "dis"), dis_before));
    auto s2 = tr.step_once();
    CHECK(s2.dis == 0.0);
    auto s3 = tr.step_once();  // step index 2 reaches the warmup bound
    CHECK(s3.dis != 0.0);
    CHECK(s3.gan != 0.0);
    CHECK(!identical(snapshot_params(model->store, "dis"), dis_before));
  }
}

TEST_CASE("training is reproducible from the seed") {
  NetConfig cfg = tiny_config();
  DataSet ds = synth_dataset(6, 23);
  TrainConfig tc;
  tc.seed = 11;
  tc.batch_size = 3;
  tc.max_steps = 5;
  tc.weights = LossWeights::finetune();

  std::ostringstream log1, log2;
  auto m1 = Model::create(cfg, 5, true);
  Trainer t1(*m1, ds, nullptr, tc, &log1);
  t1.run();
  auto m2 = Model::create(cfg, 5, true);
  Trainer t2(*m2, ds, nullptr, tc, &log2);
  t2.run();

  CHECK(log1.str() == log2.str());
  const auto& e1 = m1->store.entries();
  const auto& e2 = m2->store.entries();
  for (size_t i = 0; i < e1.size(); ++i) CHECK(e1[i].node->m() == e2[i].node->m());

  // a different seed must actually change the trajectory
  tc.seed = 12;
  auto m3 = Model::create(cfg, 5, true);
  std::ostringstream log3;
  Trainer t3(*m3, ds, nullptr, tc, &log3);
  t3.run();
  CHECK(log3.str() != log1.str());
}

TEST_CASE("validation drives early stopping") {
  NetConfig cfg = tiny_config();
  DataSet ds = synth_dataset(6, 29);
  DataSet val = synth_dataset(4, 31);
  TrainConfig tc;
  tc.seed = 13;
  tc.batch_size = 3;
  tc.max_steps = 50;
  tc.lr = 1e-12;  // effectively frozen: validation cannot improve
  tc.val_interval = 1;
  tc.patience = 1;
  auto model = Model::create(cfg, 5, false);
  Trainer tr(*model, ds, &val, tc, nullptr);
  int best_calls = 0;
  tr.on_best = [&](uint64_t, double) { ++best_calls; };
  auto res = tr.run();
  CHECK(res.early_stopped);
  CHECK(res.steps == 2);  // first pass sets the best, second exhausts patience
  CHECK(best_calls == 1);
  CHECK(res.ran_validation);

  double v1 = tr.validate();
  double v2 = tr.validate();
  CHECK(v1 == v2);
}

TEST_CASE("non-finite objectives abort with the offending batch") {
  NetConfig cfg = tiny_config();
  DataSet ds = synth_dataset(4, 37);
  auto model = Model::create(cfg, 5, false);
  model->store.lookup("syn.proj.w")->val[0](0, 0) = std::nan("");
  TrainConfig tc;
  tc.seed = 17;
  tc.batch_size = 2;
  tc.max_steps = 1;
  tc.no_adv = true;
  Trainer tr(*model, ds, nullptr, tc, nullptr);
  CHECK_THROWS_WITH_AS(tr.step_once(), doctest::Contains("non-finite"), NumericError);
}

TEST_CASE("config validation rejects nonsense") {
  TrainConfig tc;
  CHECK_THROWS_AS(tc.validate(), ConfigError);  // zero steps
  tc.max_steps = 10;
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc.batch_size = 4;
  tc.lr = 0.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc.lr = 0.001;
  tc.patience = -1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc.patience = 0;
  tc.lr_final_scale = -0.1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc.lr_final_scale = 1.5;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("learning-rate anneal spans full rate to the floor") {
  // endpoints and midpoint of the linear ramp
  CHECK(scheduled_lr(0.001, 1.0, 7, 100) == 0.001);
  CHECK(scheduled_lr(1.0, 0.1, 0, 10) == 1.0);
  CHECK(scheduled_lr(1.0, 0.1, 9, 10) == doctest::Approx(0.1));
  CHECK(scheduled_lr(1.0, 0.0, 5, 11) == doctest::Approx(0.5));
  // degenerate one-step stage keeps the base rate
  CHECK(scheduled_lr(0.002, 0.1, 0, 1) == 0.002);
}
