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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "advc/corpus.hpp"
#include "advc/eval.hpp"
#include "advc/toygen.hpp"
#include "advc/wavio.hpp"

using namespace advc;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

double median_voiced(const std::vector<double>& f0) {
  std::vector<double> v;
  for (double x : f0)
    if (x > 0.0) v.push_back(x);
  REQUIRE(!v.empty());
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("corpus generation is deterministic") {
  toy::ToyConfig cfg;
  cfg.train_per_speaker = 3;
  cfg.val_per_speaker = 1;
  cfg.test_texts = 2;
  auto a = toy::generate_toy_corpus("/tmp/advc_toy_a", cfg);
  auto b = toy::generate_toy_corpus("/tmp/advc_toy_b", cfg);

  CHECK(slurp(a.train_manifest) == slurp(b.train_manifest));
  CHECK(slurp(a.test_manifest) == slurp(b.test_manifest));
  auto wa = read_wav("/tmp/advc_toy_a/wav/train_spk_a_000.wav");
  auto wb = read_wav("/tmp/advc_toy_b/wav/train_spk_a_000.wav");
  CHECK(wa.samples == wb.samples);

  std::filesystem::remove_all("/tmp/advc_toy_a");
  std::filesystem::remove_all("/tmp/advc_toy_b");
}

TEST_CASE("manifests load and the test split is parallel") {
  toy::ToyConfig cfg;
  cfg.n_speakers = 3;
  cfg.train_per_speaker = 4;
  cfg.val_per_speaker = 2;
  cfg.test_texts = 3;
  auto c = toy::generate_toy_corpus("/tmp/advc_toy_m", cfg);

  auto train = load_manifest(c.train_manifest);
  CHECK(train.utts.size() == 12);
  CHECK(train.speakers == c.speakers);
  for (const auto& ph : train.phoneme_inventory)
    CHECK(std::find(c.phones.begin(), c.phones.end(), ph) != c.phones.end());
  for (const auto& u : train.utts) {
    CHECK(u.phonemes.size() >= 3);
    CHECK(u.phonemes.size() <= 6);
    auto w = read_wav(u.audio_path);
    CHECK(w.sample_rate == cfg.sample_rate);
    CHECK(w.samples.size() > 3000);
  }

  auto test = load_manifest(c.test_manifest);
  CHECK(test.utts.size() == 9);
  std::map<std::string, std::vector<std::vector<std::string>>> by_text;
  for (const auto& u : test.utts)
    by_text[u.id.substr(0, 8)].push_back(u.phonemes);  // "test_tNN"
  CHECK(by_text.size() == 3);
  for (const auto& [text, versions] : by_text) {
    CHECK(versions.size() == 3);
    for (const auto& v : versions) CHECK(v == versions[0]);
  }

  CHECK_THROWS_AS(toy::generate_toy_corpus("/tmp/advc_toy_x", toy::ToyConfig{5}),
                  ConfigError);
  std::filesystem::remove_all("/tmp/advc_toy_m");
}

TEST_CASE("voices carry their pitch and speakers separate on mel frames") {
  dsp::FeatureConfig fcfg;
  fcfg.n_fft = 512;
  fcfg.win_length = 400;
  fcfg.hop_length = 160;
  fcfg.n_mels = 16;
  fcfg.fmax = 4000.0;

  std::vector<int> text{0, 3, 5, 2};
  Rng r1(1), r2(2);
  auto w0 = toy::render_utterance(text, 0, fcfg.sample_rate, r1);
  auto w1 = toy::render_utterance(text, 1, fcfg.sample_rate, r2);

  double m0 = median_voiced(dsp::estimate_f0(w0, fcfg));
  double m1 = median_voiced(dsp::estimate_f0(w1, fcfg));
  CHECK(std::abs(m0 - toy::voice_pitch(0)) < 15.0);
  CHECK(std::abs(m1 - toy::voice_pitch(1)) < 15.0);

  // a frame-level probe should find the voices trivially separable
  std::vector<Eigen::MatrixXd> feats;
  std::vector<int> labels;
  Rng rr(3);
  for (int u = 0; u < 6; ++u) {
    Rng ur(100 + static_cast<uint64_t>(u));
    std::vector<int> t;
    for (int i = 0; i < 4; ++i) t.push_back(rr.uniform_int(8));
    int voice = u % 2;
    feats.push_back(dsp::log_mel(
        toy::render_utterance(t, voice, fcfg.sample_rate, ur), fcfg));
    labels.push_back(voice);
  }
  auto probe = eval::SpeakerProbe::create(16, 8, 2, 4);
  probe.fit(feats, labels, 120, 0.05);
  CHECK(probe.accuracy(feats, labels) == 1.0);
}

TEST_CASE("generated corpora feed straight into dataset loading") {
  toy::ToyConfig cfg;
  cfg.train_per_speaker = 2;
  cfg.val_per_speaker = 1;
  cfg.test_texts = 1;
  auto c = toy::generate_toy_corpus("/tmp/advc_toy_d", cfg);

  dsp::FeatureConfig fcfg;
  fcfg.n_fft = 256;
  fcfg.win_length = 200;
  fcfg.hop_length = 80;
  fcfg.n_mels = 12;
  fcfg.fmax = 4000.0;

  auto ds = load_dataset(c.train_manifest, fcfg);
  CHECK(ds.mel.size() == 4);
  CHECK(ds.stats.feature_fingerprint == fcfg.fingerprint());

  // features arrive normalized under the dataset's own stats
  double total = 0.0;
  long n = 0;
  for (const auto& m : ds.mel) {
    total += m.sum();
    n += m.size();
  }
  CHECK(std::abs(total / static_cast<double>(n)) < 1e-9);

  auto batch = ds.make_batch({0, 1, 2, 3});
  CHECK(batch.mel.size() == 4);
  CHECK(batch.mel[0].rows() % 4 == 0);
  CHECK(batch.speaker_ids.size() == 4);

  // a val set reusing train stats keeps the same normalization
  auto vs = load_dataset(c.val_manifest, fcfg, &ds.stats);
  CHECK(vs.stats.mean == ds.stats.mean);

  std::filesystem::remove_all("/tmp/advc_toy_d");
}
