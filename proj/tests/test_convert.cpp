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
#include <cstdio>

#include "advc/checkpoint.hpp"
#include "advc/convert.hpp"
#include "advc/wavio.hpp"
#include "testutil.hpp"

using namespace advc;
using test::random_mat;

namespace {

NetConfig tiny_config() {
  NetConfig c;
  c.mel_dim = 6;
  c.rec_conv_channels = 8;
  c.rec_lstm_hidden = 4;
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

dsp::FeatureConfig tiny_features() {
  dsp::FeatureConfig f;
  f.n_fft = 256;
  f.win_length = 200;
  f.hop_length = 80;
  f.n_mels = 6;
  f.fmax = 4000.0;
  return f;
}

NormStats unit_stats(int dim, uint64_t fingerprint) {
  NormStats st;
  st.mean = Eigen::RowVectorXd::Zero(dim);
  st.stdev = Eigen::RowVectorXd::Ones(dim);
  st.feature_fingerprint = fingerprint;
  return st;
}

std::string save_toy_model(const NetConfig& cfg, const NormStats& st,
                           const std::string& path, uint64_t seed = 5) {
  auto model = Model::create(cfg, seed, true);
  auto c = snapshot(*model, 1, 42, {"s0", "s1"}, {"aa", "bb", "cc"}, st);
  save_checkpoint(path, c);
  return path;
}

}  // namespace

TEST_CASE("loading a checkpoint reproduces the trained mapping exactly") {
  NetConfig cfg = tiny_config();
  dsp::FeatureConfig fcfg = tiny_features();
  std::string path = "/tmp/advc_convert_a.ckpt";
  save_toy_model(cfg, unit_stats(cfg.mel_dim, fcfg.fingerprint()), path);

  auto cm = load_conversion_model(path);
  CHECK(cm.speakers == std::vector<std::string>{"s0", "s1"});
  CHECK(cm.phonemes == std::vector<std::string>{"aa", "bb", "cc"});
  CHECK(cm.model->dis.empty());  // critic arrays in the file are ignored

  // the loaded model must agree with a direct forward through the source weights
  Rng data(3);
  ag::Mat mel = random_mat(data, 16, cfg.mel_dim, 0.5);
  ag::Mat got = convert_mel(cm, mel, 1);
  auto src = Model::create(cfg, 5, true);
  {
    ag::NoGradGuard guard;
    Rng unused(0);
    auto x = ag::constant(ag::Value{mel});
    auto r = src->rec.forward(x, {16}, Mode::kEval, unused);
    auto s = src->syn.forward(r.h, r.valid_h, {1}, {16}, 16, Mode::kEval, unused, nullptr);
    CHECK(got == ag::Mat(s.post->val[0]));
  }
  std::remove(path.c_str());
}

TEST_CASE("conversion is deterministic and shape preserving") {
  NetConfig cfg = tiny_config();
  std::string path = "/tmp/advc_convert_b.ckpt";
  save_toy_model(cfg, unit_stats(cfg.mel_dim, 123), path);
  auto cm = load_conversion_model(path);
  std::remove(path.c_str());

  Rng data(7);
  ag::Mat mel = random_mat(data, 13, cfg.mel_dim, 0.5);  // not a multiple of four
  ag::Mat a = convert_mel(cm, mel, 0);
  CHECK(a.rows() == 13);
  CHECK(a.cols() == cfg.mel_dim);
  CHECK(a == convert_mel(cm, mel, 0));
  CHECK(a != convert_mel(cm, mel, 1));  // the voice identity must matter

  CHECK_THROWS_AS(convert_mel(cm, mel, 2), ConfigError);
  CHECK_THROWS_AS(convert_mel(cm, ag::Mat::Zero(8, 3), 0), ConfigError);
  CHECK_THROWS_AS(cm.speaker_index("nobody"), DataError);
  CHECK(cm.speaker_index("s1") == 1);

  auto seq = recognize_phonemes(cm, mel);
  CHECK(seq == recognize_phonemes(cm, mel));
  for (int id : seq) {
    CHECK(id >= 0);
    CHECK(id < cfg.n_phonemes);  // end marker stripped
  }
}

TEST_CASE("wav to wav conversion runs the full chain") {
  NetConfig cfg = tiny_config();
  dsp::FeatureConfig fcfg = tiny_features();

  // a short tone as the source utterance
  std::vector<double> tone(3200);
  for (size_t i = 0; i < tone.size(); ++i)
    tone[i] = 0.4 * std::sin(2.0 * M_PI * 220.0 * static_cast<double>(i) / fcfg.sample_rate);
  std::string in_path = "/tmp/advc_convert_in.wav";
  write_wav(in_path, tone, fcfg.sample_rate);

  NormStats st = compute_stats({dsp::log_mel(tone, fcfg)}, fcfg.fingerprint());
  std::string ckpt = "/tmp/advc_convert_c.ckpt";
  save_toy_model(cfg, st, ckpt);
  auto cm = load_conversion_model(ckpt);
  std::remove(ckpt.c_str());

  std::string out_path = "/tmp/advc_convert_out.wav";
  dsp::Mat lm1 = convert_wav(cm, fcfg, in_path, "s1", out_path, 8);
  WavData out1 = read_wav(out_path);
  CHECK(out1.sample_rate == fcfg.sample_rate);
  CHECK(out1.samples.size() == static_cast<size_t>(lm1.rows()) * fcfg.hop_length);

  dsp::Mat lm2 = convert_wav(cm, fcfg, in_path, "s1", out_path, 8);
  WavData out2 = read_wav(out_path);
  CHECK(lm1 == lm2);
  CHECK(out1.samples == out2.samples);

  // mismatched analysis settings must be refused, not silently accepted
  dsp::FeatureConfig other = fcfg;
  other.hop_length = 100;
  CHECK_THROWS_AS(convert_wav(cm, other, in_path, "s1", out_path, 8), IntegrityError);
  CHECK_THROWS_AS(convert_wav(cm, fcfg, in_path, "s9", out_path, 8), DataError);

  std::remove(in_path.c_str());
  std::remove(out_path.c_str());
}
