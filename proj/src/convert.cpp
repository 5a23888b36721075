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

#include "advc/convert.hpp"

#include "advc/checkpoint.hpp"
#include "advc/wavio.hpp"

namespace advc {

int ConversionModel::speaker_index(const std::string& name) const {
  for (size_t i = 0; i < speakers.size(); ++i)
    if (speakers[i] == name) return static_cast<int>(i);
  std::string known;
  for (const auto& s : speakers) known += " " + s;
  throw DataError("unknown speaker '" + name + "'; model knows:" + known);
}

ConversionModel load_conversion_model(const std::string& ckpt_path) {
  Checkpoint c = load_checkpoint(ckpt_path);
  ConversionModel cm;
  cm.cfg = c.cfg;
  cm.model = Model::create(c.cfg, 0, false);
  restore(*cm.model, c);
  cm.speakers = c.speakers;
  cm.phonemes = c.phonemes;
  cm.stats = c.stats;
  return cm;
}

namespace {

// The padded length must satisfy both the recognizer downsampling (4) and
// the synthesizer group size.
int padded_frames(int t, int r) {
  int unit = 4;
  while (unit % r != 0) unit += 4;
  return (t + unit - 1) / unit * unit;
}

ag::NodePtr padded_input(const ag::Mat& mel_norm, int padded) {
  ag::Mat m = ag::Mat::Zero(padded, mel_norm.cols());
  m.topRows(mel_norm.rows()) = mel_norm;
  return ag::constant(ag::Value{m});
}

}  // namespace

ag::Mat convert_mel(ConversionModel& cm, const ag::Mat& mel_norm, int target_speaker) {
  if (mel_norm.cols() != cm.cfg.mel_dim)
    throw ConfigError("convert_mel: input has " + std::to_string(mel_norm.cols()) +
                      " channels, model expects " + std::to_string(cm.cfg.mel_dim));
  if (mel_norm.rows() < 1) throw DataError("convert_mel: empty input");
  if (target_speaker < 0 || target_speaker >= cm.cfg.n_speakers)
    throw ConfigError("convert_mel: speaker index out of range");
  const int t = static_cast<int>(mel_norm.rows());
  const int padded = padded_frames(t, cm.cfg.syn_frames_per_step);

  ag::NoGradGuard guard;
  Rng rng(0);  // inference mode draws nothing
  auto x = padded_input(mel_norm, padded);
  auto r = cm.model->rec.forward(x, {t}, Mode::kEval, rng);
  auto s = cm.model->syn.forward(r.h, r.valid_h, {target_speaker}, {t}, padded,
                                 Mode::kEval, rng, nullptr);
  return s.post->val[0].topRows(t);
}

std::vector<int> recognize_phonemes(ConversionModel& cm, const ag::Mat& mel_norm) {
  if (mel_norm.cols() != cm.cfg.mel_dim)
    throw ConfigError("recognize_phonemes: channel count mismatch");
  if (mel_norm.rows() < 1) throw DataError("recognize_phonemes: empty input");
  const int t = static_cast<int>(mel_norm.rows());

  ag::NoGradGuard guard;
  Rng rng(0);
  auto x = padded_input(mel_norm, padded_frames(t, 1));
  auto r = cm.model->rec.forward(x, {t}, Mode::kEval, rng);
  return cm.model->dec.greedy_decode(r.h, r.valid_h).seqs[0];
}

dsp::Mat convert_wav(ConversionModel& cm, const dsp::FeatureConfig& fcfg,
                     const std::string& wav_in, const std::string& target_speaker,
                     const std::string& wav_out, int gl_iters) {
  if (cm.stats.feature_fingerprint != fcfg.fingerprint())
    throw IntegrityError(
        "feature settings do not match the ones the model was trained under");
  WavData w = read_wav(wav_in);
  if (w.sample_rate != fcfg.sample_rate)
    throw DataError(wav_in + ": sample rate " + std::to_string(w.sample_rate) +
                    ", expected " + std::to_string(fcfg.sample_rate));

  dsp::Mat logmel = dsp::log_mel(w.samples, fcfg);
  int spk = cm.speaker_index(target_speaker);
  ag::Mat converted = convert_mel(cm, normalize(logmel, cm.stats), spk);
  dsp::Mat out_logmel = denormalize(converted, cm.stats);
  write_wav(wav_out, dsp::mel_to_waveform(out_logmel, fcfg, gl_iters),
            fcfg.sample_rate);
  return out_logmel;
}

}  // namespace advc
