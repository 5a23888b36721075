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

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "advc/corpus.hpp"
#include "advc/dsp.hpp"
#include "advc/nets.hpp"

namespace advc {

// A trained recognizer/synthesizer pair plus everything needed to apply it:
// the speaker roster fixing embedding rows, the phoneme inventory for
// decoding, and the normalization stats the model was trained under.
struct ConversionModel {
  NetConfig cfg;
  std::unique_ptr<Model> model;
  std::vector<std::string> speakers;
  std::vector<std::string> phonemes;
  NormStats stats;

  // DataError naming the known speakers when the name is absent.
  int speaker_index(const std::string& name) const;
};

// Critic arrays in the checkpoint are ignored; they play no role here.
ConversionModel load_conversion_model(const std::string& ckpt_path);

// Normalized source mel in, normalized converted mel of the same shape out.
// Inference mode throughout and a free-running synthesizer, so the result
// is a deterministic function of the weights and the input.
ag::Mat convert_mel(ConversionModel& cm, const ag::Mat& mel_norm, int target_speaker);

// Greedy phoneme decoding of a normalized mel; end marker stripped.
std::vector<int> recognize_phonemes(ConversionModel& cm, const ag::Mat& mel_norm);

// WAV to WAV: analyze, normalize, convert, invert with phase recovery.
// Returns the converted log-mel (unnormalized) for inspection. The feature
// settings must match the fingerprint frozen into the model's stats.
dsp::Mat convert_wav(ConversionModel& cm, const dsp::FeatureConfig& fcfg,
                     const std::string& wav_in, const std::string& target_speaker,
                     const std::string& wav_out, int gl_iters = 60);

}  // namespace advc
