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

#include <string>
#include <vector>

#include "advc/common.hpp"

namespace advc::toy {

// A synthetic speech corpus small enough to train on in minutes: utterances
// are sequences of vowel-like tones from a fixed eight-phone inventory, and
// each voice differs in pitch, formant scaling and spectral tilt. The test
// split is parallel: every voice records the same held-out texts.
struct ToyConfig {
  int n_speakers = 2;  // 2..4 voices
  int train_per_speaker = 30;
  int val_per_speaker = 5;
  int test_texts = 8;
  int sample_rate = 16000;
  uint64_t seed = 77;
};

struct ToyCorpus {
  std::string train_manifest;
  std::string val_manifest;
  std::string test_manifest;
  std::vector<std::string> speakers;
  std::vector<std::string> phones;
};

ToyCorpus generate_toy_corpus(const std::string& out_dir, const ToyConfig& cfg);

// One phone sequence in one voice; exposed so tests can probe the acoustics.
// Phone ids index the sorted inventory; voice indexes the speaker table.
std::vector<double> render_utterance(const std::vector<int>& phone_ids, int voice,
                                     int sample_rate, Rng& rng);

const std::vector<std::string>& phone_inventory();
double voice_pitch(int voice);

}  // namespace advc::toy
