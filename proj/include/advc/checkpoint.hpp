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

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "advc/corpus.hpp"
#include "advc/nets.hpp"

namespace advc {

// Adam accumulators for one parameter.
struct AdamSlot {
  uint64_t t = 0;
  ag::Mat m;
  ag::Mat v;
};

// Everything needed to resume training or to convert: configuration,
// inventories, normalization, parameters, buffers and optimizer state.
struct Checkpoint {
  int stage = 0;  // 1 after multi-speaker training, 2 after pair finetuning
  uint64_t step = 0;
  NetConfig cfg;
  std::vector<std::string> speakers;
  std::vector<std::string> phonemes;
  NormStats stats;
  std::vector<std::pair<std::string, ag::Mat>> arrays;
  std::map<std::string, AdamSlot> opt;

  const ag::Mat* find(const std::string& name) const;
};

// Single self-checking binary file; the trailing hash catches truncation
// and bit rot. Round trips are bit exact.
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot(const Model& model, int stage, uint64_t step,
                    const std::vector<std::string>& speakers,
                    const std::vector<std::string>& phonemes, const NormStats& stats,
                    const std::map<std::string, AdamSlot>& opt = {});

// Copies arrays by name into a freshly created model. Entries whose name
// starts with one of `reinit_prefixes` may be absent or differently shaped
// and keep their fresh initialization; everything else must match exactly.
// Checkpoint arrays with no counterpart are accepted only under a known
// component prefix (a finetuned checkpoint carries critics a conversion
// model does not build).
void restore(Model& model, const Checkpoint& c,
             const std::vector<std::string>& reinit_prefixes = {});

// Widths must agree for weights to be transplantable; the speaker count may
// differ between stages, the phoneme inventory may not.
void check_compatible(const NetConfig& from_ckpt, const NetConfig& target);

}  // namespace advc
