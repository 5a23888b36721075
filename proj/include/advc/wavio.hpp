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

namespace advc {

struct WavData {
  std::vector<double> samples;  // [-1, 1)
  int sample_rate = 0;
};

// 16-bit PCM mono only; anything else raises DataError naming the file.
WavData read_wav(const std::string& path);
void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate);

}  // namespace advc
