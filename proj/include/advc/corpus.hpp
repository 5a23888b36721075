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

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "advc/autodiff.hpp"
#include "advc/dsp.hpp"

namespace advc {

// One manifest line: utterance id, audio path, speaker, then the phoneme
// sequence (possibly empty for conversion-only inputs).
struct Utterance {
  std::string id;
  std::string audio_path;
  std::string speaker;
  std::vector<std::string> phonemes;
};

struct Manifest {
  std::vector<Utterance> utts;
  std::vector<std::string> speakers;           // sorted, unique
  std::vector<std::string> phoneme_inventory;  // sorted, unique

  int speaker_id(const std::string& name) const;  // DataError when unknown
  int phoneme_id(const std::string& ph) const;
  uint64_t speaker_fingerprint() const;
  uint64_t phoneme_fingerprint() const;
};

// Whitespace-separated fields; '#' lines and blank lines are skipped.
// Relative audio paths resolve against the manifest's directory.
Manifest load_manifest(const std::string& path);

// Per-dimension normalization over all frames of a training set. The
// fingerprint records the extraction settings the stats were computed under.
struct NormStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stdev;
  uint64_t feature_fingerprint = 0;

  void save(const std::string& path) const;
  static NormStats load(const std::string& path);
};

NormStats compute_stats(const std::vector<Eigen::MatrixXd>& mels, uint64_t fingerprint,
                        double std_floor = 1e-3);

Eigen::MatrixXd normalize(const Eigen::MatrixXd& mel, const NormStats& stats);
Eigen::MatrixXd denormalize(const Eigen::MatrixXd& mel, const NormStats& stats);

// Training batch: normalized mel frames padded to a shared length that is a
// multiple of four (the recognizer halves time twice), with true frame
// counts carried alongside.
struct Batch {
  ag::Value mel;
  std::vector<int> frames;
  std::vector<int> speaker_ids;
  std::vector<std::vector<int>> phonemes;
  std::vector<std::string> utt_ids;
};

struct DataSet {
  Manifest manifest;
  dsp::FeatureConfig cfg;
  NormStats stats;
  std::vector<Eigen::MatrixXd> mel;  // normalized, one per utterance

  Batch make_batch(const std::vector<int>& indices) const;
};

// Reads audio, extracts features, and normalizes. When `precomputed` is
// given its fingerprint must match `cfg`; otherwise stats come from this
// set's own frames.
DataSet load_dataset(const std::string& manifest_path, const dsp::FeatureConfig& cfg,
                     const NormStats* precomputed = nullptr);

}  // namespace advc
