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

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "advc/dsp.hpp"
#include "advc/nets.hpp"

namespace advc::eval {

using Mat = Eigen::MatrixXd;

// Cepstral coefficients of each log-mel row; the energy term c0 is dropped
// so distances compare spectral shape, not loudness. Requires
// order < logmel columns.
Mat mcc(const Mat& logmel, int order);

// Monotone alignment of two frame sequences under euclidean frame distance,
// with unit steps (advance left, advance right, or both). Ties prefer the
// diagonal, so the path is deterministic.
struct DtwResult {
  std::vector<std::pair<int, int>> path;  // (row of a, row of b), both inclusive ends
  double cost = 0.0;                      // sum of frame distances along the path
};
DtwResult dtw(const Mat& a, const Mat& b);

// Mean over the aligned pairs of (10/ln10) * sqrt(2 * |a_i - b_j|^2),
// the conventional decibel-scaled cepstral distance.
double mel_cepstral_distortion(const Mat& mcc_a, const Mat& mcc_b,
                               const std::vector<std::pair<int, int>>& path);

// Root-mean-square pitch error over aligned pairs where both frames are
// voiced (nonzero). Empty when the pairs share no voiced frames.
std::optional<double> f0_rmse(const std::vector<double>& f0_a,
                              const std::vector<double>& f0_b,
                              const std::vector<std::pair<int, int>>& path);

int edit_distance(const std::vector<int>& a, const std::vector<int>& b);

// 1 - edit_distance/|ref|, clamped to [0, 1]. An empty reference scores 1
// exactly when the hypothesis is empty too.
double phoneme_accuracy(const std::vector<int>& ref, const std::vector<int>& hyp);

// A small frame-level softmax classifier measuring how much speaker identity
// survives in a feature sequence. Deliberately independent of the model's
// own adversarial classifiers: it is trained after the fact on frozen
// features, so it cannot be fooled by anything but the features themselves.
struct SpeakerProbe {
  ParamStore store;
  Linear fc1, fc2;
  int in_dim = 0;
  int classes = 0;

  static SpeakerProbe create(int in_dim, int hidden, int classes, uint64_t seed);

  ag::NodePtr logits(const ag::NodePtr& x, const std::vector<int>& valid) const;

  // Full-batch training on ragged per-utterance features. Deterministic
  // for a fixed seed.
  void fit(const std::vector<Mat>& feats, const std::vector<int>& labels, int steps,
           double lr = 0.01);

  // Majority vote over per-frame argmax decisions.
  int predict(const Mat& feats) const;
  double accuracy(const std::vector<Mat>& feats, const std::vector<int>& labels) const;
};

// Minimal line chart; one polyline per series, axes and legend included.
struct Series {
  std::string name;
  std::vector<double> y;
};
std::string svg_line_chart(const std::string& title, const std::vector<Series>& series,
                           int width = 720, int height = 400);

}  // namespace advc::eval
