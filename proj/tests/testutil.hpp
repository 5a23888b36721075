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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "advc/autodiff.hpp"
#include "advc/common.hpp"

namespace advc::test {

inline ag::Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  ag::Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal() * scale;
  return m;
}

inline ag::Value random_value(Rng& rng, const std::vector<int>& rows, int cols,
                              double scale = 1.0) {
  ag::Value v;
  v.reserve(rows.size());
  for (int r : rows) v.push_back(random_mat(rng, r, cols, scale));
  return v;
}

// Central finite differences over every entry of every listed parameter.
// `make_loss` must rebuild the graph from the params' current values.
// Returns the worst relative error against the analytic gradient.
inline double max_grad_rel_err(const std::function<ag::NodePtr()>& make_loss,
                               const std::vector<ag::NodePtr>& params,
                               double eps = 1e-5) {
  ag::NodePtr loss = make_loss();
  auto grads = ag::gradient(loss, params);
  double max_err = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    for (size_t b = 0; b < params[p]->val.size(); ++b) {
      ag::Mat& m = params[p]->val[b];
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          double orig = m(r, c);
          m(r, c) = orig + eps;
          double lp = ag::scalar_value(make_loss());
          m(r, c) = orig - eps;
          double lm = ag::scalar_value(make_loss());
          m(r, c) = orig;
          double fd = (lp - lm) / (2.0 * eps);
          double an = grads[p]->val[b](r, c);
          double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
          max_err = std::max(max_err, err);
        }
      }
    }
  }
  return max_err;
}

}  // namespace advc::test
