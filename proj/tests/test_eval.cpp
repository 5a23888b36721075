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

#include "advc/eval.hpp"
#include "testutil.hpp"

using namespace advc;
using namespace advc::eval;
using test::random_mat;

namespace {

// exhaustive minimum over all monotone unit-step paths; exponential, so
// only usable for the tiny sequences it is asked about here
double brute_dtw(const Mat& a, const Mat& b, int i, int j) {
  double d = (a.row(i) - b.row(j)).norm();
  if (i == 0 && j == 0) return d;
  double best = std::numeric_limits<double>::infinity();
  if (i > 0 && j > 0) best = std::min(best, brute_dtw(a, b, i - 1, j - 1));
  if (i > 0) best = std::min(best, brute_dtw(a, b, i - 1, j));
  if (j > 0) best = std::min(best, brute_dtw(a, b, i, j - 1));
  return d + best;
}

}  // namespace

TEST_CASE("cepstral coefficients match the direct transform with c0 dropped") {
  Rng rng(1);
  Mat lm = random_mat(rng, 3, 5, 1.0);
  Mat c = mcc(lm, 2);
  REQUIRE(c.rows() == 3);
  REQUIRE(c.cols() == 2);
  const int n = 5;
  for (int t = 0; t < 3; ++t)
    for (int k = 1; k <= 2; ++k) {
      double want = 0.0;
      for (int m = 0; m < n; ++m)
        want += lm(t, m) * std::cos(M_PI * (m + 0.5) * k / n);
      want *= std::sqrt(2.0 / n);
      CHECK(std::abs(c(t, k - 1) - want) < 1e-12);
    }
  CHECK_THROWS_AS(mcc(lm, 5), ConfigError);
  CHECK_THROWS_AS(mcc(lm, 0), ConfigError);
}

TEST_CASE("alignment reaches the exhaustive optimum") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    int ta = 2 + rng.uniform_int(4);  // up to 5
    int tb = 2 + rng.uniform_int(5);  // up to 6
    Mat a = random_mat(rng, ta, 2, 1.0);
    Mat b = random_mat(rng, tb, 2, 1.0);
    auto r = dtw(a, b);
    CHECK(std::abs(r.cost - brute_dtw(a, b, ta - 1, tb - 1)) < 1e-12);

    // the path itself must be a valid monotone walk whose cost adds up
    REQUIRE(!r.path.empty());
    CHECK(r.path.front() == std::make_pair(0, 0));
    CHECK(r.path.back() == std::make_pair(ta - 1, tb - 1));
    double along = 0.0;
    for (size_t s = 0; s < r.path.size(); ++s) {
      auto [i, j] = r.path[s];
      along += (a.row(i) - b.row(j)).norm();
      if (s > 0) {
        int di = i - r.path[s - 1].first;
        int dj = j - r.path[s - 1].second;
        CHECK(di >= 0);
        CHECK(dj >= 0);
        CHECK(di + dj >= 1);
        CHECK(di <= 1);
        CHECK(dj <= 1);
      }
    }
    CHECK(std::abs(along - r.cost) < 1e-12);
  }

  // identical inputs align on the diagonal at zero cost
  Mat a = random_mat(rng, 4, 3, 1.0);
  auto r = dtw(a, a);
  CHECK(r.cost == 0.0);
  REQUIRE(r.path.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(r.path[static_cast<size_t>(i)] == std::make_pair(i, i));

  CHECK_THROWS_AS(dtw(Mat::Zero(0, 2), a), DataError);
  CHECK_THROWS_AS(dtw(Mat::Zero(3, 1), a), ConfigError);
}

TEST_CASE("cepstral distortion matches the closed form") {
  Mat a(1, 2), b(1, 2);
  a << 1.0, 2.0;
  b << 0.0, 0.0;
  std::vector<std::pair<int, int>> path{{0, 0}};
  double want = 10.0 / std::log(10.0) * std::sqrt(2.0 * 5.0);
  CHECK(std::abs(mel_cepstral_distortion(a, b, path) - want) < 1e-12);

  // averaging over a two-step path
  Mat a2(2, 2), b2(2, 2);
  a2 << 1.0, 2.0, 3.0, 4.0;
  b2 << 0.0, 0.0, 3.0, 4.0;
  auto r = dtw(a2, b2);
  CHECK(std::abs(mel_cepstral_distortion(a2, b2, r.path) - want / 2.0) < 1e-12);

  CHECK_THROWS_AS(mel_cepstral_distortion(a, b, {}), DataError);
  CHECK_THROWS_AS(mel_cepstral_distortion(a, b, {{0, 5}}), ConfigError);
}

TEST_CASE("pitch error covers only co-voiced aligned frames") {
  std::vector<double> fa{100.0, 0.0, 200.0};
  std::vector<double> fb{110.0, 150.0, 0.0};
  auto r1 = f0_rmse(fa, fb, {{0, 0}, {1, 1}, {2, 2}});
  REQUIRE(r1.has_value());
  CHECK(std::abs(*r1 - 10.0) < 1e-12);

  auto r2 = f0_rmse(fa, fb, {{0, 0}, {2, 1}});
  REQUIRE(r2.has_value());
  CHECK(std::abs(*r2 - std::sqrt((100.0 + 2500.0) / 2.0)) < 1e-12);

  CHECK(!f0_rmse(fa, fb, {{1, 2}}).has_value());
  CHECK_THROWS_AS(f0_rmse(fa, fb, {{0, 7}}), ConfigError);
}

TEST_CASE("edit distance and accuracy behave on the classics") {
  std::vector<int> kitten{10, 8, 19, 19, 4, 13};
  std::vector<int> sitting{18, 8, 19, 19, 8, 13, 6};
  CHECK(edit_distance(kitten, sitting) == 3);
  CHECK(edit_distance(kitten, kitten) == 0);
  CHECK(edit_distance({}, kitten) == 6);
  CHECK(edit_distance(kitten, {}) == 6);

  CHECK(phoneme_accuracy(kitten, kitten) == 1.0);
  CHECK(std::abs(phoneme_accuracy(kitten, sitting) - 0.5) < 1e-12);
  CHECK(phoneme_accuracy({1, 2}, {9, 9, 9, 9, 9, 9}) == 0.0);  // clamped
  CHECK(phoneme_accuracy({}, {}) == 1.0);
  CHECK(phoneme_accuracy({}, {1}) == 0.0);
}

TEST_CASE("the probe separates frame clusters and votes by majority") {
  Rng rng(5);
  std::vector<Mat> feats;
  std::vector<int> labels;
  for (int u = 0; u < 10; ++u) {
    int label = u % 2;
    double center = label == 0 ? 1.5 : -1.5;
    int t = 10 + rng.uniform_int(8);
    Mat m(t, 3);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = center + 0.3 * rng.normal();
    feats.push_back(m);
    labels.push_back(label);
  }
  auto probe = SpeakerProbe::create(3, 8, 2, 9);
  probe.fit(feats, labels, 150, 0.05);
  CHECK(probe.accuracy(feats, labels) == 1.0);

  // same seed, same data: bit-identical parameters
  auto probe2 = SpeakerProbe::create(3, 8, 2, 9);
  probe2.fit(feats, labels, 150, 0.05);
  for (const auto& e : probe.store.entries())
    CHECK(e.node->m() == probe2.store.lookup(e.name)->m());

  CHECK_THROWS_AS(SpeakerProbe::create(0, 4, 2, 1), ConfigError);
  CHECK_THROWS_AS(probe.fit(feats, {0, 1}, 5, 0.05), ConfigError);
  CHECK_THROWS_AS(probe.predict(Mat::Zero(3, 7)), ConfigError);
}

TEST_CASE("charts are well formed svg") {
  std::vector<Series> s{{"loss & total", {3.0, 2.0, 1.5, 1.2}}, {"val", {2.5, 2.0}}};
  std::string svg = svg_line_chart("training <run>", s);
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("training &lt;run&gt;") != std::string::npos);
  CHECK(svg.find("loss &amp; total") != std::string::npos);
  size_t n = 0, pos = 0;
  while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
    ++n;
    pos += 1;
  }
  CHECK(n == 2);

  // an empty chart still renders a frame
  std::string empty = svg_line_chart("empty", {});
  CHECK(empty.find("<svg") == 0);
  CHECK(empty.find("</svg>") != std::string::npos);
}
