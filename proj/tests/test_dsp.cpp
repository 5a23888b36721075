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
#include <complex>
#include <cstdio>
#include <vector>

#include "advc/common.hpp"
#include "advc/dsp.hpp"
#include "advc/wavio.hpp"

using namespace advc;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Quadratic-time reference transform used to pin down the fast one.
std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t i = 0; i < n; ++i) {
      double ang = -2.0 * kPi * static_cast<double>(k * i) / static_cast<double>(n);
      acc += x[i] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

std::vector<double> sine(double freq, double amp, int sr, int n, double phase = 0.0) {
  std::vector<double> x(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    x[static_cast<size_t>(i)] = amp * std::sin(2.0 * kPi * freq * i / sr + phase);
  return x;
}

}  // namespace

TEST_CASE("fft matches naive dft") {
  Rng rng(3);
  std::vector<double> x(16);
  for (auto& v : x) v = rng.normal();
  auto ref = naive_dft(x);
  std::vector<std::complex<double>> fast(x.begin(), x.end());
  dsp::fft_inplace(fast, false);
  for (size_t k = 0; k < x.size(); ++k) CHECK(std::abs(fast[k] - ref[k]) < 1e-9);

  // impulse has a flat spectrum
  std::vector<std::complex<double>> imp(8, 0.0);
  imp[0] = 1.0;
  dsp::fft_inplace(imp, false);
  for (auto& c : imp) CHECK(std::abs(c - std::complex<double>(1.0, 0.0)) < 1e-12);

  CHECK_THROWS_AS(([&] {
                    std::vector<std::complex<double>> bad(12, 0.0);
                    dsp::fft_inplace(bad, false);
                  }()),
                  ConfigError);
}

TEST_CASE("parseval and inverse round trip") {
  Rng rng(5);
  std::vector<double> x(64);
  for (auto& v : x) v = rng.normal();
  auto spec = dsp::rfft(x, 64);
  // energy: DC and Nyquist once, interior bins twice
  double time_e = 0.0;
  for (double v : x) time_e += v * v;
  double freq_e = std::norm(spec[0]) + std::norm(spec[32]);
  for (int k = 1; k < 32; ++k) freq_e += 2.0 * std::norm(spec[static_cast<size_t>(k)]);
  CHECK(time_e == doctest::Approx(freq_e / 64.0).epsilon(1e-10));

  auto back = dsp::irfft(spec, 64);
  for (size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) < 1e-12);
}

TEST_CASE("hann window properties") {
  auto w = dsp::hann_window(8);
  CHECK(w[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(w[4] == doctest::Approx(1.0).epsilon(1e-15));

  // periodic hann at 75% overlap: sum of squared shifted windows is constant
  int n = 64, hop = 16;
  auto win = dsp::hann_window(n);
  std::vector<double> acc(static_cast<size_t>(n) * 4, 0.0);
  for (int t = 0; t < 20; ++t)
    for (int i = 0; i < n; ++i) {
      int dst = t * hop + i;
      if (dst < static_cast<int>(acc.size()))
        acc[static_cast<size_t>(dst)] += win[static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
    }
  for (int i = n; i < 2 * n; ++i)
    CHECK(acc[static_cast<size_t>(i)] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("stft geometry and tone localization") {
  dsp::FeatureConfig cfg;
  auto x = sine(500.0, 0.5, cfg.sample_rate, 16000);  // exactly bin 32 at nfft 1024
  auto mag = dsp::stft_magnitude(x, cfg);
  CHECK(mag.rows() == 100);  // ceil(16000/160)
  CHECK(mag.cols() == 513);
  Eigen::Index peak;
  mag.row(50).maxCoeff(&peak);
  CHECK(peak == 32);

  // frame count rounds up on partial hops
  std::vector<double> y(161, 0.1);
  CHECK(dsp::stft_magnitude(y, cfg).rows() == 2);
}

TEST_CASE("mel filterbank shape and coverage") {
  dsp::FeatureConfig cfg;
  auto fb = dsp::mel_filterbank(cfg);
  CHECK(fb.rows() == 513);
  CHECK(fb.cols() == 80);
  CHECK(fb.minCoeff() >= 0.0);
  // every interior frequency bin feeds at least one filter
  for (int k = 2; k < 512; ++k) CHECK(fb.row(k).sum() > 0.0);
  // each filter has support
  for (int m = 0; m < 80; ++m) CHECK(fb.col(m).maxCoeff() > 0.0);
}

TEST_CASE("dct rows are orthonormal") {
  auto d = dsp::dct_matrix(25, 80);
  Eigen::MatrixXd gram = d * d.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(25, 25)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("log mel of silence hits the floor") {
  dsp::FeatureConfig cfg;
  std::vector<double> x(3200, 0.0);
  auto lm = dsp::log_mel(x, cfg);
  CHECK(lm.rows() == 20);
  CHECK(lm.cols() == 80);
  double expect = std::log(cfg.log_floor);
  CHECK((lm.array() - expect).abs().maxCoeff() < 1e-12);
}

TEST_CASE("griffin lim reconstructs a harmonic tone") {
  dsp::FeatureConfig cfg;
  std::vector<double> x = sine(200.0, 0.3, cfg.sample_rate, 8000);
  auto x2 = sine(400.0, 0.2, cfg.sample_rate, 8000);
  for (size_t i = 0; i < x.size(); ++i) x[i] += x2[i];

  auto lm = dsp::log_mel(x, cfg);
  auto wav = dsp::mel_to_waveform(lm, cfg, 60);
  CHECK(wav.size() == static_cast<size_t>(lm.rows()) * cfg.hop_length);
  auto lm2 = dsp::log_mel(wav, cfg);
  // Interior frames only (edges lose overlap-add support), clamped at a
  // perceptual floor so near-silent bins do not dominate the comparison.
  double floor = std::log(1e-4);
  Eigen::MatrixXd center = lm.middleRows(5, lm.rows() - 10).cwiseMax(floor);
  Eigen::MatrixXd center2 = lm2.middleRows(5, lm.rows() - 10).cwiseMax(floor);
  double mse = (center - center2).squaredNorm() / static_cast<double>(center.size());
  MESSAGE("griffin-lim round trip mse: " << mse);
  CHECK(mse < 0.5);
}

TEST_CASE("f0 tracking on known tones") {
  dsp::FeatureConfig cfg;
  for (double freq : {200.0, 220.0}) {
    CAPTURE(freq);
    auto x = sine(freq, 0.4, cfg.sample_rate, 16000);
    auto f0 = dsp::estimate_f0(x, cfg);
    REQUIRE(f0.size() == 100);
    for (int t = 20; t < 80; ++t) {
      CHECK(f0[static_cast<size_t>(t)] > 0.0);
      CHECK(std::abs(f0[static_cast<size_t>(t)] - freq) < 1.0);
    }
  }
  std::vector<double> silent(16000, 0.0);
  auto f0 = dsp::estimate_f0(silent, cfg);
  for (double v : f0) CHECK(v == 0.0);
}

TEST_CASE("wav round trip and validation") {
  std::string path = "/tmp/advc_test_tone.wav";
  auto x = sine(300.0, 0.5, 16000, 1600);
  write_wav(path, x, 16000);
  auto back = read_wav(path);
  CHECK(back.sample_rate == 16000);
  REQUIRE(back.samples.size() == x.size());
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(back.samples[i] - x[i]) < 1.0 / 32768.0);

  CHECK_THROWS_AS((void)read_wav("/tmp/advc_does_not_exist.wav"), DataError);

  std::string bad = "/tmp/advc_bad.wav";
  {
    std::ofstream f(bad, std::ios::binary);
    f << "not a wave file at all";
  }
  CHECK_THROWS_AS((void)read_wav(bad), DataError);
}
