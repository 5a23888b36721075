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
#include <complex>
#include <cstdint>
#include <vector>

#include "advc/common.hpp"

namespace advc::dsp {

using Mat = Eigen::MatrixXd;

// Frame-level analysis settings. The fingerprint ties extracted features,
// normalization stats and checkpoints together; loading artifacts produced
// under different settings is an error, not a silent mismatch.
struct FeatureConfig {
  int sample_rate = 16000;
  int n_fft = 1024;
  int win_length = 800;  // 50 ms
  int hop_length = 160;  // 10 ms
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;

  uint64_t fingerprint() const;
  int bins() const { return n_fft / 2 + 1; }
};

// In-place iterative radix-2 transform; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& x, bool inverse);

// Real input, first nfft/2+1 bins out. Input shorter than nfft is zero-padded.
std::vector<std::complex<double>> rfft(const std::vector<double>& x, int nfft);

// Inverse of rfft (conjugate-symmetric extension), returns nfft samples.
std::vector<double> irfft(const std::vector<std::complex<double>>& spec, int nfft);

std::vector<double> hann_window(int n);  // periodic form

// Frames are centered at t*hop with zero padding at the edges;
// frame count is ceil(len/hop). Rows are magnitude spectra.
Mat stft_magnitude(const std::vector<double>& x, const FeatureConfig& cfg);

// Triangular filters on the HTK mel scale, shape bins x n_mels.
Mat mel_filterbank(const FeatureConfig& cfg);

// T x n_mels, natural log of mel magnitudes floored at log_floor.
Mat log_mel(const std::vector<double>& x, const FeatureConfig& cfg);

// Orthonormal DCT-II rows: order x n. mcc = logmel * D^T.
Mat dct_matrix(int order, int n);

// Least-squares mel inversion (pseudo-inverse of the filterbank),
// negatives clamped to zero. Returns T x bins magnitudes.
Mat mel_to_linear(const Mat& logmel, const FeatureConfig& cfg);

// Phase recovery from magnitudes; zero-phase init, fixed iteration count,
// fully deterministic. out_len < 0 means T*hop samples.
std::vector<double> griffin_lim(const Mat& mag, const FeatureConfig& cfg, int iters,
                                long out_len = -1);

std::vector<double> mel_to_waveform(const Mat& logmel, const FeatureConfig& cfg,
                                    int iters = 60);

struct F0Config {
  double fmin = 50.0;
  double fmax = 500.0;
  double voicing_threshold = 0.3;  // on the normalized autocorrelation peak
  double energy_floor = 1e-8;      // mean power below this is silence
};

// Per-frame fundamental frequency via normalized autocorrelation with
// parabolic peak interpolation; 0 marks unvoiced frames. Frame centers
// match stft_magnitude.
std::vector<double> estimate_f0(const std::vector<double>& x, const FeatureConfig& cfg,
                                const F0Config& f0cfg = {});

}  // namespace advc::dsp
