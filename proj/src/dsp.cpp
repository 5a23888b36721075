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

#include "advc/dsp.hpp"

#include <algorithm>
#include <cmath>

namespace advc::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Windowed, zero-padded analysis buffer for the frame centered at sample
// `center`; the window sits at the start of the nfft buffer.
void fill_frame(const std::vector<double>& x, long center, const std::vector<double>& win,
                int nfft, std::vector<std::complex<double>>& buf) {
  int w = static_cast<int>(win.size());
  long start = center - w / 2;
  for (int i = 0; i < nfft; ++i) buf[static_cast<size_t>(i)] = 0.0;
  for (int i = 0; i < w; ++i) {
    long src = start + i;
    if (src >= 0 && src < static_cast<long>(x.size()))
      buf[static_cast<size_t>(i)] = x[static_cast<size_t>(src)] * win[static_cast<size_t>(i)];
  }
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

uint64_t FeatureConfig::fingerprint() const {
  std::string s = "featcfg:" + std::to_string(sample_rate) + ":" + std::to_string(n_fft) +
                  ":" + std::to_string(win_length) + ":" + std::to_string(hop_length) + ":" +
                  std::to_string(n_mels) + ":" + std::to_string(fmin) + ":" +
                  std::to_string(fmax) + ":" + std::to_string(log_floor);
  return fnv1a64(s);
}

void fft_inplace(std::vector<std::complex<double>>& x, bool inverse) {
  size_t n = x.size();
  if (!is_pow2(n)) throw ConfigError("fft: size must be a power of two");
  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = x[i + k];
        std::complex<double> v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    for (auto& c : x) c /= static_cast<double>(n);
  }
}

std::vector<std::complex<double>> rfft(const std::vector<double>& x, int nfft) {
  std::vector<std::complex<double>> buf(static_cast<size_t>(nfft), 0.0);
  size_t n = std::min(x.size(), static_cast<size_t>(nfft));
  for (size_t i = 0; i < n; ++i) buf[i] = x[i];
  fft_inplace(buf, false);
  buf.resize(static_cast<size_t>(nfft / 2 + 1));
  return buf;
}

std::vector<double> irfft(const std::vector<std::complex<double>>& spec, int nfft) {
  if (static_cast<int>(spec.size()) != nfft / 2 + 1)
    throw ConfigError("irfft: spectrum size does not match nfft");
  std::vector<std::complex<double>> buf(static_cast<size_t>(nfft));
  for (int i = 0; i <= nfft / 2; ++i) buf[static_cast<size_t>(i)] = spec[static_cast<size_t>(i)];
  for (int i = nfft / 2 + 1; i < nfft; ++i)
    buf[static_cast<size_t>(i)] = std::conj(spec[static_cast<size_t>(nfft - i)]);
  fft_inplace(buf, true);
  std::vector<double> out(static_cast<size_t>(nfft));
  for (int i = 0; i < nfft; ++i) out[static_cast<size_t>(i)] = buf[static_cast<size_t>(i)].real();
  return out;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
  return w;
}

Mat stft_magnitude(const std::vector<double>& x, const FeatureConfig& cfg) {
  if (x.empty()) throw DataError("stft: empty signal");
  long frames = (static_cast<long>(x.size()) + cfg.hop_length - 1) / cfg.hop_length;
  auto win = hann_window(cfg.win_length);
  Mat out(frames, cfg.bins());
  std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.n_fft));
  for (long t = 0; t < frames; ++t) {
    fill_frame(x, t * cfg.hop_length, win, cfg.n_fft, buf);
    fft_inplace(buf, false);
    for (int k = 0; k < cfg.bins(); ++k) out(t, k) = std::abs(buf[static_cast<size_t>(k)]);
  }
  return out;
}

Mat mel_filterbank(const FeatureConfig& cfg) {
  int bins = cfg.bins();
  Mat fb = Mat::Zero(bins, cfg.n_mels);
  double mlo = hz_to_mel(cfg.fmin);
  double mhi = hz_to_mel(cfg.fmax);
  std::vector<double> centers(static_cast<size_t>(cfg.n_mels) + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    centers[static_cast<size_t>(i)] =
        mel_to_hz(mlo + (mhi - mlo) * i / (cfg.n_mels + 1));
  for (int k = 0; k < bins; ++k) {
    double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
    for (int m = 0; m < cfg.n_mels; ++m) {
      double lo = centers[static_cast<size_t>(m)];
      double mid = centers[static_cast<size_t>(m) + 1];
      double hi = centers[static_cast<size_t>(m) + 2];
      if (f > lo && f < hi)
        fb(k, m) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

Mat log_mel(const std::vector<double>& x, const FeatureConfig& cfg) {
  Mat mag = stft_magnitude(x, cfg);
  Mat mel = mag * mel_filterbank(cfg);
  return mel.cwiseMax(cfg.log_floor).array().log().matrix();
}

Mat dct_matrix(int order, int n) {
  Mat d(order, n);
  for (int k = 0; k < order; ++k) {
    double s = std::sqrt(2.0 / n) * (k == 0 ? 1.0 / std::sqrt(2.0) : 1.0);
    for (int i = 0; i < n; ++i)
      d(k, i) = s * std::cos(kPi * (i + 0.5) * k / n);
  }
  return d;
}

Mat mel_to_linear(const Mat& logmel, const FeatureConfig& cfg) {
  Mat fb = mel_filterbank(cfg);  // bins x n_mels
  Mat mel = logmel.array().exp().matrix();
  // mag * fb = mel  =>  mag = mel * pinv(fb)
  Mat pinv = fb.completeOrthogonalDecomposition().pseudoInverse();  // n_mels x bins
  return (mel * pinv).cwiseMax(0.0);
}

std::vector<double> griffin_lim(const Mat& mag, const FeatureConfig& cfg, int iters,
                                long out_len) {
  long frames = mag.rows();
  if (mag.cols() != cfg.bins()) throw ConfigError("griffin_lim: bin count mismatch");
  long len = out_len >= 0 ? out_len : frames * cfg.hop_length;
  auto win = hann_window(cfg.win_length);

  auto synth = [&](const std::vector<std::vector<std::complex<double>>>& spec) {
    std::vector<double> acc(static_cast<size_t>(len), 0.0);
    std::vector<double> norm(static_cast<size_t>(len), 0.0);
    for (long t = 0; t < frames; ++t) {
      std::vector<double> seg = irfft(spec[static_cast<size_t>(t)], cfg.n_fft);
      long start = t * cfg.hop_length - cfg.win_length / 2;
      for (int i = 0; i < cfg.win_length; ++i) {
        long dst = start + i;
        if (dst >= 0 && dst < len) {
          double w = win[static_cast<size_t>(i)];
          acc[static_cast<size_t>(dst)] += seg[static_cast<size_t>(i)] * w;
          norm[static_cast<size_t>(dst)] += w * w;
        }
      }
    }
    for (size_t i = 0; i < acc.size(); ++i)
      acc[i] /= std::max(norm[i], 1e-8);
    return acc;
  };

  // zero phase to start; each round projects onto the target magnitudes
  std::vector<std::vector<std::complex<double>>> spec(static_cast<size_t>(frames));
  for (long t = 0; t < frames; ++t) {
    spec[static_cast<size_t>(t)].resize(static_cast<size_t>(cfg.bins()));
    for (int k = 0; k < cfg.bins(); ++k)
      spec[static_cast<size_t>(t)][static_cast<size_t>(k)] = mag(t, k);
  }
  std::vector<double> x = synth(spec);
  std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.n_fft));
  for (int it = 0; it < iters; ++it) {
    for (long t = 0; t < frames; ++t) {
      fill_frame(x, t * cfg.hop_length, win, cfg.n_fft, buf);
      fft_inplace(buf, false);
      for (int k = 0; k < cfg.bins(); ++k) {
        std::complex<double> c = buf[static_cast<size_t>(k)];
        double a = std::abs(c);
        spec[static_cast<size_t>(t)][static_cast<size_t>(k)] =
            a > 1e-12 ? c / a * mag(t, k) : std::complex<double>(mag(t, k), 0.0);
      }
    }
    x = synth(spec);
  }
  return x;
}

std::vector<double> mel_to_waveform(const Mat& logmel, const FeatureConfig& cfg, int iters) {
  return griffin_lim(mel_to_linear(logmel, cfg), cfg, iters);
}

std::vector<double> estimate_f0(const std::vector<double>& x, const FeatureConfig& cfg,
                                const F0Config& f0cfg) {
  long frames = (static_cast<long>(x.size()) + cfg.hop_length - 1) / cfg.hop_length;
  int w = cfg.win_length;
  int lag_min = std::max(1, static_cast<int>(cfg.sample_rate / f0cfg.fmax));
  int lag_max = std::min(w - 1, static_cast<int>(cfg.sample_rate / f0cfg.fmin));
  std::vector<double> f0(static_cast<size_t>(frames), 0.0);
  std::vector<double> seg(static_cast<size_t>(w));
  for (long t = 0; t < frames; ++t) {
    long start = t * cfg.hop_length - w / 2;
    double mean = 0.0;
    for (int i = 0; i < w; ++i) {
      long src = start + i;
      seg[static_cast<size_t>(i)] =
          (src >= 0 && src < static_cast<long>(x.size())) ? x[static_cast<size_t>(src)] : 0.0;
      mean += seg[static_cast<size_t>(i)];
    }
    mean /= w;
    double power = 0.0;
    for (int i = 0; i < w; ++i) {
      seg[static_cast<size_t>(i)] -= mean;
      power += seg[static_cast<size_t>(i)] * seg[static_cast<size_t>(i)];
    }
    if (power / w < f0cfg.energy_floor) continue;

    double r_max = -1.0;
    std::vector<double> rs(static_cast<size_t>(lag_max) + 2, 0.0);
    for (int lag = lag_min; lag <= lag_max; ++lag) {
      double num = 0.0, e0 = 0.0, e1 = 0.0;
      for (int i = 0; i + lag < w; ++i) {
        num += seg[static_cast<size_t>(i)] * seg[static_cast<size_t>(i + lag)];
        e0 += seg[static_cast<size_t>(i)] * seg[static_cast<size_t>(i)];
        e1 += seg[static_cast<size_t>(i + lag)] * seg[static_cast<size_t>(i + lag)];
      }
      double denom = std::sqrt(e0 * e1);
      double r = denom > 1e-12 ? num / denom : 0.0;
      rs[static_cast<size_t>(lag)] = r;
      r_max = std::max(r_max, r);
    }
    if (r_max < f0cfg.voicing_threshold) continue;

    // A pure periodic signal peaks at every period multiple; taking the
    // smallest qualifying local peak avoids subharmonic picks.
    int best_lag = 0;
    for (int lag = lag_min + 1; lag < lag_max; ++lag) {
      double r = rs[static_cast<size_t>(lag)];
      if (r >= 0.9 * r_max && r >= rs[static_cast<size_t>(lag) - 1] &&
          r >= rs[static_cast<size_t>(lag) + 1]) {
        best_lag = lag;
        break;
      }
    }
    if (best_lag == 0) continue;

    double lag = best_lag;
    if (best_lag > lag_min && best_lag < lag_max) {
      double rm = rs[static_cast<size_t>(best_lag) - 1];
      double r0 = rs[static_cast<size_t>(best_lag)];
      double rp = rs[static_cast<size_t>(best_lag) + 1];
      double denom = rm - 2.0 * r0 + rp;
      if (std::abs(denom) > 1e-12) {
        double delta = 0.5 * (rm - rp) / denom;
        if (delta > -1.0 && delta < 1.0) lag += delta;
      }
    }
    f0[static_cast<size_t>(t)] = cfg.sample_rate / lag;
  }
  return f0;
}

}  // namespace advc::dsp
