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

#include "advc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "advc/losses.hpp"
#include "advc/trainer.hpp"

namespace advc::eval {

Mat mcc(const Mat& logmel, int order) {
  if (order < 1 || order >= logmel.cols())
    throw ConfigError("mcc: order " + std::to_string(order) + " needs more than " +
                      std::to_string(order) + " channels");
  Mat d = dsp::dct_matrix(order + 1, static_cast<int>(logmel.cols()));
  Mat full = logmel * d.transpose();
  return full.rightCols(order);
}

DtwResult dtw(const Mat& a, const Mat& b) {
  if (a.rows() < 1 || b.rows() < 1) throw DataError("dtw: empty sequence");
  if (a.cols() != b.cols()) throw ConfigError("dtw: feature dimensions differ");
  const int ta = static_cast<int>(a.rows());
  const int tb = static_cast<int>(b.rows());
  Mat dist(ta, tb);
  for (int i = 0; i < ta; ++i)
    for (int j = 0; j < tb; ++j) dist(i, j) = (a.row(i) - b.row(j)).norm();

  Mat acc(ta, tb);
  Eigen::MatrixXi from(ta, tb);  // 0 diagonal, 1 from above, 2 from the left
  acc(0, 0) = dist(0, 0);
  from(0, 0) = -1;
  for (int i = 1; i < ta; ++i) {
    acc(i, 0) = acc(i - 1, 0) + dist(i, 0);
    from(i, 0) = 1;
  }
  for (int j = 1; j < tb; ++j) {
    acc(0, j) = acc(0, j - 1) + dist(0, j);
    from(0, j) = 2;
  }
  for (int i = 1; i < ta; ++i)
    for (int j = 1; j < tb; ++j) {
      double best = acc(i - 1, j - 1);
      int f = 0;
      if (acc(i - 1, j) < best) {
        best = acc(i - 1, j);
        f = 1;
      }
      if (acc(i, j - 1) < best) {
        best = acc(i, j - 1);
        f = 2;
      }
      acc(i, j) = dist(i, j) + best;
      from(i, j) = f;
    }

  DtwResult r;
  r.cost = acc(ta - 1, tb - 1);
  int i = ta - 1, j = tb - 1;
  while (true) {
    r.path.emplace_back(i, j);
    int f = from(i, j);
    if (f < 0) break;
    if (f != 2) --i;
    if (f != 1) --j;
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

double mel_cepstral_distortion(const Mat& mcc_a, const Mat& mcc_b,
                               const std::vector<std::pair<int, int>>& path) {
  if (path.empty()) throw DataError("mel_cepstral_distortion: empty path");
  if (mcc_a.cols() != mcc_b.cols())
    throw ConfigError("mel_cepstral_distortion: coefficient counts differ");
  const double k = 10.0 / std::log(10.0);
  double s = 0.0;
  for (const auto& [i, j] : path) {
    if (i < 0 || i >= mcc_a.rows() || j < 0 || j >= mcc_b.rows())
      throw ConfigError("mel_cepstral_distortion: path leaves the sequences");
    s += k * std::sqrt(2.0 * (mcc_a.row(i) - mcc_b.row(j)).squaredNorm());
  }
  return s / static_cast<double>(path.size());
}

std::optional<double> f0_rmse(const std::vector<double>& f0_a,
                              const std::vector<double>& f0_b,
                              const std::vector<std::pair<int, int>>& path) {
  double s = 0.0;
  int n = 0;
  for (const auto& [i, j] : path) {
    if (i < 0 || i >= static_cast<int>(f0_a.size()) || j < 0 ||
        j >= static_cast<int>(f0_b.size()))
      throw ConfigError("f0_rmse: path leaves the sequences");
    if (f0_a[static_cast<size_t>(i)] > 0.0 && f0_b[static_cast<size_t>(j)] > 0.0) {
      double d = f0_a[static_cast<size_t>(i)] - f0_b[static_cast<size_t>(j)];
      s += d * d;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return std::sqrt(s / n);
}

int edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double phoneme_accuracy(const std::vector<int>& ref, const std::vector<int>& hyp) {
  if (ref.empty()) return hyp.empty() ? 1.0 : 0.0;
  double acc = 1.0 - static_cast<double>(edit_distance(ref, hyp)) /
                         static_cast<double>(ref.size());
  return std::clamp(acc, 0.0, 1.0);
}

SpeakerProbe SpeakerProbe::create(int in_dim, int hidden, int classes, uint64_t seed) {
  if (in_dim < 1 || hidden < 1 || classes < 2)
    throw ConfigError("SpeakerProbe: need in_dim/hidden >= 1 and classes >= 2");
  SpeakerProbe p;
  p.in_dim = in_dim;
  p.classes = classes;
  Rng rng(seed);
  p.fc1 = Linear::create(p.store, "probe.fc1", in_dim, hidden, rng);
  p.fc2 = Linear::create(p.store, "probe.fc2", hidden, classes, rng);
  return p;
}

ag::NodePtr SpeakerProbe::logits(const ag::NodePtr& x, const std::vector<int>& valid) const {
  return ag::zero_pad_rows(fc2.forward(ag::tanh_(fc1.forward(x))), valid);
}

void SpeakerProbe::fit(const std::vector<Mat>& feats, const std::vector<int>& labels,
                       int steps, double lr) {
  if (feats.empty() || feats.size() != labels.size())
    throw ConfigError("SpeakerProbe::fit: need one label per feature sequence");
  std::vector<int> valid;
  for (size_t i = 0; i < feats.size(); ++i) {
    if (feats[i].cols() != in_dim || feats[i].rows() < 1)
      throw ConfigError("SpeakerProbe::fit: bad feature shape");
    if (labels[i] < 0 || labels[i] >= classes)
      throw DataError("SpeakerProbe::fit: label out of range");
    valid.push_back(static_cast<int>(feats[i].rows()));
  }
  auto x = ag::constant(ag::Value(feats.begin(), feats.end()));
  Adam opt(store, {"probe."}, lr);
  for (int s = 0; s < steps; ++s) {
    auto loss = speaker_ce(logits(x, valid), valid, labels);
    opt.step(ag::gradient(loss, opt.params()));
  }
}

int SpeakerProbe::predict(const Mat& feats) const {
  if (feats.cols() != in_dim || feats.rows() < 1)
    throw ConfigError("SpeakerProbe::predict: bad feature shape");
  ag::NoGradGuard guard;
  auto lg = logits(ag::constant(ag::Value{feats}),
                   {static_cast<int>(feats.rows())});
  const ag::Mat& m = lg->val[0];
  std::vector<int> votes(static_cast<size_t>(classes), 0);
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    Eigen::Index best;
    m.row(t).maxCoeff(&best);
    ++votes[static_cast<size_t>(best)];
  }
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

double SpeakerProbe::accuracy(const std::vector<Mat>& feats,
                              const std::vector<int>& labels) const {
  if (feats.empty() || feats.size() != labels.size())
    throw ConfigError("SpeakerProbe::accuracy: need one label per feature sequence");
  int hits = 0;
  for (size_t i = 0; i < feats.size(); ++i)
    if (predict(feats[i]) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(feats.size());
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::vector<Series>& series,
                           int width, int height) {
  const double ml = 60, mr = 16, mt = 36, mb = 32;
  const double pw = width - ml - mr, ph = height - mt - mb;
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#9467bd", "#ff7f0e", "#8c564b"};
  const int ncolors = 6;

  size_t max_len = 1;
  double lo = 0.0, hi = 1.0;
  bool any = false;
  for (const auto& s : series)
    for (double v : s.y) {
      if (!any) {
        lo = hi = v;
        any = true;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  for (const auto& s : series) max_len = std::max(max_len, s.y.size());
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  auto px = [&](size_t i) {
    return ml + (max_len < 2 ? 0.0
                             : pw * static_cast<double>(i) /
                                   static_cast<double>(max_len - 1));
  };
  auto py = [&](double v) { return mt + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
    << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
    << "font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
    << "</text>\n";
  o << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
    << mt + ph << "\" stroke=\"#333\"/>\n";
  o << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
    << "\" y2=\"" << mt + ph << "\" stroke=\"#333\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    double v = lo + (hi - lo) * k / 4.0;
    double y = py(v);
    o << "<line x1=\"" << ml - 4 << "\" y1=\"" << num(y) << "\" x2=\"" << ml
      << "\" y2=\"" << num(y) << "\" stroke=\"#333\"/>\n";
    o << "<text x=\"" << ml - 8 << "\" y=\"" << num(y + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << num(v)
      << "</text>\n";
  }
  o << "<text x=\"" << ml + pw << "\" y=\"" << height - 8
    << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
    << (max_len - 1) << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = palette[si % ncolors];
    if (!s.y.empty()) {
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" "
        << "points=\"";
      for (size_t i = 0; i < s.y.size(); ++i)
        o << num(px(i)) << "," << num(py(s.y[i])) << " ";
      o << "\"/>\n";
    }
    double ly = mt + 14 * static_cast<double>(si);
    o << "<rect x=\"" << ml + pw - 110 << "\" y=\"" << num(ly) << "\" width=\"10\" "
      << "height=\"10\" fill=\"" << color << "\"/>\n";
    o << "<text x=\"" << ml + pw - 96 << "\" y=\"" << num(ly + 9)
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(s.name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace advc::eval
