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

#include "advc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "advc/wavio.hpp"

namespace advc {

namespace {

std::string dirname_of(const std::string& path) {
  auto pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string(".") : path.substr(0, pos);
}

std::string resolve(const std::string& base, const std::string& p) {
  if (!p.empty() && p[0] == '/') return p;
  return base + "/" + p;
}

int lookup(const std::vector<std::string>& sorted, const std::string& key,
           const char* kind) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), key);
  if (it == sorted.end() || *it != key)
    throw DataError(std::string("unknown ") + kind + ": " + key);
  return static_cast<int>(it - sorted.begin());
}

uint64_t list_fingerprint(const std::vector<std::string>& items) {
  std::string joined;
  for (const auto& s : items) {
    joined += s;
    joined.push_back('\n');
  }
  return fnv1a64(joined);
}

}  // namespace

int Manifest::speaker_id(const std::string& name) const {
  return lookup(speakers, name, "speaker");
}

int Manifest::phoneme_id(const std::string& ph) const {
  return lookup(phoneme_inventory, ph, "phoneme");
}

uint64_t Manifest::speaker_fingerprint() const { return list_fingerprint(speakers); }
uint64_t Manifest::phoneme_fingerprint() const { return list_fingerprint(phoneme_inventory); }

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);
  std::string base = dirname_of(path);

  Manifest m;
  std::unordered_map<std::string, int> seen_ids;  // id -> line number
  std::set<std::string> speaker_set, phone_set;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Utterance u;
    std::string tok;
    if (!(ss >> u.id >> tok >> u.speaker))
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected <id> <audio> <speaker> [phonemes...]");
    u.audio_path = resolve(base, tok);
    while (ss >> tok) u.phonemes.push_back(tok);

    auto dup = seen_ids.find(u.id);
    if (dup != seen_ids.end())
      throw DataError(path + ":" + std::to_string(lineno) + ": duplicate utterance id '" +
                      u.id + "' (first seen at line " + std::to_string(dup->second) + ")");
    seen_ids.emplace(u.id, lineno);

    speaker_set.insert(u.speaker);
    for (const auto& p : u.phonemes) phone_set.insert(p);
    m.utts.push_back(std::move(u));
  }
  if (m.utts.empty()) throw DataError("manifest has no utterances: " + path);
  m.speakers.assign(speaker_set.begin(), speaker_set.end());
  m.phoneme_inventory.assign(phone_set.begin(), phone_set.end());
  return m;
}

NormStats compute_stats(const std::vector<Eigen::MatrixXd>& mels, uint64_t fingerprint,
                        double std_floor) {
  if (mels.empty()) throw DataError("compute_stats: no features");
  Eigen::Index dim = mels[0].cols();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(dim);
  Eigen::RowVectorXd sumsq = Eigen::RowVectorXd::Zero(dim);
  long n = 0;
  for (const auto& m : mels) {
    if (m.cols() != dim) throw DataError("compute_stats: inconsistent dimensions");
    sum += m.colwise().sum();
    sumsq += m.array().square().matrix().colwise().sum();
    n += m.rows();
  }
  NormStats s;
  s.mean = sum / static_cast<double>(n);
  Eigen::RowVectorXd var =
      (sumsq / static_cast<double>(n)) - s.mean.cwiseProduct(s.mean);
  s.stdev = var.cwiseMax(0.0).cwiseSqrt().cwiseMax(std_floor);
  s.feature_fingerprint = fingerprint;
  return s;
}

void NormStats::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write stats file: " + path);
  f << "advc-stats 1\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(feature_fingerprint));
  f << "fingerprint " << buf << "\n";
  f << "dim " << mean.size() << "\n";
  auto put_row = [&](const char* name, const Eigen::RowVectorXd& v) {
    f << name;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, " %a", v(i));  // hexfloat: exact round trip
      f << buf;
    }
    f << "\n";
  };
  put_row("mean", mean);
  put_row("std", stdev);
  if (!f) throw DataError("short write to stats file: " + path);
}

NormStats NormStats::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open stats file: " + path);
  std::string magic;
  int version = 0;
  if (!(f >> magic >> version) || magic != "advc-stats" || version != 1)
    throw DataError("unrecognized stats file: " + path);
  NormStats s;
  std::string key, hex;
  if (!(f >> key >> hex) || key != "fingerprint")
    throw DataError("stats file missing fingerprint: " + path);
  s.feature_fingerprint = std::stoull(hex, nullptr, 16);
  Eigen::Index dim = 0;
  if (!(f >> key >> dim) || key != "dim" || dim <= 0)
    throw DataError("stats file missing dim: " + path);
  auto get_row = [&](const char* name, Eigen::RowVectorXd& v) {
    std::string k;
    if (!(f >> k) || k != name)
      throw DataError(std::string("stats file missing ") + name + ": " + path);
    v.resize(dim);
    std::string tok;
    for (Eigen::Index i = 0; i < dim; ++i) {
      if (!(f >> tok)) throw DataError("stats file truncated: " + path);
      v(i) = std::strtod(tok.c_str(), nullptr);
    }
  };
  get_row("mean", s.mean);
  get_row("std", s.stdev);
  return s;
}

Eigen::MatrixXd normalize(const Eigen::MatrixXd& mel, const NormStats& stats) {
  return (mel.rowwise() - stats.mean).array().rowwise() / stats.stdev.array();
}

Eigen::MatrixXd denormalize(const Eigen::MatrixXd& mel, const NormStats& stats) {
  return (mel.array().rowwise() * stats.stdev.array()).matrix().rowwise() + stats.mean;
}

Batch DataSet::make_batch(const std::vector<int>& indices) const {
  if (indices.empty()) throw ConfigError("make_batch: empty index list");
  Batch b;
  int max_t = 0;
  for (int i : indices) {
    if (i < 0 || i >= static_cast<int>(mel.size()))
      throw ConfigError("make_batch: index out of range");
    max_t = std::max(max_t, static_cast<int>(mel[static_cast<size_t>(i)].rows()));
  }
  int padded = ((max_t + 3) / 4) * 4;
  for (int i : indices) {
    const auto& m = mel[static_cast<size_t>(i)];
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(padded, m.cols());
    p.topRows(m.rows()) = m;
    b.mel.push_back(std::move(p));
    b.frames.push_back(static_cast<int>(m.rows()));
    const auto& u = manifest.utts[static_cast<size_t>(i)];
    b.speaker_ids.push_back(manifest.speaker_id(u.speaker));
    std::vector<int> ph;
    ph.reserve(u.phonemes.size());
    for (const auto& p2 : u.phonemes) ph.push_back(manifest.phoneme_id(p2));
    b.phonemes.push_back(std::move(ph));
    b.utt_ids.push_back(u.id);
  }
  return b;
}

DataSet load_dataset(const std::string& manifest_path, const dsp::FeatureConfig& cfg,
                     const NormStats* precomputed) {
  DataSet ds;
  ds.manifest = load_manifest(manifest_path);
  ds.cfg = cfg;

  std::vector<Eigen::MatrixXd> raw;
  raw.reserve(ds.manifest.utts.size());
  for (const auto& u : ds.manifest.utts) {
    WavData w = read_wav(u.audio_path);
    if (w.sample_rate != cfg.sample_rate)
      throw DataError(u.audio_path + ": sample rate " + std::to_string(w.sample_rate) +
                      " does not match configured " + std::to_string(cfg.sample_rate));
    if (w.samples.empty()) throw DataError(u.audio_path + ": empty audio");
    raw.push_back(dsp::log_mel(w.samples, cfg));
  }

  if (precomputed) {
    if (precomputed->feature_fingerprint != cfg.fingerprint())
      throw IntegrityError(
          "normalization stats were computed under different extraction settings");
    ds.stats = *precomputed;
  } else {
    ds.stats = compute_stats(raw, cfg.fingerprint());
  }

  ds.mel.reserve(raw.size());
  for (const auto& m : raw) ds.mel.push_back(normalize(m, ds.stats));
  return ds;
}

}  // namespace advc
