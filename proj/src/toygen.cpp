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

#include "advc/toygen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "advc/wavio.hpp"

namespace advc::toy {

namespace {

struct Phone {
  const char* name;
  double f1, f2;  // formant centers in Hz
};

// names sorted so they match the inventory order manifests will derive
const Phone kPhones[] = {
    {"aa", 730.0, 1090.0}, {"ah", 640.0, 1190.0}, {"ee", 270.0, 2290.0},
    {"eh", 530.0, 1840.0}, {"ii", 390.0, 1990.0}, {"oo", 300.0, 870.0},
    {"or", 490.0, 1350.0}, {"uu", 440.0, 1020.0},
};
const int kNumPhones = 8;

struct Voice {
  double f0;     // base pitch in Hz
  double scale;  // formant shift ratio
  double tilt;   // spectral tilt exponent around 500 Hz
};

const Voice kVoices[] = {
    {110.0, 1.00, 0.0},
    {210.0, 1.15, -0.5},
    {150.0, 0.90, 0.35},
    {260.0, 1.25, -0.25},
};
const int kNumVoices = 4;

// harmonic amplitude for a phone in a voice: two gaussian formant bumps on
// shifted centers, times a gentle tilt
double harmonic_gain(double f, const Phone& p, const Voice& v) {
  double g = 0.0;
  for (double c : {p.f1 * v.scale, p.f2 * v.scale}) {
    double w = 0.16 * c + 60.0;
    double d = (f - c) / w;
    g += std::exp(-d * d);
  }
  return (g + 0.01) * std::pow(f / 500.0, v.tilt);
}

std::vector<int> random_text(Rng& rng) {
  int n = 3 + rng.uniform_int(4);  // 3..6 phones
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) {
    int p = rng.uniform_int(kNumPhones);
    while (!ids.empty() && p == ids.back()) p = rng.uniform_int(kNumPhones);
    ids.push_back(p);
  }
  return ids;
}

std::string join_phones(const std::vector<int>& ids) {
  std::string s;
  for (int id : ids) {
    if (!s.empty()) s += " ";
    s += kPhones[id].name;
  }
  return s;
}

}  // namespace

const std::vector<std::string>& phone_inventory() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& p : kPhones) v.emplace_back(p.name);
    return v;
  }();
  return names;
}

double voice_pitch(int voice) {
  if (voice < 0 || voice >= kNumVoices) throw ConfigError("voice_pitch: no such voice");
  return kVoices[voice].f0;
}

std::vector<double> render_utterance(const std::vector<int>& phone_ids, int voice,
                                     int sample_rate, Rng& rng) {
  if (voice < 0 || voice >= kNumVoices)
    throw ConfigError("render_utterance: no such voice");
  if (phone_ids.empty()) throw DataError("render_utterance: no phones");
  const Voice& v = kVoices[voice];
  double f0 = v.f0 * (1.0 + 0.03 * (rng.uniform() - 0.5));  // slight per-utterance drift
  const double edge = 0.015 * sample_rate;                  // attack/release samples

  std::vector<double> out;
  for (int id : phone_ids) {
    if (id < 0 || id >= kNumPhones) throw DataError("render_utterance: bad phone id");
    const Phone& p = kPhones[static_cast<size_t>(id)];
    double dur = 0.10 + 0.04 * rng.uniform();
    int n = static_cast<int>(dur * sample_rate);

    // harmonics of the voice pitch up to just below the toy analysis band
    std::vector<double> amp;
    for (int k = 1; k * f0 < 3800.0; ++k)
      amp.push_back(harmonic_gain(k * f0, p, v));

    for (int i = 0; i < n; ++i) {
      double t = static_cast<double>(i) / sample_rate;
      double s = 0.0;
      for (size_t k = 0; k < amp.size(); ++k)
        s += amp[k] * std::sin(2.0 * M_PI * (static_cast<double>(k) + 1.0) * f0 * t);
      double env = std::min({1.0, i / edge, (n - 1 - i) / edge});
      out.push_back(s * env + 1e-3 * rng.normal());
    }
  }

  double peak = 1e-9;
  for (double s : out) peak = std::max(peak, std::abs(s));
  for (double& s : out) s *= 0.45 / peak;
  return out;
}

ToyCorpus generate_toy_corpus(const std::string& out_dir, const ToyConfig& cfg) {
  if (cfg.n_speakers < 2 || cfg.n_speakers > kNumVoices)
    throw ConfigError("generate_toy_corpus: 2..4 speakers supported");
  if (cfg.train_per_speaker < 1 || cfg.val_per_speaker < 1 || cfg.test_texts < 1)
    throw ConfigError("generate_toy_corpus: all split sizes must be positive");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir + "/wav");

  ToyCorpus corpus;
  for (int s = 0; s < cfg.n_speakers; ++s)
    corpus.speakers.push_back(std::string("spk_") + static_cast<char>('a' + s));
  corpus.phones = phone_inventory();

  Rng master(cfg.seed);
  uint64_t counter = 0;
  auto emit = [&](std::ofstream& man, const std::string& id, int voice,
                  const std::vector<int>& text) {
    Rng rng = master.fork(counter++);
    auto wav = render_utterance(text, voice, cfg.sample_rate, rng);
    std::string rel = "wav/" + id + ".wav";
    write_wav(out_dir + "/" + rel, wav, cfg.sample_rate);
    man << id << " " << rel << " " << corpus.speakers[static_cast<size_t>(voice)] << " "
        << join_phones(text) << "\n";
  };

  auto make_split = [&](const std::string& name, int per_speaker) {
    std::string path = out_dir + "/" + name + ".txt";
    std::ofstream man(path);
    if (!man) throw DataError("cannot write manifest: " + path);
    for (int s = 0; s < cfg.n_speakers; ++s)
      for (int i = 0; i < per_speaker; ++i) {
        char id[64];
        std::snprintf(id, sizeof id, "%s_%s_%03d", name.c_str(),
                      corpus.speakers[static_cast<size_t>(s)].c_str(), i);
        Rng trng = master.fork(1000000 + counter);
        emit(man, id, s, random_text(trng));
      }
    return path;
  };

  corpus.train_manifest = make_split("train", cfg.train_per_speaker);
  corpus.val_manifest = make_split("val", cfg.val_per_speaker);

  // the test split is parallel: one text, every voice
  corpus.test_manifest = out_dir + "/test.txt";
  std::ofstream man(corpus.test_manifest);
  if (!man) throw DataError("cannot write manifest: " + corpus.test_manifest);
  for (int t = 0; t < cfg.test_texts; ++t) {
    Rng trng = master.fork(2000000 + static_cast<uint64_t>(t));
    auto text = random_text(trng);
    for (int s = 0; s < cfg.n_speakers; ++s) {
      char id[64];
      std::snprintf(id, sizeof id, "test_t%02d_%s", t,
                    corpus.speakers[static_cast<size_t>(s)].c_str());
      emit(man, id, s, text);
    }
  }
  man.close();
  if (!man) throw DataError("short write to manifest: " + corpus.test_manifest);
  return corpus;
}

}  // namespace advc::toy
