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

#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "advc/autodiff.hpp"
#include "advc/common.hpp"

namespace advc {

enum class Mode { kTrain, kEval };

// Every component keeps its padding contract: rows at index >= valid are
// exactly zero after each block, so losses cannot depend on pad length.

struct NetConfig {
  int mel_dim = 80;

  // recognizer: two strided conv blocks interleaved with BLSTMs; time is
  // halved at each conv, so the top representation runs at a quarter rate
  int rec_conv_channels = 512;
  int rec_lstm_hidden = 256;  // per direction
  double rec_dropout = 0.2;

  // phoneme decoder: single LSTM with hybrid content+location attention
  int dec_hidden = 128;
  int dec_embed = 64;
  int attn_dim = 128;
  int attn_loc_filters = 32;
  int attn_loc_kernel = 31;

  // frame-level speaker classifiers
  int cls_channels = 256;

  // synthesizer: prenet + 2-layer LSTM emitting two frames per step + postnet
  int syn_prenet = 256;
  int syn_lstm_hidden = 512;
  int syn_frames_per_step = 2;
  int syn_postnet_channels = 256;
  int spk_embed = 128;
  double prenet_dropout = 0.5;
  double postnet_dropout = 0.2;

  // per-speaker critics; strided convs, no batch norm
  int dis_channels = 256;

  double leaky_slope = 0.2;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  int n_speakers = 0;  // filled from the data inventory
  int n_phonemes = 0;

  int h_dim() const { return 2 * rec_lstm_hidden; }
  int cond_dim() const { return h_dim() + spk_embed; }
  uint64_t fingerprint() const;

  // Small widths that train in minutes on one core.
  static NetConfig toy(int n_speakers, int n_phonemes);
};

enum class Init { kUniformFanIn, kOrthogonal, kZero, kOne, kNormalSmall };

// Named parameters and buffers in creation order. Buffers (batch-norm
// running stats) are plain constants mutated in place; they serialize and
// fingerprint like params but never receive gradients.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ag::NodePtr node;
    bool trainable;
  };

  ag::NodePtr param(const std::string& name, int rows, int cols, Init init, Rng& rng);
  ag::NodePtr buffer(const std::string& name, int rows, int cols, double fill);
  ag::NodePtr lookup(const std::string& name) const;  // ConfigError if absent
  bool has(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<ag::NodePtr> trainable(const std::string& prefix = "") const;
  long scalar_count(const std::string& prefix = "") const;
  uint64_t arch_fingerprint() const;
  std::string describe() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// ---------------------------------------------------------------------------
// Layers

struct Conv1d {
  ag::NodePtr w;  // (kernel*in) x out
  ag::NodePtr b;  // 1 x out
  int kernel = 0;
  int stride = 1;

  static Conv1d create(ParamStore& ps, const std::string& name, int in, int out, int kernel,
                       int stride, Rng& rng);
  ag::NodePtr forward(const ag::NodePtr& x) const;
};

struct BatchNorm1d {
  ag::NodePtr gamma, beta;
  ag::NodePtr run_mean, run_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm1d create(ParamStore& ps, const std::string& name, int channels,
                            const NetConfig& cfg);
  // Statistics cover valid rows only; training mode updates the running
  // buffers in place. Output pads are NOT zeroed; callers mask per block.
  ag::NodePtr forward(const ag::NodePtr& x, const std::vector<int>& valid, Mode mode) const;
};

ag::NodePtr dropout(const ag::NodePtr& x, double p, Mode mode, Rng& rng);

struct Linear {
  ag::NodePtr w;  // in x out
  ag::NodePtr b;  // 1 x out (null when bias-free)

  static Linear create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                       bool bias = true);
  ag::NodePtr forward(const ag::NodePtr& x) const;
};

struct LstmCell {
  ag::NodePtr wx;  // in x 4H, gate order [i f g o]
  ag::NodePtr wh;  // H x 4H
  ag::NodePtr b;   // 1 x 4H, forget block starts at +1
  int hidden = 0;

  static LstmCell create(ParamStore& ps, const std::string& name, int in, int hidden,
                         Rng& rng);
  std::pair<ag::NodePtr, ag::NodePtr> step(const ag::NodePtr& xt, const ag::NodePtr& h,
                                           const ag::NodePtr& c) const;
};

// Runs the cell across a uniform-length batch; output rows past each item's
// valid count come back zero.
ag::NodePtr lstm_forward(const LstmCell& cell, const ag::NodePtr& x,
                         const std::vector<int>& valid);

ag::NodePtr blstm_forward(const LstmCell& fwd, const LstmCell& bwd, const ag::NodePtr& x,
                          const std::vector<int>& valid);

// ceil(v / div) per item: how valid counts shrink through strided layers
std::vector<int> shrink_valid(const std::vector<int>& valid, int div);

// ---------------------------------------------------------------------------
// Networks

struct RecognizerOut {
  ag::NodePtr h;   // batch (T/4) x h_dim
  ag::NodePtr h1;  // batch (T/2) x h_dim, first BLSTM output
  std::vector<int> valid_h;
  std::vector<int> valid_h1;
};

struct Recognizer {
  Conv1d conv1, conv2;
  BatchNorm1d bn1, bn2;
  LstmCell l1f, l1b, l2f, l2b;
  double drop = 0.0;

  static Recognizer create(ParamStore& ps, const NetConfig& cfg, Rng& rng);
  RecognizerOut forward(const ag::NodePtr& mel, const std::vector<int>& valid, Mode mode,
                        Rng& rng) const;
};

struct SpeakerClassifier {
  Conv1d c1, c2, c3;
  BatchNorm1d n1, n2, n3;
  Linear fc;
  double slope = 0.2;

  static SpeakerClassifier create(ParamStore& ps, const std::string& prefix,
                                  const NetConfig& cfg, Rng& rng);
  // frame-level speaker logits, batch T x n_speakers, pads zeroed
  ag::NodePtr forward(const ag::NodePtr& h, const std::vector<int>& valid, Mode mode) const;
};

struct PhonemeDecoder {
  ag::NodePtr embed;  // (n_phonemes+1) x dec_embed; last row doubles as the start symbol
  LstmCell cell;
  Linear w_key;    // h_dim -> attn_dim
  Linear w_query;  // dec_hidden -> attn_dim (no bias)
  Conv1d loc_conv;
  Linear w_loc;  // loc_filters -> attn_dim (no bias)
  ag::NodePtr v;  // attn_dim x 1
  Linear w_out;   // (dec_hidden + h_dim) -> n_phonemes+1
  int n_classes = 0;  // n_phonemes + 1, end symbol last

  static PhonemeDecoder create(ParamStore& ps, const NetConfig& cfg, Rng& rng);

  // Teacher-forced per-step log-probabilities; step j is valid for item i
  // while j <= targets[i].size() (the end symbol is predicted once).
  std::vector<ag::NodePtr> forward_teacher(const ag::NodePtr& h,
                                           const std::vector<int>& valid_h,
                                           const std::vector<std::vector<int>>& targets) const;

  struct Decoded {
    std::vector<std::vector<int>> seqs;  // end symbol stripped
    bool truncated = false;              // some item hit the step cap
  };
  Decoded greedy_decode(const ag::NodePtr& h, const std::vector<int>& valid_h) const;
};

struct SynthOut {
  ag::NodePtr pre;   // batch T x mel_dim, before the postnet
  ag::NodePtr post;  // batch T x mel_dim, postnet residual added
};

struct Synthesizer {
  Linear pre1, pre2;
  LstmCell rnn1, rnn2;
  Linear proj;
  Conv1d pc[5], pc_out;
  BatchNorm1d pn[5];
  ag::NodePtr spk_table;  // n_speakers x spk_embed
  int frames_per_step = 2;
  int mel_dim = 80;
  double prenet_drop = 0.5;
  double postnet_drop = 0.2;

  static Synthesizer create(ParamStore& ps, const NetConfig& cfg, Rng& rng);
  // teacher: ground-truth frames for forced decoding; null -> free-running.
  // valid_x: frame counts of the output (= input mel) sequence.
  SynthOut forward(const ag::NodePtr& h, const std::vector<int>& valid_h,
                   const std::vector<int>& speaker_ids, const std::vector<int>& valid_x,
                   int total_frames, Mode mode, Rng& rng,
                   const ag::NodePtr* teacher) const;
};

struct Discriminator {
  Conv1d c1, c2, c3, c4;
  double slope = 0.2;

  static Discriminator create(ParamStore& ps, const std::string& prefix,
                              const NetConfig& cfg, Rng& rng);
  // mean-pooled critic score per item, single B x 1
  ag::NodePtr forward(const ag::NodePtr& x, const std::vector<int>& valid) const;
};

// The full system. Discriminators exist only for the stage that uses them.
struct Model {
  NetConfig cfg;
  ParamStore store;
  Recognizer rec;
  PhonemeDecoder dec;
  SpeakerClassifier cls;   // on H
  SpeakerClassifier cls2;  // on the half-rate H1
  Synthesizer syn;
  std::vector<Discriminator> dis;  // one per speaker when enabled

  static std::unique_ptr<Model> create(const NetConfig& cfg, uint64_t seed,
                                       bool with_discriminators);

  std::vector<ag::NodePtr> main_params() const;        // rec + dec + syn
  std::vector<ag::NodePtr> classifier_params() const;  // cls + cls2
  std::vector<ag::NodePtr> discriminator_params() const;
};

}  // namespace advc
