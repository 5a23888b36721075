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

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "advc/checkpoint.hpp"
#include "advc/corpus.hpp"
#include "advc/losses.hpp"
#include "advc/nets.hpp"

namespace advc {

// Adam over a fixed list of named parameters. State serializes by name.
class Adam {
 public:
  Adam(const ParamStore& store, const std::vector<std::string>& prefixes, double lr,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // one update; grads align with params() and must be finite
  void step(const std::vector<ag::NodePtr>& grads);
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<ag::NodePtr>& params() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }

  void export_state(std::map<std::string, AdamSlot>& into) const;
  void import_state(const std::map<std::string, AdamSlot>& from);

 private:
  std::vector<std::string> names_;
  std::vector<ag::NodePtr> params_;
  std::vector<AdamSlot> slots_;
  double lr_, b1_, b2_, eps_;
};

struct TrainConfig {
  uint64_t seed = 1234;
  int batch_size = 32;
  int max_steps = 0;  // required
  int classifier_updates = 2;
  double lr = 0.001;
  double lr_final_scale = 1.0;  // lr anneals linearly to lr * this at the last step
  int val_interval = 100;  // steps between validation passes; 0 disables
  int patience = 10;       // validation passes without improvement; 0 disables
  int gan_warmup_steps = 0;

  // ablation switches
  bool no_adv = false;             // drop the speaker confusion terms
  bool no_phone = false;           // drop the phoneme decoder loss
  bool separate_training = false;  // synthesizer sees a detached representation
  bool freeze_recognizer = false;  // adapt only the synthesizer
  bool use_gan = true;             // critics engage when the model has them

  LossWeights weights = LossWeights::pretrain();

  void validate() const;  // ConfigError on nonsense
};

// Linear anneal from lr to lr * final_scale over a stage: the first step runs
// at the full rate, the last step exactly at the floor.
inline double scheduled_lr(double lr, double final_scale, uint64_t step, int max_steps) {
  if (max_steps <= 1 || final_scale == 1.0) return lr;
  double t = static_cast<double>(step) / static_cast<double>(max_steps - 1);
  return lr * (1.0 + (final_scale - 1.0) * t);
}

struct StepStats {
  uint64_t step = 0;
  double total = 0.0;
  double rec = 0.0;
  double phone = 0.0;
  double adv = 0.0;
  double adv2 = 0.0;
  double cls = 0.0;  // classifier training loss (last of the K updates)
  double dis = 0.0;  // critic training loss
  double gan = 0.0;  // generator score term

  std::string json_line() const;
};

struct TrainResult {
  uint64_t steps = 0;
  double final_total = 0.0;
  double best_val = 0.0;
  bool early_stopped = false;
  bool ran_validation = false;
};

// Owns the optimizer partitions and the update schedule. One step is:
// K classifier updates on the frozen representation, one critic update,
// then one update of the main networks.
class Trainer {
 public:
  Trainer(Model& model, const DataSet& train, const DataSet* val, const TrainConfig& cfg,
          std::ostream* log);

  StepStats step_once();
  TrainResult run();
  double validate();  // deterministic eval-mode objective
  uint64_t step() const { return step_; }
  std::map<std::string, AdamSlot> optimizer_state() const;
  void import_optimizer_state(const std::map<std::string, AdamSlot>& st);

  // invoked whenever a validation pass improves on the best seen
  std::function<void(uint64_t step, double val_loss)> on_best;

  // invoked after each update phase within a step ("cls", "dis", "main"),
  // so callers can observe which partitions a phase touched
  std::function<void(const char* phase)> on_phase;

 private:
  Batch next_batch();
  StageLosses main_losses(const Batch& b, const RecognizerOut& r, const SynthOut& s);
  void abort_non_finite(const Batch& b, const char* where) const;

  Model& model_;
  const DataSet& train_;
  const DataSet* val_;
  TrainConfig cfg_;
  std::ostream* log_;
  Adam adam_main_;
  Adam adam_cls_;
  Adam adam_dis_;
  Rng rng_order_;
  Rng rng_drop_;
  Rng rng_mix_;
  std::vector<int> order_;
  size_t order_pos_ = 0;
  uint64_t step_ = 0;
};

}  // namespace advc
