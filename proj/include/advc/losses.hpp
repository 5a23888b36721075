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

#include <vector>

#include "advc/autodiff.hpp"
#include "advc/common.hpp"
#include "advc/nets.hpp"

namespace advc {

// Scale factors for the composite objective. The adversarial terms are
// weighted differently in the two training stages.
struct LossWeights {
  double w_adv = 100.0;
  double w_adv2 = 5.0;
  double w_gp = 10.0;
  double w_gan = 0.05;

  static LossWeights pretrain() { return {100.0, 5.0, 10.0, 0.05}; }
  static LossWeights finetune() { return {1.0, 0.1, 10.0, 0.05}; }
};

// Mean cross-entropy over every predicted symbol: each item contributes its
// target symbols plus one end symbol. `logps` holds per-step log-softmax
// rows as produced by the phoneme decoder under teacher forcing.
ag::NodePtr phoneme_ce(const std::vector<ag::NodePtr>& logps,
                       const std::vector<std::vector<int>>& targets, int n_classes);

// Mean cross-entropy of frame-level speaker logits over valid frames.
// Callers training the classifier pass logits built on detach(H).
ag::NodePtr speaker_ce(const ag::NodePtr& logits, const std::vector<int>& valid,
                       const std::vector<int>& speaker_ids);

// Mean squared distance between the classifier posterior and the uniform
// distribution, averaged over classes and valid frames. Minimized by the
// recognizer to purge speaker identity from its representation.
ag::NodePtr speaker_adv(const ag::NodePtr& logits, const std::vector<int>& valid);

// MSE of both synthesizer outputs against the target frames.
ag::NodePtr reconstruction(const SynthOut& out, const ag::NodePtr& x,
                           const std::vector<int>& valid);

// Wasserstein critic loss with gradient penalty. Per-item terms are
// combined with `item_weights` when given (a per-speaker critic weighs only
// its own items), otherwise averaged over the batch. The generated features
// are detached internally; gradients from this loss reach only the critic.
// The interpolated input is a fresh leaf so the penalty can differentiate
// through the critic twice.
ag::NodePtr discriminator_loss(const Discriminator& d, const ag::NodePtr& x_real,
                               const ag::NodePtr& x_fake, const std::vector<int>& valid,
                               double w_gp, Rng& rng,
                               const std::vector<double>* item_weights = nullptr);

// Generator side of the critic game: drive the critic score up.
ag::NodePtr generator_gan_loss(const Discriminator& d, const ag::NodePtr& x_fake,
                               const std::vector<int>& valid,
                               const std::vector<double>* item_weights = nullptr);

// Pieces of the main-network objective. Null members are skipped, which is
// how the ablation switches remove terms.
struct StageLosses {
  ag::NodePtr rec;    // required
  ag::NodePtr phone;  // null under -phone
  ag::NodePtr adv;    // null under -adv
  ag::NodePtr adv2;   // null under -adv
  ag::NodePtr gan;    // null during pre-training and under -gan
};

ag::NodePtr total_main_loss(const StageLosses& parts, const LossWeights& w);

}  // namespace advc
