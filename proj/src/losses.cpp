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

#include "advc/losses.hpp"

#include <algorithm>

namespace advc {

ag::NodePtr phoneme_ce(const std::vector<ag::NodePtr>& logps,
                       const std::vector<std::vector<int>>& targets, int n_classes) {
  if (logps.empty()) throw ConfigError("phoneme loss: no decoder steps");
  size_t batch = targets.size();
  size_t max_len = 0;
  long n_pred = 0;
  for (const auto& t : targets) {
    max_len = std::max(max_len, t.size());
    n_pred += static_cast<long>(t.size()) + 1;  // symbols plus the end marker
  }
  if (logps.size() != max_len + 1)
    throw ConfigError("phoneme loss: step count does not match target lengths");
  int eos = n_classes - 1;

  ag::NodePtr loss;
  for (size_t j = 0; j < logps.size(); ++j) {
    const auto& lp = logps[j];
    if (lp->val.size() != 1 || lp->m().rows() != static_cast<Eigen::Index>(batch) ||
        lp->m().cols() != n_classes)
      throw ConfigError("phoneme loss: bad step shape");
    ag::Mat sel = ag::Mat::Zero(static_cast<Eigen::Index>(batch), n_classes);
    for (size_t i = 0; i < batch; ++i) {
      const auto& t = targets[i];
      if (j > t.size()) continue;  // item already emitted its end symbol
      int cls = j < t.size() ? t[j] : eos;
      if (cls < 0 || cls >= n_classes) throw DataError("phoneme loss: symbol out of range");
      sel(static_cast<Eigen::Index>(i), cls) = -1.0 / static_cast<double>(n_pred);
    }
    auto term = ag::sum_all(ag::mul(lp, ag::constant(std::move(sel))));
    loss = loss ? ag::add(loss, term) : term;
  }
  return loss;
}

namespace {

long count_valid(const ag::NodePtr& x, const std::vector<int>& valid) {
  if (valid.size() != x->val.size()) throw ConfigError("valid counts do not match batch");
  long n = 0;
  for (size_t i = 0; i < valid.size(); ++i)
    n += std::min<long>(valid[i], static_cast<long>(x->val[i].rows()));
  return n;
}

}  // namespace

ag::NodePtr speaker_ce(const ag::NodePtr& logits, const std::vector<int>& valid,
                       const std::vector<int>& speaker_ids) {
  if (speaker_ids.size() != logits->val.size())
    throw ConfigError("speaker loss: id count does not match batch");
  long n = count_valid(logits, valid);
  if (n == 0) throw ConfigError("speaker loss: no valid frames");
  auto lsm = ag::log_softmax_rows(logits);
  ag::Value sel(logits->val.size());
  for (size_t i = 0; i < logits->val.size(); ++i) {
    sel[i] = ag::Mat::Zero(logits->val[i].rows(), logits->val[i].cols());
    int spk = speaker_ids[i];
    if (spk < 0 || spk >= logits->val[i].cols())
      throw DataError("speaker loss: id out of range");
    int v = std::min<int>(valid[i], static_cast<int>(logits->val[i].rows()));
    for (int t = 0; t < v; ++t) sel[i](t, spk) = -1.0 / static_cast<double>(n);
  }
  return ag::sum_all(ag::mul(lsm, ag::constant(std::move(sel))));
}

ag::NodePtr speaker_adv(const ag::NodePtr& logits, const std::vector<int>& valid) {
  long n = count_valid(logits, valid);
  if (n == 0) throw ConfigError("adversarial loss: no valid frames");
  double classes = static_cast<double>(logits->cols());
  auto diff = ag::add_scalar(ag::softmax_rows(logits), -1.0 / classes);
  auto masked = ag::zero_pad_rows(diff, valid);
  return ag::scale(ag::sum_all(ag::square(masked)),
                   1.0 / (static_cast<double>(n) * classes));
}

ag::NodePtr reconstruction(const SynthOut& out, const ag::NodePtr& x,
                           const std::vector<int>& valid) {
  return ag::add(ag::masked_mse(out.pre, x, valid), ag::masked_mse(out.post, x, valid));
}

namespace {

// weighted batch reduction of a single Bx1 per-item column
ag::NodePtr combine_items(const ag::NodePtr& per_item, const std::vector<double>* weights,
                          size_t batch) {
  if (!weights)
    return ag::scale(ag::sum_all(per_item), 1.0 / static_cast<double>(batch));
  if (weights->size() != batch)
    throw ConfigError("item weights do not match batch size");
  ag::Mat w(batch, 1);
  for (size_t i = 0; i < batch; ++i) w(static_cast<Eigen::Index>(i), 0) = (*weights)[i];
  return ag::sum_all(ag::mul(per_item, ag::constant(std::move(w))));
}

}  // namespace

ag::NodePtr discriminator_loss(const Discriminator& d, const ag::NodePtr& x_real,
                               const ag::NodePtr& x_fake, const std::vector<int>& valid,
                               double w_gp, Rng& rng,
                               const std::vector<double>* item_weights) {
  if (x_real->val.size() != x_fake->val.size())
    throw ConfigError("critic loss: real and generated batches differ");
  size_t batch = x_real->val.size();
  auto fake = ag::detach(x_fake);

  // per-item random point on the segment between real and generated
  ag::Value mix(batch);
  for (size_t i = 0; i < batch; ++i) {
    if (x_real->val[i].rows() != fake->val[i].rows() ||
        x_real->val[i].cols() != fake->val[i].cols())
      throw ConfigError("critic loss: item shapes differ");
    double u = rng.uniform();
    mix[i] = u * x_real->val[i] + (1.0 - u) * fake->val[i];
  }
  auto xhat = ag::param(std::move(mix));  // leaf: the penalty differentiates against it

  auto s_fake = d.forward(fake, valid);
  auto s_real = d.forward(x_real, valid);
  auto s_hat = ag::sum_all(d.forward(xhat, valid));
  auto gx = ag::gradient(s_hat, {xhat}, /*create_graph=*/true)[0];
  // Epsilon keeps the sqrt differentiable at zero gradient norm; it is small
  // enough that a zero critic yields the exact unit-norm penalty to 1e-6.
  auto norms = ag::sqrt_(ag::add_scalar(ag::sum_all_per_item(ag::square(gx)), 1e-16));
  auto gp = ag::square(ag::add_scalar(norms, -1.0));
  auto per_item = ag::add(ag::sub(s_fake, s_real), ag::scale(gp, w_gp));
  return combine_items(per_item, item_weights, batch);
}

ag::NodePtr generator_gan_loss(const Discriminator& d, const ag::NodePtr& x_fake,
                               const std::vector<int>& valid,
                               const std::vector<double>* item_weights) {
  auto s = d.forward(x_fake, valid);
  return ag::neg(combine_items(s, item_weights, x_fake->val.size()));
}

ag::NodePtr total_main_loss(const StageLosses& parts, const LossWeights& w) {
  if (!parts.rec) throw ConfigError("total loss: reconstruction term is required");
  auto loss = parts.rec;
  if (parts.phone) loss = ag::add(loss, parts.phone);
  if (parts.adv) loss = ag::add(loss, ag::scale(parts.adv, w.w_adv));
  if (parts.adv2) loss = ag::add(loss, ag::scale(parts.adv2, w.w_adv2));
  if (parts.gan) loss = ag::add(loss, ag::scale(parts.gan, w.w_gan));
  return loss;
}

}  // namespace advc
