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

#include "advc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace advc {

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const ParamStore& store, const std::vector<std::string>& prefixes, double lr,
           double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    bool match = false;
    for (const auto& p : prefixes)
      if (e.name.rfind(p, 0) == 0) match = true;
    if (!match) continue;
    names_.push_back(e.name);
    params_.push_back(e.node);
    AdamSlot s;
    s.m = ag::Mat::Zero(e.node->m().rows(), e.node->m().cols());
    s.v = s.m;
    slots_.push_back(std::move(s));
  }
}

void Adam::step(const std::vector<ag::NodePtr>& grads) {
  if (grads.size() != params_.size())
    throw ConfigError("optimizer got a gradient list of the wrong length");
  for (size_t i = 0; i < params_.size(); ++i) {
    const ag::Mat& g = grads[i]->m();
    if (!g.allFinite()) throw NumericError("non-finite gradient for " + names_[i]);
    AdamSlot& s = slots_[i];
    s.t += 1;
    s.m = b1_ * s.m + (1.0 - b1_) * g;
    s.v = b2_ * s.v + (1.0 - b2_) * g.cwiseProduct(g);
    double c1 = 1.0 - std::pow(b1_, static_cast<double>(s.t));
    double c2 = 1.0 - std::pow(b2_, static_cast<double>(s.t));
    ag::Mat update =
        (s.m / c1).array() / ((s.v / c2).array().sqrt() + eps_);
    params_[i]->val[0] -= lr_ * update.matrix();
  }
}

void Adam::export_state(std::map<std::string, AdamSlot>& into) const {
  for (size_t i = 0; i < names_.size(); ++i) into[names_[i]] = slots_[i];
}

void Adam::import_state(const std::map<std::string, AdamSlot>& from) {
  for (size_t i = 0; i < names_.size(); ++i) {
    auto it = from.find(names_[i]);
    if (it == from.end()) continue;  // freshly created parameter
    if (it->second.m.rows() != slots_[i].m.rows() ||
        it->second.m.cols() != slots_[i].m.cols())
      throw IntegrityError("optimizer state shape mismatch for " + names_[i]);
    slots_[i] = it->second;
  }
}

// ---------------------------------------------------------------------------
// TrainConfig / StepStats

void TrainConfig::validate() const {
  if (max_steps <= 0) throw ConfigError("training needs a positive step count");
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  if (classifier_updates < 0) throw ConfigError("classifier update count cannot be negative");
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (lr_final_scale < 0.0 || lr_final_scale > 1.0)
    throw ConfigError("final learning-rate scale must lie in [0, 1]");
  if (val_interval < 0 || patience < 0 || gan_warmup_steps < 0)
    throw ConfigError("intervals cannot be negative");
}

namespace {

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::string StepStats::json_line() const {
  std::ostringstream ss;
  ss << "{\"step\":" << step << ",\"total\":" << fmt_double(total)
     << ",\"rec\":" << fmt_double(rec) << ",\"phone\":" << fmt_double(phone)
     << ",\"adv\":" << fmt_double(adv) << ",\"adv2\":" << fmt_double(adv2)
     << ",\"cls\":" << fmt_double(cls) << ",\"dis\":" << fmt_double(dis)
     << ",\"gan\":" << fmt_double(gan) << "}";
  return ss.str();
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(Model& model, const DataSet& train, const DataSet* val,
                 const TrainConfig& cfg, std::ostream* log)
    : model_(model),
      train_(train),
      val_(val),
      cfg_(cfg),
      log_(log),
      adam_main_(model.store,
                 cfg.freeze_recognizer ? std::vector<std::string>{"syn."}
                                       : std::vector<std::string>{"rec.", "dec.", "syn."},
                 cfg.lr),
      adam_cls_(model.store, {"cls.", "cls2."}, cfg.lr),
      adam_dis_(model.store, {"dis"}, cfg.lr),
      rng_order_(Rng(cfg.seed).fork(11)),
      rng_drop_(Rng(cfg.seed).fork(12)),
      rng_mix_(Rng(cfg.seed).fork(13)) {
  cfg_.validate();
  if (train_.mel.empty()) throw DataError("training set is empty");
  order_.resize(train_.mel.size());
  std::iota(order_.begin(), order_.end(), 0);
  rng_order_.shuffle(order_);
}

Batch Trainer::next_batch() {
  size_t want = std::min<size_t>(static_cast<size_t>(cfg_.batch_size), order_.size());
  if (order_pos_ + want > order_.size()) {
    rng_order_.shuffle(order_);
    order_pos_ = 0;
  }
  std::vector<int> idx(order_.begin() + static_cast<long>(order_pos_),
                       order_.begin() + static_cast<long>(order_pos_ + want));
  order_pos_ += want;
  return train_.make_batch(idx);
}

void Trainer::abort_non_finite(const Batch& b, const char* where) const {
  std::string ids;
  for (const auto& id : b.utt_ids) ids += " " + id;
  throw NumericError(std::string("non-finite ") + where + " at step " +
                     std::to_string(step_ + 1) + "; batch:" + ids);
}

StageLosses Trainer::main_losses(const Batch& b, const RecognizerOut& r, const SynthOut& s) {
  StageLosses parts;
  parts.rec = reconstruction(s, ag::constant(b.mel), b.frames);
  // with a frozen recognizer only the synthesizer learns, so the losses that
  // shape linguistic content have nothing to update and are skipped
  if (!cfg_.no_phone && !cfg_.freeze_recognizer) {
    auto logps = model_.dec.forward_teacher(r.h, r.valid_h, b.phonemes);
    parts.phone = phoneme_ce(logps, b.phonemes, model_.cfg.n_phonemes + 1);
  }
  if (!cfg_.no_adv && !cfg_.freeze_recognizer) {
    // classifiers act as fixed adversaries here; only their own update
    // phase trains them (and advances their normalization statistics)
    parts.adv =
        speaker_adv(model_.cls.forward(r.h, r.valid_h, Mode::kEval), r.valid_h);
    parts.adv2 =
        speaker_adv(model_.cls2.forward(r.h1, r.valid_h1, Mode::kEval), r.valid_h1);
  }
  return parts;
}

StepStats Trainer::step_once() {
  StepStats st;
  st.step = step_ + 1;
  // every partition anneals together so the adversarial balance is preserved
  double lr_now = scheduled_lr(cfg_.lr, cfg_.lr_final_scale, step_, cfg_.max_steps);
  adam_main_.set_lr(lr_now);
  adam_cls_.set_lr(lr_now);
  adam_dis_.set_lr(lr_now);
  Batch b = next_batch();
  auto mel = ag::constant(b.mel);
  bool gan_now = cfg_.use_gan && !model_.dis.empty() &&
                 static_cast<int>(step_) >= cfg_.gan_warmup_steps;
  // a frozen recognizer runs in inference mode so the synthesizer adapts to
  // exactly the representations it will see at conversion time
  Mode rec_mode = cfg_.freeze_recognizer ? Mode::kEval : Mode::kTrain;

  // speaker confusion: bring the classifiers toward the optimum first
  if (!cfg_.no_adv && !cfg_.freeze_recognizer) {
    for (int k = 0; k < cfg_.classifier_updates; ++k) {
      auto r = model_.rec.forward(mel, b.frames, Mode::kTrain, rng_drop_);
      auto l1 = speaker_ce(model_.cls.forward(ag::detach(r.h), r.valid_h, Mode::kTrain),
                           r.valid_h, b.speaker_ids);
      auto l2 = speaker_ce(model_.cls2.forward(ag::detach(r.h1), r.valid_h1, Mode::kTrain),
                           r.valid_h1, b.speaker_ids);
      auto loss = ag::add(l1, l2);
      if (!ag::all_finite(loss)) abort_non_finite(b, "classifier objective");
      adam_cls_.step(ag::gradient(loss, adam_cls_.params()));
      st.cls = ag::scalar_value(loss);
    }
  }
  if (on_phase) on_phase("cls");

  // critic update on frozen generator output
  if (gan_now) {
    ag::NodePtr fake_vals;
    {
      ag::NoGradGuard guard;
      auto r = model_.rec.forward(mel, b.frames, rec_mode, rng_drop_);
      auto s = model_.syn.forward(r.h, r.valid_h, b.speaker_ids, b.frames,
                                  static_cast<int>(b.mel[0].rows()), Mode::kTrain,
                                  rng_drop_, &mel);
      fake_vals = ag::constant(s.post->val);
    }
    ag::NodePtr dloss;
    double inv_b = 1.0 / static_cast<double>(b.mel.size());
    for (int spk = 0; spk < model_.cfg.n_speakers; ++spk) {
      std::vector<double> w(b.mel.size(), 0.0);
      bool any = false;
      for (size_t i = 0; i < b.speaker_ids.size(); ++i)
        if (b.speaker_ids[i] == spk) {
          w[i] = inv_b;
          any = true;
        }
      if (!any) continue;
      auto term = discriminator_loss(model_.dis[static_cast<size_t>(spk)], mel, fake_vals,
                                     b.frames, cfg_.weights.w_gp, rng_mix_, &w);
      dloss = dloss ? ag::add(dloss, term) : term;
    }
    if (dloss) {
      if (!ag::all_finite(dloss)) abort_non_finite(b, "critic objective");
      adam_dis_.step(ag::gradient(dloss, adam_dis_.params()));
      st.dis = ag::scalar_value(dloss);
    }
  }
  if (on_phase) on_phase("dis");

  // main networks
  auto r = model_.rec.forward(mel, b.frames, rec_mode, rng_drop_);
  auto h_syn = cfg_.separate_training ? ag::detach(r.h) : r.h;
  auto s = model_.syn.forward(h_syn, r.valid_h, b.speaker_ids, b.frames,
                              static_cast<int>(b.mel[0].rows()), Mode::kTrain, rng_drop_,
                              &mel);
  StageLosses parts = main_losses(b, r, s);
  if (gan_now) {
    ag::NodePtr gterm;
    double inv_b = 1.0 / static_cast<double>(b.mel.size());
    for (int spk = 0; spk < model_.cfg.n_speakers; ++spk) {
      std::vector<double> w(b.mel.size(), 0.0);
      bool any = false;
      for (size_t i = 0; i < b.speaker_ids.size(); ++i)
        if (b.speaker_ids[i] == spk) {
          w[i] = inv_b;
          any = true;
        }
      if (!any) continue;
      auto term =
          generator_gan_loss(model_.dis[static_cast<size_t>(spk)], s.post, b.frames, &w);
      gterm = gterm ? ag::add(gterm, term) : term;
    }
    parts.gan = gterm;
  }
  auto total = total_main_loss(parts, cfg_.weights);
  if (!ag::all_finite(total)) abort_non_finite(b, "main objective");
  adam_main_.step(ag::gradient(total, adam_main_.params()));
  if (on_phase) on_phase("main");

  st.total = ag::scalar_value(total);
  st.rec = ag::scalar_value(parts.rec);
  if (parts.phone) st.phone = ag::scalar_value(parts.phone);
  if (parts.adv) st.adv = ag::scalar_value(parts.adv);
  if (parts.adv2) st.adv2 = ag::scalar_value(parts.adv2);
  if (parts.gan) st.gan = ag::scalar_value(parts.gan);
  ++step_;
  return st;
}

double Trainer::validate() {
  if (!val_ || val_->mel.empty()) throw ConfigError("no validation set");
  ag::NoGradGuard guard;
  Rng unused(0);
  double sum = 0.0;
  long items = 0;
  size_t n = val_->mel.size();
  size_t bs = static_cast<size_t>(cfg_.batch_size);
  for (size_t at = 0; at < n; at += bs) {
    std::vector<int> idx;
    for (size_t i = at; i < std::min(n, at + bs); ++i) idx.push_back(static_cast<int>(i));
    Batch b = val_->make_batch(idx);
    auto mel = ag::constant(b.mel);
    auto r = model_.rec.forward(mel, b.frames, Mode::kEval, unused);
    auto s = model_.syn.forward(r.h, r.valid_h, b.speaker_ids, b.frames,
                                static_cast<int>(b.mel[0].rows()), Mode::kEval, unused,
                                &mel);
    double loss = ag::scalar_value(ag::masked_mse(s.post, mel, b.frames));
    if (!cfg_.no_phone) {
      auto logps = model_.dec.forward_teacher(r.h, r.valid_h, b.phonemes);
      loss += ag::scalar_value(phoneme_ce(logps, b.phonemes, model_.cfg.n_phonemes + 1));
    }
    sum += loss * static_cast<double>(idx.size());
    items += static_cast<long>(idx.size());
  }
  return sum / static_cast<double>(items);
}

TrainResult Trainer::run() {
  TrainResult res;
  double best = std::numeric_limits<double>::infinity();
  int bad = 0;
  for (int i = 0; i < cfg_.max_steps; ++i) {
    StepStats st = step_once();
    res.final_total = st.total;
    if (log_) *log_ << st.json_line() << '\n';
    if (val_ && cfg_.val_interval > 0 && step_ % static_cast<uint64_t>(cfg_.val_interval) == 0) {
      double v = validate();
      res.ran_validation = true;
      if (log_)
        *log_ << "{\"step\":" << step_ << ",\"val\":" << fmt_double(v) << "}" << '\n';
      if (v < best) {
        best = v;
        bad = 0;
        if (on_best) on_best(step_, v);
      } else if (cfg_.patience > 0 && ++bad >= cfg_.patience) {
        res.early_stopped = true;
        break;
      }
    }
  }
  res.steps = step_;
  res.best_val = best;
  return res;
}

std::map<std::string, AdamSlot> Trainer::optimizer_state() const {
  std::map<std::string, AdamSlot> st;
  adam_main_.export_state(st);
  adam_cls_.export_state(st);
  adam_dis_.export_state(st);
  return st;
}

void Trainer::import_optimizer_state(const std::map<std::string, AdamSlot>& st) {
  adam_main_.import_state(st);
  adam_cls_.import_state(st);
  adam_dis_.import_state(st);
}

}  // namespace advc
