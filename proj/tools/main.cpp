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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "advc/checkpoint.hpp"
#include "advc/convert.hpp"
#include "advc/corpus.hpp"
#include "advc/eval.hpp"
#include "advc/toygen.hpp"
#include "advc/trainer.hpp"
#include "advc/wavio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace advc;

namespace {

// ---------------------------------------------------------------------------
// Profiles: a full-size configuration and a small one that trains in minutes
// on one core. A JSON config file overrides profile fields; explicit flags
// override both.

struct Profile {
  dsp::FeatureConfig features;
  NetConfig net;
  int pretrain_steps = 0;
  int finetune_steps = 0;
  int pretrain_batch = 32;
  int finetune_batch = 8;
  double lr = 0.001;
  // stage 1 keeps the full rate; stage 2 plateaus, so its rate anneals
  double pretrain_lr_final = 1.0;
  double finetune_lr_final = 0.1;
  int classifier_updates = 2;
  int val_interval = 100;
  int patience = 10;
  int gan_warmup = 0;
  int mcc_order = 13;
  int gl_iters = 60;
  int probe_steps = 200;
  int probe_hidden = 16;
};

Profile make_profile(const std::string& name) {
  Profile p;
  if (name == "toy") {
    p.features.n_fft = 256;
    p.features.win_length = 200;
    p.features.hop_length = 80;
    p.features.n_mels = 20;
    p.features.fmax = 4000.0;
    p.net = NetConfig::toy(0, 0);
    p.pretrain_steps = 3000;
    p.finetune_steps = 2000;
    p.pretrain_batch = 16;
    p.val_interval = 200;
  } else if (name == "full") {
    p.pretrain_steps = 200000;
    p.finetune_steps = 30000;
    p.mcc_order = 25;
    p.val_interval = 1000;
  } else {
    throw ConfigError("unknown profile '" + name + "' (use toy or full)");
  }
  p.net.mel_dim = p.features.n_mels;
  return p;
}

template <typename T>
void jset(const json& o, const std::string& key, T& field) {
  field = o.at(key).get<T>();
}

void apply_section(const json& o, const std::string& section, Profile& p) {
  for (auto it = o.begin(); it != o.end(); ++it) {
    const std::string& k = it.key();
    bool known = true;
    if (section == "features") {
      if (k == "sample_rate") jset(o, k, p.features.sample_rate);
      else if (k == "n_fft") jset(o, k, p.features.n_fft);
      else if (k == "win_length") jset(o, k, p.features.win_length);
      else if (k == "hop_length") jset(o, k, p.features.hop_length);
      else if (k == "n_mels") jset(o, k, p.features.n_mels);
      else if (k == "fmin") jset(o, k, p.features.fmin);
      else if (k == "fmax") jset(o, k, p.features.fmax);
      else if (k == "log_floor") jset(o, k, p.features.log_floor);
      else known = false;
    } else if (section == "net") {
      if (k == "rec_conv_channels") jset(o, k, p.net.rec_conv_channels);
      else if (k == "rec_lstm_hidden") jset(o, k, p.net.rec_lstm_hidden);
      else if (k == "rec_dropout") jset(o, k, p.net.rec_dropout);
      else if (k == "dec_hidden") jset(o, k, p.net.dec_hidden);
      else if (k == "dec_embed") jset(o, k, p.net.dec_embed);
      else if (k == "attn_dim") jset(o, k, p.net.attn_dim);
      else if (k == "attn_loc_filters") jset(o, k, p.net.attn_loc_filters);
      else if (k == "attn_loc_kernel") jset(o, k, p.net.attn_loc_kernel);
      else if (k == "cls_channels") jset(o, k, p.net.cls_channels);
      else if (k == "syn_prenet") jset(o, k, p.net.syn_prenet);
      else if (k == "syn_lstm_hidden") jset(o, k, p.net.syn_lstm_hidden);
      else if (k == "syn_frames_per_step") jset(o, k, p.net.syn_frames_per_step);
      else if (k == "syn_postnet_channels") jset(o, k, p.net.syn_postnet_channels);
      else if (k == "spk_embed") jset(o, k, p.net.spk_embed);
      else if (k == "prenet_dropout") jset(o, k, p.net.prenet_dropout);
      else if (k == "postnet_dropout") jset(o, k, p.net.postnet_dropout);
      else if (k == "dis_channels") jset(o, k, p.net.dis_channels);
      else if (k == "leaky_slope") jset(o, k, p.net.leaky_slope);
      else known = false;
    } else if (section == "train") {
      if (k == "pretrain_steps") jset(o, k, p.pretrain_steps);
      else if (k == "finetune_steps") jset(o, k, p.finetune_steps);
      else if (k == "pretrain_batch") jset(o, k, p.pretrain_batch);
      else if (k == "finetune_batch") jset(o, k, p.finetune_batch);
      else if (k == "lr") jset(o, k, p.lr);
      else if (k == "pretrain_lr_final") jset(o, k, p.pretrain_lr_final);
      else if (k == "finetune_lr_final") jset(o, k, p.finetune_lr_final);
      else if (k == "classifier_updates") jset(o, k, p.classifier_updates);
      else if (k == "val_interval") jset(o, k, p.val_interval);
      else if (k == "patience") jset(o, k, p.patience);
      else if (k == "gan_warmup") jset(o, k, p.gan_warmup);
      else known = false;
    } else if (section == "eval") {
      if (k == "mcc_order") jset(o, k, p.mcc_order);
      else if (k == "gl_iters") jset(o, k, p.gl_iters);
      else if (k == "probe_steps") jset(o, k, p.probe_steps);
      else if (k == "probe_hidden") jset(o, k, p.probe_hidden);
      else known = false;
    }
    if (!known)
      throw ConfigError("config: unknown key " + section + "." + k);
  }
}

Profile resolve_profile(const std::string& name, const std::string& config_path) {
  Profile p = make_profile(name);
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw DataError("cannot open config: " + config_path);
    json o;
    try {
      f >> o;
    } catch (const json::exception& e) {
      throw ConfigError(config_path + ": " + e.what());
    }
    for (auto it = o.begin(); it != o.end(); ++it) {
      if (it.key() == "features" || it.key() == "net" || it.key() == "train" ||
          it.key() == "eval")
        apply_section(it.value(), it.key(), p);
      else
        throw ConfigError("config: unknown section " + it.key());
    }
    p.net.mel_dim = p.features.n_mels;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Shared training plumbing

struct TrainFlags {
  std::string train_manifest, val_manifest, out_dir;
  std::string profile = "toy";
  std::string config_path;
  uint64_t seed = 1234;
  int steps = -1;
  int batch = -1;
  double lr = -1.0;
  double lr_final = -1.0;
  int val_interval = -1;
  int patience = -1;
  int gan_warmup = -1;
  bool no_adv = false;
  bool no_phone = false;
  bool separate = false;
  bool freeze_recognizer = false;
  bool no_gan = false;
  bool baseline_all = false;
};

void add_profile_flags(CLI::App* cmd, std::string& profile, std::string& config_path) {
  cmd->add_option("--profile", profile, "configuration preset: toy or full")
      ->default_val("toy");
  cmd->add_option("--config", config_path, "JSON file overriding profile fields");
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--train", f.train_manifest, "training manifest")->required();
  cmd->add_option("--val", f.val_manifest, "validation manifest");
  cmd->add_option("--out", f.out_dir, "run directory")->required();
  add_profile_flags(cmd, f.profile, f.config_path);
  cmd->add_option("--seed", f.seed, "master seed for weights, batching and noise");
  cmd->add_option("--steps", f.steps, "training steps (overrides the profile)");
  cmd->add_option("--batch", f.batch, "batch size (overrides the profile)");
  cmd->add_option("--lr", f.lr, "learning rate (overrides the profile)");
  cmd->add_option("--lr-final", f.lr_final,
                  "final learning-rate multiplier, reached by linear anneal");
  cmd->add_option("--val-interval", f.val_interval, "steps between validation passes");
  cmd->add_option("--patience", f.patience, "validation passes without improvement");
  cmd->add_flag("--no-adv", f.no_adv, "drop the speaker confusion objectives");
  cmd->add_flag("--no-phone", f.no_phone, "drop the phoneme decoder objective");
  cmd->add_flag("--separate", f.separate,
                "train the synthesizer on a detached representation");
  cmd->add_flag("--freeze-recognizer", f.freeze_recognizer,
                "adapt only the synthesizer");
  cmd->add_flag("--baseline-all", f.baseline_all,
                "shorthand for --no-adv --separate");
}

void resolve_ablations(TrainFlags& f) {
  if (f.baseline_all && (f.no_adv || f.separate))
    throw ConfigError(
        "--baseline-all already implies --no-adv and --separate; drop the extras");
  if (f.baseline_all) {
    f.no_adv = true;
    f.separate = true;
  }
}

TrainConfig build_train_config(const Profile& prof, const TrainFlags& f, bool finetune) {
  TrainConfig tc;
  tc.seed = f.seed;
  tc.max_steps = f.steps >= 0 ? f.steps
                              : (finetune ? prof.finetune_steps : prof.pretrain_steps);
  tc.batch_size = f.batch >= 0 ? f.batch
                               : (finetune ? prof.finetune_batch : prof.pretrain_batch);
  tc.lr = f.lr >= 0 ? f.lr : prof.lr;
  tc.lr_final_scale =
      f.lr_final >= 0 ? f.lr_final
                      : (finetune ? prof.finetune_lr_final : prof.pretrain_lr_final);
  tc.classifier_updates = prof.classifier_updates;
  tc.val_interval = f.val_interval >= 0 ? f.val_interval : prof.val_interval;
  tc.patience = f.patience >= 0 ? f.patience : prof.patience;
  tc.gan_warmup_steps = f.gan_warmup >= 0 ? f.gan_warmup : prof.gan_warmup;
  tc.no_adv = f.no_adv;
  tc.no_phone = f.no_phone;
  tc.separate_training = f.separate;
  tc.freeze_recognizer = f.freeze_recognizer;
  tc.use_gan = finetune && !f.no_gan;
  tc.weights = finetune ? LossWeights::finetune() : LossWeights::pretrain();
  tc.validate();
  return tc;
}

json ablation_json(const TrainFlags& f) {
  return json{{"no_adv", f.no_adv},
              {"no_phone", f.no_phone},
              {"separate", f.separate},
              {"freeze_recognizer", f.freeze_recognizer},
              {"no_gan", f.no_gan},
              {"baseline_all", f.baseline_all}};
}

std::string hex64(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_runinfo(const std::string& out_dir, const json& info) {
  std::ofstream f(out_dir + "/runinfo.json");
  if (!f) throw DataError("cannot write " + out_dir + "/runinfo.json");
  f << info.dump(2) << "\n";
}

void run_training(Model& model, const DataSet& ds, const DataSet* vs,
                  const TrainConfig& tc, int stage, const std::string& out_dir,
                  json& info) {
  std::ofstream log(out_dir + "/log.jsonl");
  if (!log) throw DataError("cannot write " + out_dir + "/log.jsonl");
  Trainer tr(model, ds, vs, tc, &log);
  const auto& speakers = ds.manifest.speakers;
  const auto& phones = ds.manifest.phoneme_inventory;
  bool wrote_best = false;
  tr.on_best = [&](uint64_t step, double val) {
    save_checkpoint(out_dir + "/best.ckpt",
                    snapshot(model, stage, step, speakers, phones, ds.stats,
                             tr.optimizer_state()));
    wrote_best = true;
    std::cout << "step " << step << ": validation improved to " << val << "\n";
  };
  auto res = tr.run();
  save_checkpoint(out_dir + "/last.ckpt",
                  snapshot(model, stage, tr.step(), speakers, phones, ds.stats,
                           tr.optimizer_state()));
  if (!wrote_best)
    fs::copy_file(out_dir + "/last.ckpt", out_dir + "/best.ckpt",
                  fs::copy_options::overwrite_existing);
  ds.stats.save(out_dir + "/stats.txt");

  info["result"] = {{"steps", res.steps},
                    {"final_total", res.final_total},
                    {"best_val", res.best_val},
                    {"early_stopped", res.early_stopped},
                    {"ran_validation", res.ran_validation}};
  std::cout << "finished after " << res.steps << " steps, final objective "
            << res.final_total << "\n"
            << "checkpoints in " << out_dir << "\n";
}

// keep only the named speakers; the phoneme inventory can be pinned to a
// superset so symbol ids stay aligned with a pretrained decoder
DataSet filter_speakers(const DataSet& ds, std::vector<std::string> keep,
                        const std::vector<std::string>& inventory) {
  std::sort(keep.begin(), keep.end());
  DataSet out;
  out.cfg = ds.cfg;
  out.stats = ds.stats;
  out.manifest.speakers = keep;
  out.manifest.phoneme_inventory = inventory;
  for (size_t i = 0; i < ds.manifest.utts.size(); ++i) {
    const auto& u = ds.manifest.utts[i];
    if (!std::binary_search(keep.begin(), keep.end(), u.speaker)) continue;
    for (const auto& ph : u.phonemes) out.manifest.phoneme_id(ph);  // must be known
    out.manifest.utts.push_back(u);
    out.mel.push_back(ds.mel[i]);
  }
  if (out.manifest.utts.empty())
    throw DataError("no utterances left after restricting to the speaker pair");
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

int run_toygen(const toy::ToyConfig& cfg, const std::string& out_dir) {
  auto c = toy::generate_toy_corpus(out_dir, cfg);
  std::cout << "wrote " << c.train_manifest << "\n"
            << "wrote " << c.val_manifest << "\n"
            << "wrote " << c.test_manifest << " (parallel texts)\n"
            << "speakers:";
  for (const auto& s : c.speakers) std::cout << " " << s;
  std::cout << "\n";
  return 0;
}

int run_prepare(const std::string& manifest, const std::string& stats_out,
                const std::string& profile, const std::string& config_path) {
  Profile prof = resolve_profile(profile, config_path);
  auto ds = load_dataset(manifest, prof.features);
  long frames = 0;
  for (const auto& m : ds.mel) frames += m.rows();
  ds.stats.save(stats_out);
  std::cout << ds.manifest.utts.size() << " utterances, "
            << ds.manifest.speakers.size() << " speakers, "
            << ds.manifest.phoneme_inventory.size() << " phonemes, " << frames
            << " frames\n"
            << "stats written to " << stats_out << "\n";
  return 0;
}

int run_pretrain(TrainFlags& f) {
  resolve_ablations(f);
  Profile prof = resolve_profile(f.profile, f.config_path);
  fs::create_directories(f.out_dir);

  auto ds = load_dataset(f.train_manifest, prof.features);
  std::optional<DataSet> vs;
  if (!f.val_manifest.empty())
    vs = load_dataset(f.val_manifest, prof.features, &ds.stats);
  if (ds.manifest.speakers.size() < 2)
    throw DataError("multi-speaker training needs at least two speakers");

  NetConfig net = prof.net;
  net.n_speakers = static_cast<int>(ds.manifest.speakers.size());
  net.n_phonemes = static_cast<int>(ds.manifest.phoneme_inventory.size());
  auto model = Model::create(net, f.seed, false);
  TrainConfig tc = build_train_config(prof, f, false);

  json info{{"command", "pretrain"},
            {"train", f.train_manifest},
            {"val", f.val_manifest},
            {"profile", f.profile},
            {"seed", f.seed},
            {"steps", tc.max_steps},
            {"batch", tc.batch_size},
            {"lr", tc.lr},
            {"lr_final_scale", tc.lr_final_scale},
            {"ablations", ablation_json(f)},
            {"net_fingerprint", hex64(net.fingerprint())},
            {"feature_fingerprint", hex64(prof.features.fingerprint())},
            {"speakers", ds.manifest.speakers},
            {"phonemes", ds.manifest.phoneme_inventory}};
  run_training(*model, ds, vs ? &*vs : nullptr, tc, 1, f.out_dir, info);
  write_runinfo(f.out_dir, info);
  return 0;
}

int run_finetune(TrainFlags& f, const std::string& from, const std::string& pair_arg,
                 bool no_pretrain) {
  resolve_ablations(f);
  if (no_pretrain && !from.empty())
    throw ConfigError("--no-pretrain and --from conflict: pick one");
  if (!no_pretrain && from.empty())
    throw ConfigError("finetune needs --from CKPT (or --no-pretrain)");
  auto comma = pair_arg.find(',');
  if (comma == std::string::npos || comma == 0 || comma + 1 >= pair_arg.size())
    throw ConfigError("--pair expects two names: A,B");
  std::string spk_a = pair_arg.substr(0, comma);
  std::string spk_b = pair_arg.substr(comma + 1);
  if (spk_a == spk_b) throw ConfigError("--pair needs two different speakers");

  Profile prof = resolve_profile(f.profile, f.config_path);
  fs::create_directories(f.out_dir);

  std::optional<Checkpoint> ck;
  if (!no_pretrain) {
    ck = load_checkpoint(from);
    if (ck->stats.feature_fingerprint != prof.features.fingerprint())
      throw IntegrityError(
          "checkpoint was trained under different feature settings");
  }

  const NormStats* stats = ck ? &ck->stats : nullptr;
  auto full = load_dataset(f.train_manifest, prof.features, stats);
  const auto& inventory =
      ck ? ck->phonemes : full.manifest.phoneme_inventory;
  auto ds = filter_speakers(full, {spk_a, spk_b}, inventory);
  std::optional<DataSet> vs;
  if (!f.val_manifest.empty())
    vs = filter_speakers(
        load_dataset(f.val_manifest, prof.features, &full.stats),
        {spk_a, spk_b}, inventory);

  NetConfig net = ck ? ck->cfg : prof.net;
  net.n_speakers = 2;
  net.n_phonemes = static_cast<int>(inventory.size());
  if (ck) check_compatible(ck->cfg, net);
  auto model = Model::create(net, f.seed, true);
  if (ck)
    restore(*model, *ck, {"cls.fc", "cls2.fc", "syn.spk_table", "dis"});

  TrainConfig tc = build_train_config(prof, f, true);
  json info{{"command", "finetune"},
            {"train", f.train_manifest},
            {"val", f.val_manifest},
            {"from", from},
            {"pair", {spk_a, spk_b}},
            {"profile", f.profile},
            {"seed", f.seed},
            {"steps", tc.max_steps},
            {"batch", tc.batch_size},
            {"lr", tc.lr},
            {"no_pretrain", no_pretrain},
            {"ablations", ablation_json(f)},
            {"net_fingerprint", hex64(net.fingerprint())},
            {"feature_fingerprint", hex64(prof.features.fingerprint())},
            {"speakers", ds.manifest.speakers},
            {"phonemes", inventory}};
  run_training(*model, ds, vs ? &*vs : nullptr, tc, 2, f.out_dir, info);
  write_runinfo(f.out_dir, info);
  return 0;
}

int run_convert(const std::string& model_path, const std::string& in_wav,
                const std::string& target, const std::string& out_wav,
                const std::string& profile, const std::string& config_path,
                int gl_iters) {
  Profile prof = resolve_profile(profile, config_path);
  auto cm = load_conversion_model(model_path);
  int iters = gl_iters >= 0 ? gl_iters : prof.gl_iters;
  auto lm = convert_wav(cm, prof.features, in_wav, target, out_wav, iters);
  std::cout << "converted " << lm.rows() << " frames to voice '" << target
            << "' -> " << out_wav << "\n";
  return 0;
}

int run_plot(const std::string& log_path, const std::string& out_svg) {
  std::ifstream f(log_path);
  if (!f) throw DataError("cannot open log: " + log_path);
  std::map<std::string, eval::Series> series;
  const char* keys[] = {"total", "rec", "phone", "adv", "adv2", "cls", "dis", "gan"};
  std::string line;
  size_t lines = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json o;
    try {
      o = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(log_path + ": bad log line: " + e.what());
    }
    ++lines;
    for (const char* k : keys)
      if (o.contains(k)) {
        auto& s = series[k];
        s.name = k;
        s.y.push_back(o[k].get<double>());
      }
  }
  if (lines == 0) throw DataError("log has no entries: " + log_path);

  std::vector<eval::Series> list;
  for (const char* k : keys) {
    auto it = series.find(k);
    if (it == series.end()) continue;
    bool all_zero = true;
    for (double v : it->second.y) all_zero = all_zero && v == 0.0;
    if (!all_zero) list.push_back(it->second);
  }
  std::ofstream out(out_svg);
  if (!out) throw DataError("cannot write " + out_svg);
  out << eval::svg_line_chart("training objectives: " + log_path, list);
  std::cout << "plotted " << lines << " steps -> " << out_svg << "\n";
  return 0;
}

// the piece of an utterance id that identifies its text: ids in parallel
// sets end with "_<speaker>"; anything else falls back to the phone string
std::string text_key(const Utterance& u) {
  std::string suffix = "_" + u.speaker;
  if (u.id.size() > suffix.size() &&
      u.id.compare(u.id.size() - suffix.size(), suffix.size(), suffix) == 0)
    return u.id.substr(0, u.id.size() - suffix.size());
  std::string k = "ph:";
  for (const auto& p : u.phonemes) k += p + " ";
  return k;
}

std::string fmt1(const std::optional<double>& v) {
  if (!v) return "-";
  char b[32];
  std::snprintf(b, sizeof b, "%.1f", *v);
  return b;
}

int phone_id_in(const std::vector<std::string>& inventory, const std::string& ph) {
  auto it = std::lower_bound(inventory.begin(), inventory.end(), ph);
  if (it == inventory.end() || *it != ph)
    throw DataError("phoneme '" + ph + "' is not in the model inventory");
  return static_cast<int>(it - inventory.begin());
}

int run_evaluate(const std::string& model_path, const std::string& test_manifest,
                 const std::string& source, const std::string& target,
                 const std::string& out_dir, const std::string& profile,
                 const std::string& config_path, int mcc_order_flag,
                 int gl_iters_flag, uint64_t seed) {
  Profile prof = resolve_profile(profile, config_path);
  int mcc_order = mcc_order_flag >= 0 ? mcc_order_flag : prof.mcc_order;
  int gl_iters = gl_iters_flag >= 0 ? gl_iters_flag : prof.gl_iters;

  auto cm = load_conversion_model(model_path);
  if (cm.stats.feature_fingerprint != prof.features.fingerprint())
    throw IntegrityError("model was trained under different feature settings");
  int src_id = cm.speaker_index(source);
  int tgt_id = cm.speaker_index(target);
  if (src_id == tgt_id) throw ConfigError("evaluate: source equals target");

  auto manifest = load_manifest(test_manifest);
  fs::create_directories(out_dir + "/converted");

  struct Side {
    const Utterance* utt = nullptr;
    dsp::Mat logmel;
    std::vector<double> wav;
  };
  std::map<std::string, std::map<std::string, Side>> texts;
  std::vector<Eigen::MatrixXd> probe_feats;
  std::vector<int> probe_labels;
  for (const auto& u : manifest.utts) {
    if (u.speaker != source && u.speaker != target) continue;
    Side s;
    s.utt = &u;
    auto w = read_wav(u.audio_path);
    if (w.sample_rate != prof.features.sample_rate)
      throw DataError(u.audio_path + ": unexpected sample rate");
    s.logmel = dsp::log_mel(w.samples, prof.features);
    s.wav = std::move(w.samples);
    probe_feats.push_back(normalize(s.logmel, cm.stats));
    probe_labels.push_back(cm.speaker_index(u.speaker));
    texts[text_key(u)][u.speaker] = std::move(s);
  }
  if (probe_feats.empty())
    throw DataError("test manifest has no utterances for the requested pair");

  // an independent frame-level speaker probe, fit on the original recordings
  auto probe = eval::SpeakerProbe::create(cm.cfg.mel_dim, prof.probe_hidden,
                                          static_cast<int>(cm.speakers.size()), seed);
  probe.fit(probe_feats, probe_labels, prof.probe_steps, 0.02);
  double probe_train_acc = probe.accuracy(probe_feats, probe_labels);

  struct Row {
    std::string key;
    double mcd = 0.0, mcd_baseline = 0.0;
    std::optional<double> f0;
    double phone_acc = 0.0;
    bool probe_hit = false;
  };
  std::vector<Row> rows;
  int skipped = 0;
  for (auto& [key, sides] : texts) {
    auto si = sides.find(source);
    auto ti = sides.find(target);
    if (si == sides.end() || ti == sides.end()) {
      ++skipped;  // text not recorded by both speakers
      continue;
    }
    const Side& src = si->second;
    const Side& ref = ti->second;

    ag::Mat conv_norm = convert_mel(cm, normalize(src.logmel, cm.stats), tgt_id);
    dsp::Mat conv_logmel = denormalize(conv_norm, cm.stats);
    auto conv_wav = dsp::mel_to_waveform(conv_logmel, prof.features, gl_iters);
    write_wav(out_dir + "/converted/" + key + "_to_" + target + ".wav", conv_wav,
              prof.features.sample_rate);

    Row row;
    row.key = key;
    auto cc = eval::mcc(conv_logmel, mcc_order);
    auto rc = eval::mcc(ref.logmel, mcc_order);
    auto path = eval::dtw(cc, rc);
    row.mcd = eval::mel_cepstral_distortion(cc, rc, path.path);
    auto sc = eval::mcc(src.logmel, mcc_order);
    auto spath = eval::dtw(sc, rc);
    row.mcd_baseline = eval::mel_cepstral_distortion(sc, rc, spath.path);

    auto f0_conv = dsp::estimate_f0(conv_wav, prof.features);
    auto f0_ref = dsp::estimate_f0(ref.wav, prof.features);
    row.f0 = eval::f0_rmse(f0_conv, f0_ref, path.path);

    std::vector<int> ref_ids;
    for (const auto& ph : src.utt->phonemes)
      ref_ids.push_back(phone_id_in(cm.phonemes, ph));
    row.phone_acc =
        eval::phoneme_accuracy(ref_ids, recognize_phonemes(cm, conv_norm));

    row.probe_hit = probe.predict(conv_norm) == tgt_id;
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw DataError("no parallel texts shared by '" + source + "' and '" + target + "'");

  double mean_mcd = 0.0, mean_base = 0.0, mean_acc = 0.0, hits = 0.0;
  double f0_sum = 0.0;
  int f0_n = 0;
  for (const auto& r : rows) {
    mean_mcd += r.mcd;
    mean_base += r.mcd_baseline;
    mean_acc += r.phone_acc;
    hits += r.probe_hit ? 1.0 : 0.0;
    if (r.f0) {
      f0_sum += *r.f0;
      ++f0_n;
    }
  }
  double n = static_cast<double>(rows.size());
  mean_mcd /= n;
  mean_base /= n;
  mean_acc /= n;
  double target_rate = hits / n;

  std::ostringstream rep;
  rep << "conversion evaluation: " << source << " -> " << target << "\n"
      << "model: " << model_path << "\n"
      << "pairs evaluated: " << rows.size() << " (skipped " << skipped << ")\n\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %8s %12s %8s %10s %6s\n", "text", "mcd",
                "mcd_source", "f0_rmse", "phone_acc", "probe");
  rep << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-14s %8.3f %12.3f %8s %10.3f %6s\n",
                  r.key.c_str(), r.mcd, r.mcd_baseline, fmt1(r.f0).c_str(),
                  r.phone_acc, r.probe_hit ? "hit" : "miss");
    rep << buf;
  }
  std::optional<double> mean_f0;
  if (f0_n) mean_f0 = f0_sum / f0_n;
  std::snprintf(buf, sizeof buf,
                "\nmean mcd %.3f dB (source baseline %.3f dB)\n"
                "mean f0 rmse %s Hz over %d voiced pairs\n"
                "mean phoneme accuracy %.3f\n"
                "probe picks the target voice %.0f%% of the time "
                "(probe train accuracy %.3f)\n",
                mean_mcd, mean_base, fmt1(mean_f0).c_str(), f0_n, mean_acc,
                100.0 * target_rate, probe_train_acc);
  rep << buf;

  std::ofstream txt(out_dir + "/report.txt");
  if (!txt) throw DataError("cannot write " + out_dir + "/report.txt");
  txt << rep.str();
  std::cout << rep.str();

  std::ofstream csv(out_dir + "/report.csv");
  if (!csv) throw DataError("cannot write " + out_dir + "/report.csv");
  csv << "text,mcd,mcd_source,f0_rmse,phoneme_acc,probe_hit\n";
  for (const auto& r : rows) {
    csv << r.key << "," << r.mcd << "," << r.mcd_baseline << ",";
    if (r.f0) csv << *r.f0;
    csv << "," << r.phone_acc << "," << (r.probe_hit ? 1 : 0) << "\n";
  }

  std::vector<eval::Series> mcd_series{{"converted", {}}, {"source baseline", {}}};
  std::vector<eval::Series> acc_series{{"phoneme accuracy", {}}, {"probe hit", {}}};
  for (const auto& r : rows) {
    mcd_series[0].y.push_back(r.mcd);
    mcd_series[1].y.push_back(r.mcd_baseline);
    acc_series[0].y.push_back(r.phone_acc);
    acc_series[1].y.push_back(r.probe_hit ? 1.0 : 0.0);
  }
  std::ofstream svg1(out_dir + "/mcd.svg");
  svg1 << eval::svg_line_chart("cepstral distortion per text (dB)", mcd_series);
  std::ofstream svg2(out_dir + "/accuracy.svg");
  svg2 << eval::svg_line_chart("content and voice identity per text", acc_series);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial recognition-synthesis voice conversion"};
  app.require_subcommand(1);

  // toygen
  auto* cg = app.add_subcommand("toygen", "generate a synthetic vowel-tone corpus");
  toy::ToyConfig tcfg;
  std::string toy_out;
  cg->add_option("--out", toy_out, "corpus directory")->required();
  cg->add_option("--speakers", tcfg.n_speakers, "number of voices (2..4)");
  cg->add_option("--train", tcfg.train_per_speaker, "training utterances per speaker");
  cg->add_option("--val", tcfg.val_per_speaker, "validation utterances per speaker");
  cg->add_option("--test", tcfg.test_texts, "parallel held-out texts");
  cg->add_option("--seed", tcfg.seed, "corpus seed");
  cg->add_option("--sample-rate", tcfg.sample_rate, "output sample rate");

  // prepare
  auto* cp = app.add_subcommand("prepare", "extract features and write stats");
  std::string prep_manifest, prep_out, prep_profile = "toy", prep_config;
  cp->add_option("--manifest", prep_manifest, "corpus manifest")->required();
  cp->add_option("--out", prep_out, "stats file to write")->required();
  add_profile_flags(cp, prep_profile, prep_config);

  // pretrain
  auto* c1 = app.add_subcommand("pretrain", "multi-speaker reconstruction training");
  TrainFlags f1;
  add_train_flags(c1, f1);

  // finetune
  auto* c2 = app.add_subcommand("finetune", "adapt a pretrained model to one pair");
  TrainFlags f2;
  std::string from, pair_arg;
  bool no_pretrain = false;
  add_train_flags(c2, f2);
  c2->add_option("--from", from, "pretrained checkpoint");
  c2->add_option("--pair", pair_arg, "the two speakers, A,B")->required();
  c2->add_flag("--no-pretrain", no_pretrain, "start from random weights");
  c2->add_flag("--no-gan", f2.no_gan, "train without the per-speaker critics");

  // convert
  auto* c3 = app.add_subcommand("convert", "convert one recording to another voice");
  std::string cv_model, cv_in, cv_target, cv_out, cv_profile = "toy", cv_config;
  int cv_gl = -1;
  c3->add_option("--model", cv_model, "checkpoint")->required();
  c3->add_option("--in", cv_in, "source WAV")->required();
  c3->add_option("--target", cv_target, "target speaker name")->required();
  c3->add_option("--out", cv_out, "output WAV")->required();
  add_profile_flags(c3, cv_profile, cv_config);
  c3->add_option("--gl-iters", cv_gl, "phase recovery iterations");

  // evaluate
  auto* c4 = app.add_subcommand("evaluate", "objective metrics on a parallel test set");
  std::string ev_model, ev_test, ev_source, ev_target, ev_out;
  std::string ev_profile = "toy", ev_config;
  int ev_mcc = -1, ev_gl = -1;
  uint64_t ev_seed = 1;
  c4->add_option("--model", ev_model, "checkpoint")->required();
  c4->add_option("--test", ev_test, "parallel test manifest")->required();
  c4->add_option("--source", ev_source, "source speaker")->required();
  c4->add_option("--target", ev_target, "target speaker")->required();
  c4->add_option("--out", ev_out, "report directory")->required();
  add_profile_flags(c4, ev_profile, ev_config);
  c4->add_option("--mcc-order", ev_mcc, "cepstral order for distortion");
  c4->add_option("--gl-iters", ev_gl, "phase recovery iterations");
  c4->add_option("--probe-seed", ev_seed, "seed for the speaker probe");

  // plot
  auto* c5 = app.add_subcommand("plot", "render training curves from a jsonl log");
  std::string pl_log, pl_out;
  c5->add_option("--log", pl_log, "log.jsonl from a run directory")->required();
  c5->add_option("--out", pl_out, "SVG file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cg->parsed()) return run_toygen(tcfg, toy_out);
    if (cp->parsed()) return run_prepare(prep_manifest, prep_out, prep_profile, prep_config);
    if (c1->parsed()) return run_pretrain(f1);
    if (c2->parsed()) return run_finetune(f2, from, pair_arg, no_pretrain);
    if (c3->parsed())
      return run_convert(cv_model, cv_in, cv_target, cv_out, cv_profile, cv_config, cv_gl);
    if (c4->parsed())
      return run_evaluate(ev_model, ev_test, ev_source, ev_target, ev_out, ev_profile,
                          ev_config, ev_mcc, ev_gl, ev_seed);
    if (c5->parsed()) return run_plot(pl_log, pl_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 5;
  }
  return 0;
}
