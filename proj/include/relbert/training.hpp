// Copyright 2026 The RelBert Authors.
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

// Adam optimization of the joint MLM + NSP objective with seeded, resumable
// epoch scheduling.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relbert/checkpoint.hpp"
#include "relbert/corpus.hpp"
#include "relbert/model.hpp"
#include "relbert/relational.hpp"

namespace relbert {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  double mask_prob = 0.15;
  double nsp_negative_ratio = 0.5;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // steps between periodic checkpoints; 0 disables them
  std::size_t max_steps = 0;         // stop after this many total steps; 0 runs every epoch
  bool linear_decay = false;
  std::size_t depth = 0;       // FK join depth of training sentences
  std::string output_dir;      // checkpoints and log; empty writes nothing

  void validate() const {
    if (!(lr > 0)) throw Error(ErrorCode::kInvalidArgument, "lr must be > 0");
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) {
      throw Error(ErrorCode::kInvalidArgument, "betas must lie in (0, 1)");
    }
    if (!(eps > 0)) throw Error(ErrorCode::kInvalidArgument, "eps must be > 0");
    if (epochs < 1) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
    if (!(mask_prob > 0 && mask_prob < 1)) throw Error(ErrorCode::kInvalidArgument, "mask_prob must lie in (0, 1)");
    if (!(nsp_negative_ratio > 0 && nsp_negative_ratio < 1)) {
      throw Error(ErrorCode::kInvalidArgument, "nsp_negative_ratio must lie in (0, 1)");
    }
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"mask_prob", c.mask_prob},
                     {"nsp_negative_ratio", c.nsp_negative_ratio},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"max_steps", c.max_steps},
                     {"linear_decay", c.linear_decay},
                     {"depth", c.depth}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.mask_prob = j.value("mask_prob", c.mask_prob);
  c.nsp_negative_ratio = j.value("nsp_negative_ratio", c.nsp_negative_ratio);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.linear_decay = j.value("linear_decay", c.linear_decay);
  c.depth = j.value("depth", c.depth);
}

struct TrainLogRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double mlm = 0;
  double nsp = 0;
  double total = 0;
  double wall_seconds = 0;
};

inline std::string format_log_record(const TrainLogRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "step=%zu epoch=%zu mlm=%.6f nsp=%.6f total=%.6f", r.step, r.epoch, r.mlm, r.nsp,
                r.total);
  return buf;
}

template <class T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// One bias-corrected Adam update over params.named(). Every parameter must
// carry a gradient.
template <class T>
void adam_step(ModelParams<T>& params, AdamState<T>& state, const TrainConfig& config,
               std::optional<double> lr_override = std::nullopt) {
  auto named = params.named();
  if (state.m.empty()) {
    for (const auto& [name, t] : named) {
      state.m.emplace_back(t.numel(), T(0));
      state.v.emplace_back(t.numel(), T(0));
    }
  }
  if (state.m.size() != named.size()) throw Error(ErrorCode::kInvalidArgument, "optimizer state does not match model");
  for (const auto& [name, t] : named) {
    if (!t.has_grad()) throw Error(ErrorCode::kMissingGradient, "parameter '" + name + "' has no gradient");
  }
  ++state.step;
  const double lr = lr_override.value_or(config.lr);
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < named.size(); ++p) {
    auto& t = named[p].second;
    auto data = t.data();
    auto grad = t.grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      const double mi = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      const double vi = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      data[i] = static_cast<T>(data[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + config.eps));
    }
  }
}

// Items of one epoch: NSP pairs of every table with >= 2 rows, each pair
// masked, then shuffled. Depends only on (seed, epoch, data).
inline std::vector<TrainingItem> epoch_items(const Database& db, const Vocabulary& vocab, const TrainConfig& config,
                                             std::size_t epoch) {
  Rng rng = derive_rng(config.seed, streams::kEpoch, epoch);
  std::vector<TrainingItem> items;
  for (std::size_t t = 0; t < db.schema().tables.size(); ++t) {
    if (db.row_count(t) < 2) continue;
    for (auto& pair : sample_nsp_pairs(db, vocab, t, config.nsp_negative_ratio, rng, config.depth)) {
      items.push_back({apply_mlm_mask(join_pair(pair.first, pair.second), vocab, config.mask_prob, rng), pair.label});
    }
  }
  shuffle_in_place(items, rng);
  return items;
}

inline std::size_t pair_count(const Database& db) {
  std::size_t n = 0;
  for (std::size_t t = 0; t < db.schema().tables.size(); ++t) {
    if (db.row_count(t) >= 2) n += db.row_count(t) - 1;
  }
  return n;
}

class Trainer {
 public:
  using LogCallback = std::function<void(const TrainLogRecord&)>;

  Trainer(const Database& db, const Vocabulary& vocab, const ModelConfig& model_config, TrainConfig train_config)
      : db_(db), vocab_(vocab), config_(std::move(train_config)), params_(init_params<float>(model_config, vocab)) {
    config_.validate();
    check_corpus();
  }

  // Continues from a checkpoint written by this class. DigestMismatch if the
  // data no longer yields the checkpoint's vocabulary.
  Trainer(const Database& db, const Vocabulary& vocab, const CheckpointData& ck, TrainConfig train_config)
      : db_(db), vocab_(vocab), config_(std::move(train_config)) {
    config_.validate();
    verify_vocabulary(ck, vocab);
    if (!ck.meta.contains("model") || !ck.meta.contains("optimizer_step")) {
      throw Error(ErrorCode::kCheckpointFormat, "checkpoint carries no training state");
    }
    params_ = restore_params(ck, ck.meta["model"].get<ModelConfig>(), vocab);
    state_.step = ck.meta["optimizer_step"].get<std::uint64_t>();
    for (const auto& [name, t] : params_.named()) {
      const auto* m = ck.find("adam.m." + name);
      const auto* v = ck.find("adam.v." + name);
      if (!m || !v) throw Error(ErrorCode::kCheckpointFormat, "checkpoint lacks optimizer state for '" + name + "'");
      state_.m.push_back(m->data);
      state_.v.push_back(v->data);
    }
    check_corpus();
  }

  std::size_t steps_per_epoch() const { return (pair_count(db_) + config_.batch_size - 1) / config_.batch_size; }
  std::size_t total_steps() const { return steps_per_epoch() * config_.epochs; }
  std::size_t step() const { return static_cast<std::size_t>(state_.step); }
  const ModelParams<float>& params() const { return params_; }
  ModelParams<float>& params() { return params_; }
  const AdamState<float>& optimizer() const { return state_; }
  const std::vector<TrainLogRecord>& log() const { return log_; }
  const TrainConfig& config() const { return config_; }

  // Trains until every epoch is done or max_steps is reached.
  void run(const LogCallback& on_log = {}) {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t spe = steps_per_epoch();
    const std::size_t limit = config_.max_steps ? std::min(config_.max_steps, total_steps()) : total_steps();
    std::ofstream log_file;
    if (!config_.output_dir.empty()) {
      std::filesystem::create_directories(config_.output_dir);
      log_file.open(std::filesystem::path(config_.output_dir) / "train.log", step() == 0 ? std::ios::trunc : std::ios::app);
    }
    while (step() < limit) {
      const std::size_t epoch = step() / spe;
      auto batches = make_batches(epoch_items(db_, vocab_, config_, epoch), config_.batch_size,
                                  params_.config.max_len);
      for (std::size_t b = step() % spe; b < batches.size() && step() < limit; ++b) {
        auto terms = compute_loss(batches[b], params_, vocab_);
        const auto loss = breakdown(terms);
        if (!std::isfinite(loss.total)) {
          throw Error(ErrorCode::kNumericalDivergence, "non-finite loss at step " + std::to_string(step() + 1));
        }
        params_.zero_grad();
        backward(terms.total);
        double lr = config_.lr;
        if (config_.linear_decay) {
          lr *= std::max(0.0, 1.0 - static_cast<double>(step()) / static_cast<double>(total_steps()));
        }
        adam_step(params_, state_, config_, lr);
        TrainLogRecord rec{step(), epoch, loss.mlm, loss.nsp, loss.total,
                           std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
        log_.push_back(rec);
        if (log_file) log_file << format_log_record(rec) << "\n";
        if (on_log) on_log(rec);
        if (config_.checkpoint_every && !config_.output_dir.empty() && step() % config_.checkpoint_every == 0) {
          save((std::filesystem::path(config_.output_dir) / ("checkpoint-" + std::to_string(step()) + ".bin")).string());
        }
      }
    }
    if (!config_.output_dir.empty()) save(final_checkpoint_path(config_.output_dir));
  }

  static std::string final_checkpoint_path(const std::string& dir) {
    return (std::filesystem::path(dir) / "checkpoint-final.bin").string();
  }

  CheckpointData checkpoint() const {
    CheckpointData ck;
    ck.meta["kind"] = "model";
    ck.meta["model"] = params_.config;
    ck.meta["train"] = config_;
    ck.meta["optimizer_step"] = state_.step;
    ck.vocab_text = vocab_.serialize();
    ck.vocab_digest = vocab_.digest();
    append_params(ck, params_);
    const auto named = params_.named();
    for (std::size_t p = 0; p < named.size(); ++p) {
      const auto& shape = named[p].second.shape();
      const bool have = p < state_.m.size();
      ck.blobs.push_back({"adam.m." + named[p].first, shape,
                          have ? state_.m[p] : std::vector<float>(named[p].second.numel(), 0.0f)});
      ck.blobs.push_back({"adam.v." + named[p].first, shape,
                          have ? state_.v[p] : std::vector<float>(named[p].second.numel(), 0.0f)});
    }
    return ck;
  }

  void save(const std::string& path) const { write_checkpoint(path, checkpoint()); }

 private:
  void check_corpus() const {
    if (pair_count(db_) == 0) throw Error(ErrorCode::kEmptyCorpus, "no table has two or more rows");
  }

  const Database& db_;
  const Vocabulary& vocab_;
  TrainConfig config_;
  ModelParams<float> params_;
  AdamState<float> state_;
  std::vector<TrainLogRecord> log_;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<TrainLogRecord> log;
};

inline TrainResult train(const Database& db, const Vocabulary& vocab, const ModelConfig& model_config,
                         const TrainConfig& train_config, const Trainer::LogCallback& on_log = {}) {
  Trainer trainer(db, vocab, model_config, train_config);
  trainer.run(on_log);
  return {trainer.params(), trainer.log()};
}

// Continues training from `checkpoint_path` under `train_config` (its seed,
// batch size and schedule must match the original run for an identical
// trajectory).
inline TrainResult resume(const std::string& checkpoint_path, const Database& db, const Vocabulary& vocab,
                          const TrainConfig& train_config, const Trainer::LogCallback& on_log = {}) {
  const auto ck = read_checkpoint(checkpoint_path);
  Trainer trainer(db, vocab, ck, train_config);
  trainer.run(on_log);
  return {trainer.params(), trainer.log()};
}

}  // namespace relbert
