// Copyright (c) 2026 The utispeech Authors
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

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "uts/error.hpp"
#include "uts/models.hpp"
#include "uts/nn/graph.hpp"

namespace uts::training {

using nn::Mat;

// Cosine decay with warm restarts. Cycle i lasts first_cycle_steps *
// cycle_growth^i steps and starts at lr_initial * peak_decay^i; inside a
// cycle the rate follows half a cosine down to the absolute floor lr_min.
struct TrainingSchedule {
  double lr_initial = 1e-4;
  std::int64_t first_cycle_steps = 100;
  double cycle_growth = 5.0;
  double peak_decay = 0.9;
  double lr_min = 1e-5;

  void validate() const;
};

double learning_rate_at(std::int64_t step, const TrainingSchedule& schedule);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with decoupled weight decay: p <- p - lr * wd * p, then the
// bias-corrected adaptive step.
template <typename T>
class AdamW {
 public:
  explicit AdamW(nn::ParameterSet<T>& params, AdamWConfig config = {});

  // Throws NumericError, leaving parameters and moments untouched, when any
  // gradient is non-finite.
  void step(double lr, double weight_decay);

  std::int64_t steps() const { return steps_; }

 private:
  nn::ParameterSet<T>& params_;
  AdamWConfig config_;
  std::vector<Mat<T>> m_, v_;
  std::int64_t steps_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

// Tracks the best development score; stop() turns true once `patience`
// consecutive epochs failed to improve on it.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);

  // Records one epoch (1-based order of calls); returns true if it improved.
  bool update(double dev_score);
  bool stop() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }
  int epochs() const { return epochs_; }

 private:
  int patience_;
  int epochs_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_ = 0.0;
};

struct TrainerConfig {
  int batch_size = 128;
  // Batches are evaluated in slices of this many frames with gradient
  // accumulation. Without dropout, results do not depend on it beyond
  // round-off.
  int micro_batch = 32;
  int max_epochs = 20;
  int patience = 3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  // Also measure the training-set MSE in inference mode after each epoch.
  bool eval_train_mse = false;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean mini-batch loss in training mode
  std::optional<double> train_mse;
  double dev_mse = 0.0;
  double lr_first = 0.0;
  double lr_last = 0.0;
  double seconds = 0.0;  // optimisation time, excluding evaluation
  int skipped_steps = 0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> lr_trace;  // one entry per optimizer step
  int stopped_epoch = 0;
  int best_epoch = 0;
  double best_dev_mse = 0.0;

  // One JSON object per epoch followed by a summary record.
  void write_jsonl(const std::filesystem::path& path) const;
};

// Raised when the training loss becomes non-finite; carries the history up
// to that point.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, TrainingHistory history)
      : NumericError(what), history_(std::move(history)) {}
  const TrainingHistory& history() const { return history_; }

 private:
  TrainingHistory history_;
};

// Paired frames (flattened 64 x 128 rows) and standardized mel targets.
struct FrameDataset {
  Mat<float> inputs;
  Mat<float> targets;

  Eigen::Index size() const { return inputs.rows(); }
};

double evaluate_mse(models::Model<float>& model, const FrameDataset& data, int batch = 64);

// Mini-batch training with per-batch schedule steps and early stopping on
// dev MSE. On return the model holds the best-dev weights.
TrainingHistory fit(models::Model<float>& model, const FrameDataset& train, const FrameDataset& dev,
                    const TrainingSchedule& schedule, const TrainerConfig& config,
                    std::ostream* log = nullptr);

}  // namespace uts::training
