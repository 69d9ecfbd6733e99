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

#include "uts/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>

#include <nlohmann/json.hpp>

#include "uts/nn/ops.hpp"

namespace uts::training {

void TrainingSchedule::validate() const {
  if (!(lr_min < lr_initial) || lr_min < 0.0) throw ConfigurationError("need 0 <= lr_min < lr_initial");
  if (first_cycle_steps < 1) throw ConfigurationError("first_cycle_steps must be >= 1");
  if (cycle_growth < 1.0) throw ConfigurationError("cycle_growth must be >= 1");
  if (peak_decay <= 0.0 || peak_decay > 1.0) throw ConfigurationError("peak_decay must be in (0, 1]");
}

double learning_rate_at(std::int64_t step, const TrainingSchedule& s) {
  if (step < 0) throw PreconditionError("step must be >= 0");
  double length = static_cast<double>(s.first_cycle_steps);
  double peak = s.lr_initial;
  double local = static_cast<double>(step);
  while (local >= length) {
    local -= length;
    length *= s.cycle_growth;
    peak *= s.peak_decay;
  }
  peak = std::max(peak, s.lr_min);
  return s.lr_min + (peak - s.lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * local / length));
}

template <typename T>
AdamW<T>::AdamW(nn::ParameterSet<T>& params, AdamWConfig config) : params_(params), config_(config) {
  for (const auto& p : params_) {
    m_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
  }
}

template <typename T>
void AdamW<T>::step(double lr, double weight_decay) {
  for (const auto& p : params_) {
    if (!p->grad.allFinite()) throw NumericError("non-finite gradient in " + p->name);
  }
  ++steps_;
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, static_cast<double>(steps_)));
  const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, static_cast<double>(steps_)));
  const T rate = static_cast<T>(lr), eps = static_cast<T>(config_.epsilon);
  const T decay = static_cast<T>(1.0 - lr * weight_decay);
  std::size_t i = 0;
  for (auto& p : params_) {
    auto& m = m_[i];
    auto& v = v_[i];
    ++i;
    m = b1 * m + (T(1) - b1) * p->grad;
    v = b2 * v + (T(1) - b2) * p->grad.cwiseAbs2();
    p->value *= decay;
    p->value.array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

template class AdamW<float>;
template class AdamW<double>;

EarlyStopper::EarlyStopper(int patience) : patience_(patience) {
  if (patience < 1) throw ConfigurationError("patience must be >= 1");
}

bool EarlyStopper::update(double dev_score) {
  ++epochs_;
  if (epochs_ == 1 || dev_score < best_) {
    best_ = dev_score;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

void TrainerConfig::validate() const {
  if (batch_size < 1) throw ConfigurationError("batch_size must be >= 1");
  if (micro_batch < 1) throw ConfigurationError("micro_batch must be >= 1");
  if (max_epochs < 1) throw ConfigurationError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigurationError("patience must be >= 1");
  if (weight_decay < 0.0) throw ConfigurationError("weight_decay must be >= 0");
}

void TrainingHistory::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  for (const auto& e : epochs) {
    nlohmann::json j{{"epoch", e.epoch},           {"train_loss", e.train_loss},
                     {"dev_mse", e.dev_mse},       {"lr_first", e.lr_first},
                     {"lr_last", e.lr_last},       {"seconds", e.seconds},
                     {"skipped_steps", e.skipped_steps}};
    if (e.train_mse) j["train_mse"] = *e.train_mse;
    os << j.dump() << '\n';
  }
  os << nlohmann::json{{"summary", true},
                       {"stopped_epoch", stopped_epoch},
                       {"best_epoch", best_epoch},
                       {"best_dev_mse", best_dev_mse},
                       {"steps", lr_trace.size()}}
            .dump()
     << '\n';
}

double evaluate_mse(models::Model<float>& model, const FrameDataset& data, int batch) {
  if (data.size() == 0) throw InsufficientDataError("cannot evaluate on an empty dataset");
  const Mat<float> pred = model.predict(data.inputs, batch);
  return (pred.cast<double>() - data.targets.cast<double>()).squaredNorm() /
         static_cast<double>(pred.size());
}

TrainingHistory fit(models::Model<float>& model, const FrameDataset& train, const FrameDataset& dev,
                    const TrainingSchedule& schedule, const TrainerConfig& config, std::ostream* log) {
  schedule.validate();
  config.validate();
  if (train.size() == 0 || dev.size() == 0) throw InsufficientDataError("train and dev sets must be non-empty");
  if (train.targets.rows() != train.size() || dev.targets.rows() != dev.size()) {
    throw ShapeError("inputs and targets differ in frame count");
  }

  auto& params = model.parameters();
  AdamW<float> optimizer(params);
  EarlyStopper stopper(config.patience);
  TrainingHistory history;
  std::vector<Mat<float>> best = params.snapshot();
  std::mt19937_64 rng(config.seed);
  std::mt19937_64 dropout_rng(config.seed ^ 0x5bd1e995u);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord record;
    record.epoch = epoch;
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size() - start);
      params.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t off = 0; off < n; off += static_cast<std::size_t>(config.micro_batch)) {
        const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(config.micro_batch), n - off);
        Mat<float> x(static_cast<Eigen::Index>(m), train.inputs.cols());
        Mat<float> y(static_cast<Eigen::Index>(m), train.targets.cols());
        for (std::size_t r = 0; r < m; ++r) {
          x.row(static_cast<Eigen::Index>(r)) = train.inputs.row(order[start + off + r]);
          y.row(static_cast<Eigen::Index>(r)) = train.targets.row(order[start + off + r]);
        }
        nn::Graph<float> g(nn::Mode::kTraining, dropout_rng());
        auto pred = model.forward(g, x);
        auto loss = nn::mse_loss(g, pred, y);
        // Weight each slice by its share so the summed gradient is the
        // gradient of the whole batch's mean loss.
        const float share = static_cast<float>(m) / static_cast<float>(n);
        auto scaled = nn::weighted_sum(g, loss, Mat<float>(Mat<float>::Constant(1, 1, share)));
        batch_loss += static_cast<double>(scaled->value(0, 0));
        g.backward(scaled);
      }
      if (!std::isfinite(batch_loss)) {
        history.stopped_epoch = epoch;
        throw DivergenceError("training loss became non-finite at step " + std::to_string(step) +
                                  " (epoch " + std::to_string(epoch) + ")",
                              history);
      }
      const double lr = learning_rate_at(step, schedule);
      if (batches == 0) record.lr_first = lr;
      record.lr_last = lr;
      history.lr_trace.push_back(lr);
      try {
        optimizer.step(lr, config.weight_decay);
      } catch (const NumericError& e) {
        ++record.skipped_steps;
        if (log) *log << "step " << step << " skipped: " << e.what() << '\n';
      }
      ++step;
      loss_sum += batch_loss;
      ++batches;
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    record.train_loss = loss_sum / batches;
    record.dev_mse = evaluate_mse(model, dev);
    if (config.eval_train_mse) record.train_mse = evaluate_mse(model, train);
    history.epochs.push_back(record);
    if (stopper.update(record.dev_mse)) best = params.snapshot();
    if (log) {
      *log << "epoch " << epoch << " train_loss " << record.train_loss;
      if (record.train_mse) *log << " train_mse " << *record.train_mse;
      *log << " dev_mse " << record.dev_mse << " lr " << record.lr_last << " (" << record.seconds << " s)"
           << std::endl;
    }
    history.stopped_epoch = epoch;
    if (stopper.stop()) break;
  }
  params.restore(best);
  history.best_epoch = stopper.best_epoch();
  history.best_dev_mse = stopper.best_score();
  return history;
}

}  // namespace uts::training
