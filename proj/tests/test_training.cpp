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

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "support/support.hpp"
#include "uts/nn/ops.hpp"
#include "uts/training.hpp"

using namespace uts;
using namespace uts::training;
using models::ModelKind;

namespace {

FrameDataset toy_dataset(const models::ModelSpec& spec, int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FrameDataset d;
  d.inputs = testing::random_matrix(rng, frames, spec.frame_size()).cast<float>();
  d.targets = testing::random_matrix(rng, frames, spec.output_dim).cast<float>();
  return d;
}

}  // namespace

TEST_CASE("scheduler reference values") {
  const TrainingSchedule s;
  CHECK(learning_rate_at(0, s) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(learning_rate_at(50, s) == doctest::Approx(5.5e-5).epsilon(1e-12));
  CHECK(learning_rate_at(100, s) == doctest::Approx(9e-5).epsilon(1e-12));
  // Second cycle is five times longer and restarts at 0.81 of the initial rate.
  CHECK(learning_rate_at(350, s) == doctest::Approx(1e-5 + 0.5 * (9e-5 - 1e-5)).epsilon(1e-12));
  CHECK(learning_rate_at(600, s) == doctest::Approx(8.1e-5).epsilon(1e-12));
}

TEST_CASE("scheduler stays within [lr_min, lr_initial]") {
  const TrainingSchedule s;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::int64_t> step(0, 100000);
  for (int i = 0; i < 10000; ++i) {
    const double lr = learning_rate_at(step(rng), s);
    CHECK(lr >= 1e-5 - 1e-15);
    CHECK(lr <= 1e-4 + 1e-15);
  }
  for (std::int64_t k = 1; k < 100; ++k) CHECK(learning_rate_at(k, s) < learning_rate_at(k - 1, s));
}

TEST_CASE("scheduler rejects bad configurations") {
  TrainingSchedule s;
  s.lr_min = 2e-4;
  CHECK_THROWS(s.validate());
  s = {};
  s.first_cycle_steps = 0;
  CHECK_THROWS(s.validate());
  CHECK_THROWS(learning_rate_at(-1, TrainingSchedule{}));
}

TEST_CASE("AdamW first step and decoupled weight decay") {
  nn::ParameterSet<double> params;
  auto& p = params.add("p", 1, 1);
  p.value(0, 0) = 1.0;
  AdamW<double> opt(params);
  p.grad(0, 0) = 1.0;
  opt.step(0.1, 0.0);
  CHECK(p.value(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(opt.steps() == 1);

  nn::ParameterSet<double> q;
  auto& w = q.add("w", 1, 1);
  w.value(0, 0) = 2.0;
  AdamW<double> decay(q);
  w.grad(0, 0) = 0.0;
  decay.step(0.1, 0.01);
  CHECK(w.value(0, 0) == doctest::Approx(2.0 * (1 - 0.1 * 0.01)).epsilon(1e-12));
}

TEST_CASE("AdamW refuses non-finite gradients without side effects") {
  nn::ParameterSet<double> params;
  auto& p = params.add("p", 1, 2);
  p.value << 1.0, 2.0;
  AdamW<double> opt(params);
  p.grad << 0.5, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(0.1, 0.01), NumericError);
  CHECK(p.value(0, 0) == 1.0);
  CHECK(opt.steps() == 0);
}

TEST_CASE("early stopping with patience 3") {
  EarlyStopper s(3);
  const std::vector<double> scores{1.0, 0.9, 0.95, 0.96, 0.97, 0.5};
  std::vector<bool> improved;
  for (double v : scores) {
    improved.push_back(s.update(v));
    if (s.stop()) break;
  }
  CHECK(improved == std::vector<bool>{true, true, false, false, false});
  CHECK(s.best_epoch() == 2);
  CHECK(s.best_score() == 0.9);
  CHECK(s.epochs() == 5);
  CHECK_THROWS(EarlyStopper(0));
}

TEST_CASE("fit is deterministic under a fixed seed and restores the best epoch") {
  const auto spec = testing::toy_spec(ModelKind::kConformerBase);
  const auto train = toy_dataset(spec, 24, 1), dev = toy_dataset(spec, 6, 2);
  TrainerConfig cfg;
  cfg.batch_size = 8;
  cfg.micro_batch = 4;
  cfg.max_epochs = 4;
  cfg.patience = 4;
  cfg.seed = 5;
  TrainingSchedule sched;
  sched.lr_initial = 1e-2;
  sched.lr_min = 1e-3;
  models::Model<float> a(spec, 1), b(spec, 1);
  const auto ha = fit(a, train, dev, sched, cfg);
  const auto hb = fit(b, train, dev, sched, cfg);
  REQUIRE(ha.epochs.size() == 4);
  CHECK(ha.lr_trace.size() == 12);
  CHECK(ha.lr_trace == hb.lr_trace);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ha.epochs[i].dev_mse == hb.epochs[i].dev_mse);
    CHECK(ha.epochs[i].train_loss == hb.epochs[i].train_loss);
  }
  double best = ha.epochs[0].dev_mse;
  for (const auto& e : ha.epochs) best = std::min(best, e.dev_mse);
  CHECK(ha.best_dev_mse == best);
  CHECK(evaluate_mse(a, dev) == doctest::Approx(ha.best_dev_mse).epsilon(1e-6));
  CHECK(ha.lr_trace.front() == doctest::Approx(1e-2));
}

TEST_CASE("micro-batch size only changes round-off without dropout") {
  auto spec = testing::toy_spec(ModelKind::kConformerBase);
  spec.block.dropout = 0.0;
  const auto train = toy_dataset(spec, 16, 3), dev = toy_dataset(spec, 4, 4);
  TrainerConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 2;
  cfg.patience = 2;
  TrainingSchedule sched;
  sched.lr_initial = 1e-2;
  sched.lr_min = 1e-3;
  models::Model<float> a(spec, 2), b(spec, 2);
  cfg.micro_batch = 8;
  fit(a, train, dev, sched, cfg);
  cfg.micro_batch = 3;
  fit(b, train, dev, sched, cfg);
  CHECK(evaluate_mse(a, dev) == doctest::Approx(evaluate_mse(b, dev)).epsilon(1e-4));
}

TEST_CASE("non-finite targets abort with a divergence error carrying the history") {
  const auto spec = testing::toy_spec(ModelKind::kBaselineCnn);
  auto train = toy_dataset(spec, 8, 5);
  const auto dev = toy_dataset(spec, 4, 6);
  train.targets(3, 1) = std::numeric_limits<float>::infinity();
  TrainerConfig cfg;
  cfg.batch_size = 8;
  models::Model<float> m(spec, 3);
  try {
    fit(m, train, dev, TrainingSchedule{}, cfg);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.history().stopped_epoch == 1);
  }
}

TEST_CASE("history serialises one record per epoch plus a summary") {
  testing::TempDir dir;
  TrainingHistory h;
  h.epochs.resize(3);
  h.best_epoch = 2;
  h.write_jsonl(dir / "h.jsonl");
  std::ifstream in(dir / "h.jsonl");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 4);
}

TEST_CASE("early-stopping reference sequence") {
  EarlyStopper s(3);
  int stopped = 0;
  for (double v : {1.0, 0.9, 0.91, 0.92, 0.93}) {
    s.update(v);
    if (s.stop()) {
      stopped = s.epochs();
      break;
    }
  }
  CHECK(stopped == 5);
  CHECK(s.best_epoch() == 2);
}

TEST_CASE("zero gradients without decay leave parameters unchanged") {
  nn::ParameterSet<double> params;
  auto& p = params.add("p", 2, 3);
  p.value.setConstant(0.7);
  p.zero_grad();
  AdamW<double> opt(params);
  opt.step(0.1, 0.0);
  CHECK((p.value.array() == 0.7).all());
}

TEST_CASE("learning rate rises only at cycle boundaries") {
  const TrainingSchedule s;
  std::int64_t boundary = 100, length = 500;
  for (std::int64_t step = 1; step <= 20000; ++step) {
    const bool rose = learning_rate_at(step, s) > learning_rate_at(step - 1, s);
    CHECK(rose == (step == boundary));
    if (step == boundary) {
      boundary += length;
      length *= 5;
    }
  }
}

TEST_CASE("a small step on one example lowers its loss") {
  for (auto kind : {ModelKind::kBaselineCnn, ModelKind::kConformerBase, ModelKind::kConformerBilstm}) {
    auto spec = testing::toy_spec(kind);
    spec.block.dropout = 0.0;
    spec.cnn.dropout = 0.0;
    models::Model<double> m(spec, 13);
    std::mt19937_64 rng(13);
    const Mat<double> x = testing::random_matrix(rng, 1, spec.frame_size());
    const Mat<double> y = testing::random_matrix(rng, 1, spec.output_dim);
    const auto loss = [&] {
      nn::Graph<double> g;
      return nn::mse_loss(g, m.forward(g, x), y)->value(0, 0);
    };
    const double before = loss();
    m.parameters().zero_grad();
    {
      nn::Graph<double> g(nn::Mode::kGradCheck);
      g.backward(nn::mse_loss(g, m.forward(g, x), y));
    }
    AdamW<double> opt(m.parameters());
    opt.step(1e-6, 0.0);
    CHECK(loss() < before);
  }
}
