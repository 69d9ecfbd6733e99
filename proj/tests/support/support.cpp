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

#include "support.hpp"

#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numbers>

#include "uts/corpus.hpp"
#include "uts/dsp.hpp"
#include "uts/error.hpp"
#include "uts/nn/ops.hpp"

namespace uts::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  std::string tmpl = (fs::temp_directory_path() / "uts-test-XXXXXX").string();
  if (!::mkdtemp(tmpl.data())) throw Error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

AudioClip speech_like_audio(std::uint64_t seed, double seconds, double sample_rate) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::uniform_real_distribution<double> jitter(0.8, 1.2);
  const double base = 120.0 * jitter(rng), vibrato = 1.3 * jitter(rng);
  const std::array<double, 3> formant{700.0 * jitter(rng), 1500.0 * jitter(rng), 2600.0 * jitter(rng)};
  const std::array<double, 3> width{300.0, 400.0, 500.0}, gain{1.0, 0.6, 0.3};
  AudioClip a;
  a.sample_rate = sample_rate;
  const auto n = static_cast<std::size_t>(seconds * sample_rate);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double f0 = base + 40.0 * std::sin(2 * std::numbers::pi * vibrato * t);
    phase += 2 * std::numbers::pi * f0 / sample_rate;
    double s = 0.0;
    for (int h = 1; h * f0 < 8000.0; ++h) {
      double env = 0.02;
      for (int k = 0; k < 3; ++k) env += gain[k] * std::exp(-std::pow((h * f0 - formant[k]) / width[k], 2));
      s += env * std::sin(h * phase);
    }
    a.samples.push_back(s + noise(rng));
  }
  peak_normalize(a);
  return a;
}

double mse_double_loop(const Matrix& a, const Matrix& b) {
  double sum = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const double d = a(r, c) - b(r, c);
      sum += d * d;
    }
  }
  return sum / static_cast<double>(a.rows() * a.cols());
}

double u_by_pair_counting(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a) {
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  }
  return u;
}

double u_exact_p_by_enumeration(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size(), n1 = a.size();
  const double observed = u_by_pair_counting(a, b);
  // Walk all n1-subsets as bit masks.
  double total = 0.0, lower = 0.0, upper = 0.0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != n1) continue;
    std::vector<double> x, y;
    for (std::size_t i = 0; i < n; ++i) ((mask >> i) & 1u ? x : y).push_back(pooled[i]);
    const double u = u_by_pair_counting(x, y);
    total += 1.0;
    if (u <= observed + 1e-9) lower += 1.0;
    if (u >= observed - 1e-9) upper += 1.0;
  }
  return std::min(1.0, 2.0 * std::min(lower, upper) / total);
}

models::ModelSpec toy_spec(models::ModelKind kind) {
  models::ModelSpec s;
  s.kind = kind;
  s.scanlines = kind == models::ModelKind::kBaselineCnn ? 8 : 6;
  s.samples = 5;
  s.output_dim = 3;
  s.block.encoder_dim = 8;
  s.block.attention_heads = 2;
  s.block.conv_kernel = 3;
  s.block.ff_expansion = 3;
  s.bilstm_hidden = 4;
  s.post_dim = 4;
  s.cnn.channels = {2, 3};
  s.cnn.kernel = 3;
  s.cnn.dense_units = 5;
  return s;
}

GradCheckResult gradient_check(const models::ModelSpec& spec, std::uint64_t seed, double eps) {
  using nn::Graph;
  using nn::Mode;
  models::Model<double> model(spec, seed);
  std::mt19937_64 rng(seed + 1);
  const Matrix x = random_matrix(rng, 3, spec.frame_size());
  const Matrix y = random_matrix(rng, 3, spec.output_dim);
  // Move away from the symmetric initialisation (unit gammas, zero biases).
  std::normal_distribution<double> nd;
  for (auto& p : model.parameters()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += 0.1 * nd(rng);
  }
  const auto loss = [&] {
    Graph<double> g(Mode::kInference);
    return nn::mse_loss(g, model.forward(g, x), y)->value(0, 0);
  };
  model.parameters().zero_grad();
  {
    Graph<double> g(Mode::kGradCheck);
    g.backward(nn::mse_loss(g, model.forward(g, x), y));
  }
  GradCheckResult out;
  for (auto& p : model.parameters()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double old = p->value.data()[i];
      p->value.data()[i] = old + eps;
      const double plus = loss();
      p->value.data()[i] = old - eps;
      const double minus = loss();
      p->value.data()[i] = old;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double analytic = p->grad.data()[i];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      ++out.checked;
      if (rel > out.worst_relative_error) {
        out.worst_relative_error = rel;
        out.worst_parameter = p->name;
      }
    }
  }
  return out;
}

WitnessCorpus witness_corpus(std::uint64_t seed, int utterances) {
  auto recs = corpus::generate_synthetic_corpus(seed, utterances, {40, 80});
  std::vector<dsp::MelSpectrogram> mels;
  std::vector<std::vector<Matrix>> frames;
  Eigen::Index total = 0;
  for (const auto& r : recs) {
    mels.push_back(dsp::extract_mel(r.audio, r.fps, r.frame_count()));
    std::vector<Matrix> f;
    for (int t = 0; t < r.frame_count(); ++t) f.push_back(dsp::preprocess_frame(r.frame(t)));
    total += r.frame_count();
    frames.push_back(std::move(f));
  }
  const auto stats = dsp::compute_mel_stats(mels);
  WitnessCorpus out;
  auto& ds = out.data;
  ds.inputs.resize(total, kScanlines * kResizedSamplesPerLine);
  ds.targets.resize(total, kMelBins);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(frames[i].size());
    ds.inputs.middleRows(row, n) = models::frames_to_rows<float>(frames[i]);
    out.mels.push_back(dsp::standardize_mel(mels[i], stats));
    ds.targets.middleRows(row, n) = out.mels.back().values.cast<float>();
    row += n;
  }
  out.recordings = std::move(recs);
  return out;
}

WitnessResult run_witness(models::ModelKind kind, const training::FrameDataset& data, const WitnessConfig& config,
                          std::ostream* log) {
  auto owned = std::make_shared<models::Model<float>>(models::standard_spec(kind), config.seed);
  auto& model = *owned;
  training::TrainingSchedule schedule;
  schedule.lr_initial = config.lr_initial;
  schedule.lr_min = config.lr_min;
  training::TrainerConfig trainer;
  trainer.batch_size = config.batch_size;
  trainer.micro_batch = std::min(trainer.micro_batch, config.batch_size);
  trainer.max_epochs = config.epochs;
  trainer.patience = config.epochs;
  trainer.seed = config.seed;
  const auto start = std::chrono::steady_clock::now();
  const auto history = training::fit(model, data, data, schedule, trainer, log);
  WitnessResult out;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.train_mse = training::evaluate_mse(model, data);
  out.epochs = static_cast<int>(history.epochs.size());
  for (const auto& e : history.epochs) out.mean_epoch_seconds += e.seconds;
  out.mean_epoch_seconds /= std::max(1, out.epochs);
  out.model = std::move(owned);
  return out;
}

double epoch_seconds(models::ModelKind kind, const training::FrameDataset& data, int epochs) {
  models::Model<float> model(models::standard_spec(kind), 1);
  training::TrainerConfig trainer;
  trainer.max_epochs = epochs;
  trainer.patience = epochs;
  const auto history = training::fit(model, data, data, training::TrainingSchedule{}, trainer);
  double total = 0.0;
  for (const auto& e : history.epochs) total += e.seconds;
  return total / static_cast<double>(history.epochs.size());
}

}  // namespace uts::testing
