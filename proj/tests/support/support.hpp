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
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "uts/audio.hpp"
#include "uts/corpus.hpp"
#include "uts/dsp.hpp"
#include "uts/models.hpp"
#include "uts/training.hpp"
#include "uts/types.hpp"

namespace uts::testing {

// Unique directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0);

// ---------------------------------------------------------------------------
// Independent oracles

// Nested-loop mean of squared differences.
// Harmonic source with a wandering pitch through three formant bumps, plus a
// little noise; peak-normalised.
AudioClip speech_like_audio(std::uint64_t seed, double seconds, double sample_rate = 22050.0);

double mse_double_loop(const Matrix& a, const Matrix& b);

// U of `a` by counting pairs (1 per a_i > b_j, 1/2 per tie).
double u_by_pair_counting(const std::vector<double>& a, const std::vector<double>& b);

// Two-sided exact p by enumerating every way of choosing |a| of the pooled
// observations as the first sample. Pooled values must be distinct.
double u_exact_p_by_enumeration(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// Gradient checks

// Small geometry of each architecture for finite-difference checks.
models::ModelSpec toy_spec(models::ModelKind kind);

struct GradCheckResult {
  double worst_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

// Central differences (step eps) of the MSE loss in double precision versus
// backprop, over every parameter entry. Relative error is
// |num - an| / max(|num|, |an|, 1e-6).
GradCheckResult gradient_check(const models::ModelSpec& spec, std::uint64_t seed, double eps = 1e-4);

// ---------------------------------------------------------------------------
// Overfit witness

// Seeded 5-utterance synthetic corpus (seed 7, 40..80 frames), targets
// standardized with its own statistics.
// Seeded synthetic utterances of 40-80 frames as one frame-level dataset,
// with the recordings and standardized target mels kept per utterance.
struct WitnessCorpus {
  training::FrameDataset data;
  std::vector<corpus::UltrasoundRecording> recordings;
  std::vector<dsp::MelSpectrogram> mels;
};

WitnessCorpus witness_corpus(std::uint64_t seed = 7, int utterances = 5);

struct WitnessConfig {
  int batch_size = 4;
  double lr_initial = 1e-3;
  double lr_min = 1e-4;
  int epochs = 20;
  std::uint64_t seed = 3;
};

struct WitnessResult {
  double train_mse = 0.0;  // inference mode, best weights
  double seconds = 0.0;
  double mean_epoch_seconds = 0.0;
  int epochs = 0;
  std::shared_ptr<models::Model<float>> model;
};

// Trains on the witness set and monitors the same set for model selection.
WitnessResult run_witness(models::ModelKind kind, const training::FrameDataset& data, const WitnessConfig& config,
                          std::ostream* log = nullptr);

// Mean optimisation seconds per epoch with the standard trainer settings.
double epoch_seconds(models::ModelKind kind, const training::FrameDataset& data, int epochs = 2);

}  // namespace uts::testing
