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
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "uts/dsp.hpp"
#include "uts/nn/graph.hpp"
#include "uts/types.hpp"

namespace uts::models {

using nn::Mat;

enum class ModelKind { kBaselineCnn, kConformerBase, kConformerBilstm };

// "baseline", "conformer", "conformer-bilstm".
std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ConformerBlockConfig {
  int encoder_dim = 256;
  int attention_heads = 32;
  int conv_kernel = 31;
  int ff_expansion = 3;
  double dropout = 0.1;

  int head_dim() const { return encoder_dim / attention_heads; }
  void validate() const;
};

struct CnnConfig {
  std::vector<int> channels{30, 60, 90};
  int kernel = 13;
  int stride = 2;
  int pool = 2;
  int dense_units = 970;
  double dropout = 0.2;

  void validate() const;
};

struct ModelSpec {
  ModelKind kind = ModelKind::kConformerBase;
  ConformerBlockConfig block;
  int bilstm_hidden = 256;  // units per direction
  int bilstm_layers = 2;
  int post_dim = 256;       // per-step width before flattening
  CnnConfig cnn;
  int scanlines = kScanlines;
  int samples = kResizedSamplesPerLine;
  int output_dim = kMelBins;

  bool is_conformer() const { return kind != ModelKind::kBaselineCnn; }
  int frame_size() const { return scanlines * samples; }
  // Checks internal consistency; any geometry is accepted.
  void validate() const;
  // True when the input is 64 x 128 and the output 80 bins.
  bool has_standard_geometry() const;
};

ModelSpec standard_spec(ModelKind kind);

// Closed-form count of trainable scalars.
std::int64_t count_parameters(const ModelSpec& spec);

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

// (T * 64) x 128 beam-line sequence from T preprocessed 64 x 128 frames:
// frame-major, scanline-minor. Partition i (rows 64i .. 64i+63) is frame i.
Matrix frames_to_sequence(const std::vector<Matrix>& frames);
std::vector<Matrix> sequence_to_frames(const Matrix& sequence, int partition_length = kScanlines);

// Flattens preprocessed frames into one row each (row-major 64 x 128).
template <typename T>
Mat<T> frames_to_rows(const std::vector<Matrix>& frames);

// One of the three frame -> mel architectures. Input rows are flattened
// frames (frame_size wide); output rows are output_dim wide.
template <typename T>
class Model {
 public:
  Model(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }

  nn::Var<T> forward(nn::Graph<T>& g, const Mat<T>& frames);

  // Inference-mode forward in chunks of `batch` rows.
  Mat<T> predict(const Mat<T>& frames, int batch = 64);

 private:
  struct Bound;  // parameters bound to one graph

  nn::Var<T> conformer_block(nn::Graph<T>& g, Bound& p, nn::Var<T> x);
  nn::Var<T> conformer_forward(nn::Graph<T>& g, Bound& p, nn::Var<T> x);
  nn::Var<T> cnn_forward(nn::Graph<T>& g, Bound& p, nn::Var<T> x);

  void build_conformer();
  void build_cnn();
  void initialize(std::uint64_t seed);

  ModelSpec spec_;
  nn::ParameterSet<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;

// Copies values between precisions (same spec).
template <typename To, typename From>
void copy_parameters(const Model<From>& from, Model<To>& to);

// Checkpoint directory: weights.bin (named float32 tensors) plus
// manifest.json (spec, parameter count, optional mel statistics).
struct Checkpoint {
  ModelSpec spec;
  std::unique_ptr<Model<float>> model;
  std::optional<dsp::MelStats> mel_stats;
  std::string speaker;
};

void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model,
                     const std::optional<dsp::MelStats>& stats, const std::string& speaker = "");
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Weight archive: "UTSW", uint32 count, then per tensor uint32 name length,
// name bytes, uint32 rows, uint32 cols, rows*cols float32 little-endian.
void write_weights(const std::filesystem::path& path, const nn::ParameterSet<float>& params);
void read_weights(const std::filesystem::path& path, nn::ParameterSet<float>& params);

}  // namespace uts::models
