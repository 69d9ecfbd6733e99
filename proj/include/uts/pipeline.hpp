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
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "uts/corpus.hpp"
#include "uts/dsp.hpp"
#include "uts/evaluation.hpp"
#include "uts/models.hpp"
#include "uts/mushra.hpp"
#include "uts/training.hpp"
#include "uts/vocoder.hpp"

// File-level glue between the modules. Layouts:
//   preprocessed   <root>/<speaker>/{<utt>.frames, <utt>.mel, <utt>.wav,
//                  split.jsonl, speaker.json}
//   system output  <root>/<speaker>/{<utt>.mel (standardized), <utt>.wav, <utt>.png}
namespace uts::pipeline {

struct PreparedUtterance {
  std::string speaker;
  std::string utterance;
  std::vector<Matrix> frames;  // 64 x 128 in [-1, 1]
  dsp::MelSpectrogram mel;     // log-mel, one frame per ultrasound frame
  AudioClip audio;
};

PreparedUtterance prepare_utterance(const corpus::UltrasoundRecording& recording);

struct PreprocessSummary {
  std::string speaker;
  int utterances = 0;
  int frames = 0;
  corpus::CorpusSplit split;
  std::vector<std::string> warnings;
};

// Every subdirectory of data_dir holding *.ult recordings is one speaker.
std::vector<PreprocessSummary> preprocess_corpus(const std::filesystem::path& data_dir,
                                                 const std::filesystem::path& out_dir, std::uint64_t seed,
                                                 std::ostream* log = nullptr);

PreparedUtterance load_prepared(const std::filesystem::path& root, const std::string& speaker,
                                const std::string& utterance);

// Speaker directories under a preprocessed or system-output root.
std::vector<std::string> list_speakers(const std::filesystem::path& root);

corpus::CorpusSplit load_split(const std::filesystem::path& root, const std::string& speaker);
std::vector<std::string> split_ids(const corpus::CorpusSplit& split, const std::string& name);

// Stacks frames and standardized mel targets of the listed utterances.
training::FrameDataset make_dataset(std::span<const PreparedUtterance> utterances,
                                    const dsp::MelStats& stats);

struct TrainOptions {
  models::ModelKind kind = models::ModelKind::kConformerBase;
  training::TrainingSchedule schedule;
  training::TrainerConfig trainer;
  std::uint64_t seed = 0;  // model initialisation and batch order
  // Monitor early stopping on the training set instead of the dev split.
  bool dev_is_train = false;
};

struct TrainResult {
  training::TrainingHistory history;
  std::int64_t parameters = 0;
  int train_frames = 0;
  int dev_frames = 0;
  double train_mse = 0.0;  // best weights, inference mode
};

// Trains on the speaker's train split with mel statistics from that split
// and writes the checkpoint and history.jsonl into out_dir.
TrainResult train_speaker(const std::filesystem::path& data_root, const std::string& speaker,
                          const TrainOptions& options, const std::filesystem::path& out_dir,
                          std::ostream* log = nullptr);

// Standardized predicted mel for preprocessed frames.
dsp::MelSpectrogram predict_mel(models::Checkpoint& checkpoint, const std::vector<Matrix>& frames,
                                int hop, double sample_rate);

struct SynthesisResult {
  dsp::MelSpectrogram mel;  // standardized
  AudioClip audio;
};

SynthesisResult synthesize_utterance(models::Checkpoint& checkpoint, const PreparedUtterance& utterance,
                                     const vocoder::VocoderConfig& config);

// Writes <out>/<speaker>/<utt>.{mel,wav,png}.
void write_system_output(const std::filesystem::path& out_root, const std::string& speaker,
                         const std::string& utterance, const SynthesisResult& result);

struct SystemDir {
  std::string name;
  std::filesystem::path root;
};

// Loads every system's outputs and the matching references. A reference
// root may be a preprocessed corpus (raw log-mels, standardized here with
// each speaker's statistics from the first system) or another system
// output directory.
evaluation::EvaluationReport evaluate_systems(std::span<const SystemDir> systems,
                                              const std::filesystem::path& reference_root,
                                              const std::string& baseline);

struct ListeningTestOptions {
  int per_speaker = 5;
  double noise_level = 0.0005;
  std::uint64_t seed = 0;
};

// Picks `per_speaker` utterances per speaker (seeded, among those every
// system produced), copies stimuli under out_dir/stimuli, derives the
// white-noise anchor from the reference and writes out_dir/manifest.json.
mushra::Manifest prepare_listening_test(std::span<const SystemDir> systems, const std::filesystem::path& data_root,
                                        const ListeningTestOptions& options, const std::filesystem::path& out_dir);

}  // namespace uts::pipeline
