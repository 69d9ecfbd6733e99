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
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uts/audio.hpp"
#include "uts/types.hpp"

namespace uts::corpus {

struct UltrasoundRecording {
  std::string speaker_id;
  std::string utterance_id;
  int scanlines = kScanlines;
  int samples_per_line = kRawSamplesPerLine;
  double fps = kUltrasoundFps;
  // T * scanlines * samples_per_line bytes, frame-major then scanline-major.
  std::vector<std::uint8_t> frames;
  AudioClip audio;
  // Non-fatal findings from loading, e.g. audio/ultrasound duration mismatch.
  std::vector<std::string> warnings;

  int frame_count() const {
    return static_cast<int>(frames.size() / (static_cast<std::size_t>(scanlines) * samples_per_line));
  }
  ByteMatrix frame(int t) const;
};

struct UtteranceRef {
  std::string speaker;
  std::string utterance;
  auto operator<=>(const UtteranceRef&) const = default;
};

struct CorpusSplit {
  std::vector<UtteranceRef> train;
  std::vector<UtteranceRef> dev;
  std::vector<UtteranceRef> test;
};

// Utterances reserved for testing for every speaker: 005_xaud ... 014_xaud.
const std::set<std::string>& test_utterance_ids();

// Largest duration difference tolerated without an alignment warning.
inline constexpr double kAlignmentToleranceSeconds = 0.5;

// Reads <utt>.ult (raw uint8 scanlines), <utt>.param (key:value sidecar with
// fps, scanlines, samples_per_line and an optional offset in seconds of the
// first frame relative to the audio) and <utt>.wav. The longer of the two
// streams is truncated to their common duration.
UltrasoundRecording load_recording(const std::filesystem::path& ultrasound_path,
                                   const std::filesystem::path& audio_path,
                                   const std::filesystem::path& params_path);

// Writes the three files of a recording into `directory`.
void store_recording(const std::filesystem::path& directory, const UltrasoundRecording& recording);

// All recordings of one speaker directory (every *.ult with its siblings),
// ordered by utterance id.
std::vector<UltrasoundRecording> load_speaker(const std::filesystem::path& directory);

// Designated test ids go to test; the remainder is shuffled with `seed` and
// split 9:1 into train:dev with |dev| = max(1, round(n / 10)).
CorpusSplit split_corpus(std::span<const UltrasoundRecording> recordings, std::uint64_t seed);
CorpusSplit split_utterances(const std::string& speaker, std::vector<std::string> utterance_ids,
                             std::uint64_t seed);

// Line-delimited {"speaker", "utterance", "split"} records.
void write_split_manifest(const std::filesystem::path& path, const CorpusSplit& split);
CorpusSplit read_split_manifest(const std::filesystem::path& path);

struct SyntheticOptions {
  std::string speaker_id = "syn01";
  double sample_rate = 22050.0;
  double fps = kUltrasoundFps;
};

// Desk-scale stand-in for a recorded corpus. Frames carry three smooth
// "articulator" intensity fields in scanline bands; the audio of each frame
// is a sum of three sinusoids whose frequencies are affine functions of the
// band means, so the frame -> spectrum relation is deterministic.
std::vector<UltrasoundRecording> generate_synthetic_corpus(std::uint64_t seed, int n_utterances,
                                                           std::pair<int, int> frame_count_range,
                                                           const SyntheticOptions& options = {});

// Partial frequencies (Hz) of the synthetic audio for one raw frame.
std::vector<double> synthetic_partials(const ByteMatrix& frame);

// Utterance id for the i-th (1-based) recording of a synthetic corpus.
std::string synthetic_utterance_id(int index);

// Preprocessed frame stacks: "UTSF", uint32 frames, rows, cols, float32 data.
void write_frames(const std::filesystem::path& path, std::span<const Matrix> frames);
std::vector<Matrix> read_frames(const std::filesystem::path& path);

}  // namespace uts::corpus
