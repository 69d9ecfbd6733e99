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

#include <filesystem>
#include <span>
#include <vector>

namespace uts {

// Mono waveform with samples on the [-1, 1] full-scale range.
struct AudioClip {
  std::vector<double> samples;
  double sample_rate = 0.0;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
  bool empty() const { return samples.empty(); }
};

// Throws ValidationError unless sample_rate > 0 and max |sample| <= 1.
void validate(const AudioClip& clip);

double peak(std::span<const double> samples);
double rms(std::span<const double> samples);

// Scales so that the peak magnitude is exactly 1 (no-op on silence).
void peak_normalize(AudioClip& clip);

// Scales down only when the peak exceeds 1, then hard-clips residual
// round-off so every sample lies in [-1, 1].
void limit_to_unit_range(AudioClip& clip);

// RIFF/WAVE linear PCM. Reading accepts 8/16/24/32-bit integer and 32-bit
// float payloads and downmixes multichannel files by averaging. Writing
// produces 16-bit mono PCM.
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

}  // namespace uts
