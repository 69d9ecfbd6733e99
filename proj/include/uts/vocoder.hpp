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
#include <string>

#include "uts/audio.hpp"
#include "uts/dsp.hpp"

namespace uts::vocoder {

enum class Backend { kExternal, kFallback };

Backend parse_backend(const std::string& name);
std::string to_string(Backend backend);

struct VocoderConfig {
  Backend backend = Backend::kFallback;
  // External program, invoked as `<command> --in <mel.bin> --out <out.wav>`.
  std::string command;
  int hop = 256;  // native hop of the vocoder
  double sample_rate = 22050.0;
  int griffin_lim_iterations = 60;
  int filterbank_iterations = 100;
  std::uint64_t seed = 0;
};

// Linear interpolation along time from the mel's own hop to target_hop;
// bins untouched. T' = round(T * hop / target_hop).
dsp::MelSpectrogram resample_mel_for_vocoder(const dsp::MelSpectrogram& mel, int target_hop,
                                             double sample_rate);

// Non-negative least-squares estimate of a linear magnitude spectrogram
// (T x (n_fft/2+1)) whose filterbank projection matches `mel_magnitude`
// (T x n_mels), by multiplicative updates.
Matrix invert_mel_filterbank(const Matrix& mel_magnitude, const Matrix& filterbank, int iterations);

// Iterative phase reconstruction of a magnitude spectrogram using the
// dsp::stft framing. Initial phases are drawn from `seed`.
std::vector<double> griffin_lim(const Matrix& magnitude, int n_fft, int hop, std::size_t length,
                                int iterations, std::uint64_t seed);

// Log-mel (not standardized) -> waveform at mel.sample_rate (fallback) or
// config.sample_rate (external). Output samples lie in [-1, 1]; louder
// output is scaled down to a unit peak.
AudioClip synthesize(const dsp::MelSpectrogram& mel, const VocoderConfig& config);

}  // namespace uts::vocoder
