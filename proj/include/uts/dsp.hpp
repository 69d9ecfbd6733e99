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

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "uts/audio.hpp"
#include "uts/types.hpp"

namespace uts::dsp {

// ---------------------------------------------------------------------------
// Ultrasound frame preprocessing

// Catmull-Rom (a = -0.5) cubic interpolation along the echo-sample axis
// only, with half-pixel-centre coordinate mapping and clamped edges. Rows
// (scanlines) pass through untouched.
Matrix resize_bicubic(const Matrix& frame, int out_cols = kResizedSamplesPerLine);

// Cubic convolution kernel used by resize_bicubic.
double cubic_kernel(double x, double a = -0.5);

// x -> x / 127.5 - 1.
Matrix normalize_pixels(const ByteMatrix& frame);

// resize_bicubic(normalize_pixels(raw)): raw 64 x 842 bytes -> 64 x 128 in
// [-1, 1]. Values are clamped to [-1, 1] after interpolation because the
// Catmull-Rom kernel has negative lobes that overshoot near sharp edges.
Matrix preprocess_frame(const ByteMatrix& raw);

// ---------------------------------------------------------------------------
// Mel analysis

struct MelConfig {
  int n_fft = 0;  // 0 selects fft_size_for(sample_rate)
  int n_mels = kMelBins;
  double fmin = 0.0;
  std::optional<double> fmax;  // defaults to sample_rate / 2
  double floor = 1e-5;
};

// FFT size used for a given sample rate: 1024 at 22.05 kHz, scaled to the
// next power of two for other rates so the window spans ~46 ms.
int fft_size_for(double sample_rate);

// hop = round(sample_rate / fps): one analysis frame per ultrasound frame.
int hop_for(double sample_rate, double fps);

// Number of whole hops in a clip of n_samples.
int frame_count(std::size_t n_samples, int hop);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters on the HTK mel scale with area normalisation (each
// triangle scaled by 2 / bandwidth in Hz), n_mels x (n_fft/2 + 1).
Matrix mel_filterbank(int n_fft, double sample_rate, int n_mels, double fmin, double fmax);

// Centre frequency (Hz) of each filter in mel_filterbank.
std::vector<double> mel_center_frequencies(double sample_rate, int n_mels, double fmin,
                                           double fmax);

struct MelStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;
};

struct MelSpectrogram {
  Matrix values;  // T x n_mels natural-log magnitudes
  bool normalized = false;
  std::optional<MelStats> stats;
  int hop = 0;
  double sample_rate = 0.0;

  int frames() const { return static_cast<int>(values.rows()); }
  int bins() const { return static_cast<int>(values.cols()); }
};

using ComplexMatrix =
    Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Periodic Hann window.
std::vector<double> hann_window(int n);

// Frame i is centred on sample i*hop + hop/2, i.e. the middle of the i-th
// ultrasound frame interval; samples outside the signal read as zero.
// Result is n_frames x (n_fft/2 + 1).
ComplexMatrix stft(std::span<const double> samples, int n_fft, int hop, int n_frames);

// Weighted overlap-add inverse of stft() with window-square normalisation.
std::vector<double> istft(const ComplexMatrix& spectrum, int n_fft, int hop, std::size_t length);

// Exactly n_frames log-mel frames at hop = round(sample_rate / fps).
MelSpectrogram extract_mel(const AudioClip& audio, double fps, int n_frames,
                           const MelConfig& config = {});

// Log-mel from a linear magnitude spectrogram (T x (n_fft/2+1)).
Matrix log_mel_from_magnitude(const Matrix& magnitude, const Matrix& filterbank, double floor);

// Per-bin statistics over the stacked frames of `mels`. Bins whose spread
// falls below min_std (floored or nearly floored bins) get min_std, in nats.
MelStats compute_mel_stats(std::span<const MelSpectrogram> mels, double min_std = 1.0);

MelSpectrogram standardize_mel(const MelSpectrogram& mel, const MelStats& stats);
MelSpectrogram destandardize_mel(const MelSpectrogram& mel);

// ---------------------------------------------------------------------------
// Mel cepstra and distortion

// Orthonormal DCT-II of each log-mel row, keeping the first `order`
// coefficients.
Matrix cepstra_from_log_mel(const Matrix& log_mel, int order = kCepstralOrder);

// c0..c12 per frame using the extract_mel framing at `fps`.
Matrix mel_cepstra(const AudioClip& audio, double fps = kUltrasoundFps,
                   const MelConfig& config = {});

// Mean over positionally paired frames of
//   (10 / ln 10) * sqrt(2 * sum_{d=1}^{12} (a_d - b_d)^2),
// truncating to the shorter sequence. c0 is excluded.
double mcd_from_cepstra(const Matrix& reference, const Matrix& synthesized);

double mcd(const AudioClip& reference, const AudioClip& synthesized,
           double fps = kUltrasoundFps);

// ---------------------------------------------------------------------------
// Listening-test stimuli

// Adds N(0, level^2) noise and clips to [-1, 1].
AudioClip add_white_noise_anchor(const AudioClip& audio, double level, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Persistence

// 16-byte little-endian header: "UTSM", uint32 frames, uint32 bins,
// uint32 flags (bit 0 = standardized), then frames*bins float32 values.
// Standardized files carry their statistics after the payload as
// bins float64 means followed by bins float64 deviations.
void write_mel(const std::filesystem::path& path, const MelSpectrogram& mel);
MelSpectrogram read_mel(const std::filesystem::path& path);

// Heat-map rendering (time left to right, low bins at the bottom).
void write_mel_png(const std::filesystem::path& path, const MelSpectrogram& mel,
                   int pixels_per_frame = 4, int pixels_per_bin = 3);

}  // namespace uts::dsp
