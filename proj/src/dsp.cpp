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

#include "uts/dsp.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <string>

#include "uts/error.hpp"
#include "uts/fft.hpp"

namespace uts::dsp {

namespace {

constexpr char kMelMagic[4] = {'U', 'T', 'S', 'M'};
constexpr std::uint32_t kFlagStandardized = 1u;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

template <typename F>
void put_le(std::ostream& out, F value) {
  unsigned char b[sizeof(F)];
  std::memcpy(b, &value, sizeof(F));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(F));
  out.write(reinterpret_cast<const char*>(b), sizeof(F));
}

template <typename F>
F get_le(const unsigned char* p) {
  unsigned char b[sizeof(F)];
  std::memcpy(b, p, sizeof(F));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(F));
  F value;
  std::memcpy(&value, b, sizeof(F));
  return value;
}

int resolve_fft_size(const MelConfig& config, double sample_rate) {
  return config.n_fft > 0 ? config.n_fft : fft_size_for(sample_rate);
}

void check_audio(const AudioClip& audio) {
  if (audio.samples.empty()) throw InsufficientAudioError("audio clip is empty");
  if (!(audio.sample_rate > 0)) throw ConfigurationError("audio sample rate must be positive");
}

}  // namespace

double cubic_kernel(double x, double a) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

Matrix resize_bicubic(const Matrix& frame, int out_cols) {
  const auto in_cols = static_cast<int>(frame.cols());
  if (in_cols < 4) throw ShapeError("bicubic resize needs at least 4 input columns");
  if (out_cols < 1) throw ShapeError("bicubic resize needs a positive output width");
  if (!frame.allFinite()) throw NumericInputError("non-finite value in ultrasound frame");

  const double scale = static_cast<double>(in_cols) / out_cols;
  Matrix out(frame.rows(), out_cols);
  for (int j = 0; j < out_cols; ++j) {
    const double x = (j + 0.5) * scale - 0.5;
    const auto base = static_cast<int>(std::floor(x));
    std::array<int, 4> idx{};
    std::array<double, 4> w{};
    for (int m = 0; m < 4; ++m) {
      const int k = base - 1 + m;
      idx[m] = std::clamp(k, 0, in_cols - 1);
      w[m] = cubic_kernel(x - k);
    }
    out.col(j) = w[0] * frame.col(idx[0]) + w[1] * frame.col(idx[1]) +
                 w[2] * frame.col(idx[2]) + w[3] * frame.col(idx[3]);
  }
  return out;
}

Matrix normalize_pixels(const ByteMatrix& frame) {
  return frame.cast<double>().array() / 127.5 - 1.0;
}

Matrix preprocess_frame(const ByteMatrix& raw) {
  return resize_bicubic(normalize_pixels(raw)).cwiseMax(-1.0).cwiseMin(1.0);
}

int fft_size_for(double sample_rate) {
  const double wanted = 1024.0 * sample_rate / 22050.0;
  int n = 16;
  while (n < wanted - 1e-9) n *= 2;
  return n;
}

int hop_for(double sample_rate, double fps) {
  if (!(fps > 0)) throw ConfigurationError("frame rate must be positive");
  return std::max(1, static_cast<int>(std::lround(sample_rate / fps)));
}

int frame_count(std::size_t n_samples, int hop) {
  return static_cast<int>(n_samples / static_cast<std::size_t>(hop));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(double sample_rate, int n_mels, double fmin,
                                           double fmax) {
  (void)sample_rate;
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> centers(static_cast<std::size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m) {
    centers[m] = mel_to_hz(lo + (hi - lo) * (m + 1) / (n_mels + 1));
  }
  return centers;
}

Matrix mel_filterbank(int n_fft, double sample_rate, int n_mels, double fmin, double fmax) {
  const int n_bins = n_fft / 2 + 1;
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int m = 0; m < n_mels + 2; ++m) edges[m] = mel_to_hz(lo + (hi - lo) * m / (n_mels + 1));

  Matrix fb = Matrix::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * sample_rate / n_fft;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
    fb.row(m) *= 2.0 / (right - left);
  }
  return fb;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

ComplexMatrix stft(std::span<const double> samples, int n_fft, int hop, int n_frames) {
  const int n_bins = n_fft / 2 + 1;
  const auto window = hann_window(n_fft);
  auto& fft = RealFft::for_size(n_fft);
  std::vector<double> buffer(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(n_bins));
  ComplexMatrix out(n_frames, n_bins);
  const auto n = static_cast<long>(samples.size());
  for (int i = 0; i < n_frames; ++i) {
    const long start = static_cast<long>(i) * hop + hop / 2 - n_fft / 2;
    for (int j = 0; j < n_fft; ++j) {
      const long s = start + j;
      buffer[j] = (s >= 0 && s < n) ? samples[s] * window[j] : 0.0;
    }
    fft.forward(buffer, spectrum);
    for (int k = 0; k < n_bins; ++k) out(i, k) = spectrum[k];
  }
  return out;
}

std::vector<double> istft(const ComplexMatrix& spectrum, int n_fft, int hop, std::size_t length) {
  const int n_bins = n_fft / 2 + 1;
  if (spectrum.cols() != n_bins) throw ShapeError("istft: spectrum width does not match n_fft");
  const auto window = hann_window(n_fft);
  auto& fft = RealFft::for_size(n_fft);
  std::vector<double> out(length, 0.0), norm(length, 0.0), frame(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> row(static_cast<std::size_t>(n_bins));
  const auto n = static_cast<long>(length);
  for (Eigen::Index i = 0; i < spectrum.rows(); ++i) {
    for (int k = 0; k < n_bins; ++k) row[k] = spectrum(i, k);
    fft.inverse(row, frame);
    const long start = static_cast<long>(i) * hop + hop / 2 - n_fft / 2;
    for (int j = 0; j < n_fft; ++j) {
      const long s = start + j;
      if (s < 0 || s >= n) continue;
      out[s] += frame[j] / n_fft * window[j];
      norm[s] += window[j] * window[j];
    }
  }
  for (std::size_t s = 0; s < length; ++s) {
    if (norm[s] > 1e-8) out[s] /= norm[s];
  }
  return out;
}

Matrix log_mel_from_magnitude(const Matrix& magnitude, const Matrix& filterbank, double floor) {
  Matrix mel = magnitude * filterbank.transpose();
  return mel.cwiseMax(floor).array().log();
}

MelSpectrogram extract_mel(const AudioClip& audio, double fps, int n_frames,
                           const MelConfig& config) {
  check_audio(audio);
  const int hop = hop_for(audio.sample_rate, fps);
  if (audio.samples.size() < static_cast<std::size_t>(hop)) {
    throw InsufficientAudioError("audio is shorter than one analysis hop");
  }
  if (n_frames < 1) throw ShapeError("extract_mel needs at least one frame");
  const int n_fft = resolve_fft_size(config, audio.sample_rate);
  const double fmax = config.fmax.value_or(audio.sample_rate / 2.0);
  const Matrix fb = mel_filterbank(n_fft, audio.sample_rate, config.n_mels, config.fmin, fmax);
  const Matrix magnitude = stft(audio.samples, n_fft, hop, n_frames).cwiseAbs();

  MelSpectrogram mel;
  mel.values = log_mel_from_magnitude(magnitude, fb, config.floor);
  mel.hop = hop;
  mel.sample_rate = audio.sample_rate;
  return mel;
}

MelStats compute_mel_stats(std::span<const MelSpectrogram> mels, double min_std) {
  if (mels.empty()) throw InsufficientDataError("no mel spectrograms to compute statistics");
  const auto bins = mels.front().values.cols();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(bins);
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(bins);
  double count = 0;
  for (const auto& m : mels) {
    if (m.normalized) throw PreconditionError("statistics need unstandardized mels");
    if (m.values.cols() != bins) throw ShapeError("mel bin count differs across utterances");
    sum += m.values.colwise().sum();
    count += static_cast<double>(m.values.rows());
  }
  if (count == 0) throw InsufficientDataError("mel spectrograms contain no frames");
  MelStats stats;
  stats.mean = sum / count;
  for (const auto& m : mels) {
    sq += (m.values.rowwise() - stats.mean).array().square().matrix().colwise().sum();
  }
  stats.std = (sq / count).array().sqrt().max(min_std);
  return stats;
}

MelSpectrogram standardize_mel(const MelSpectrogram& mel, const MelStats& stats) {
  if (mel.normalized) throw PreconditionError("mel spectrogram is already standardized");
  if (stats.mean.size() != mel.values.cols() || stats.std.size() != mel.values.cols()) {
    throw ShapeError("mel statistics do not match the bin count");
  }
  if ((stats.std.array() <= 0.0).any() || !stats.std.allFinite()) {
    throw DegenerateStatsError("mel statistics contain a non-positive deviation");
  }
  MelSpectrogram out = mel;
  out.values = ((mel.values.rowwise() - stats.mean).array().rowwise() / stats.std.array());
  out.normalized = true;
  out.stats = stats;
  return out;
}

MelSpectrogram destandardize_mel(const MelSpectrogram& mel) {
  if (!mel.normalized || !mel.stats) {
    throw PreconditionError("mel spectrogram is not standardized");
  }
  const auto& stats = *mel.stats;
  MelSpectrogram out = mel;
  out.values = (mel.values.array().rowwise() * stats.std.array()).rowwise() + stats.mean.array();
  out.normalized = false;
  out.stats.reset();
  return out;
}

Matrix cepstra_from_log_mel(const Matrix& log_mel, int order) {
  const auto n = log_mel.cols();
  Matrix basis(n, order);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < order; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      basis(i, k) = scale * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
    }
  }
  return log_mel * basis;
}

Matrix mel_cepstra(const AudioClip& audio, double fps, const MelConfig& config) {
  check_audio(audio);
  const int hop = hop_for(audio.sample_rate, fps);
  const int n = frame_count(audio.samples.size(), hop);
  if (n < 1) throw InsufficientAudioError("audio is shorter than one analysis hop");
  return cepstra_from_log_mel(extract_mel(audio, fps, n, config).values);
}

double mcd_from_cepstra(const Matrix& reference, const Matrix& synthesized) {
  if (reference.cols() != synthesized.cols() || reference.cols() < 2) {
    throw IncompatibleInputError("cepstral orders differ");
  }
  const auto frames = std::min(reference.rows(), synthesized.rows());
  if (frames == 0) throw IncompatibleInputError("no frames to compare");
  const double k = 10.0 / std::numbers::ln10;
  double total = 0.0;
  for (Eigen::Index t = 0; t < frames; ++t) {
    const auto diff = reference.row(t).tail(reference.cols() - 1) -
                      synthesized.row(t).tail(synthesized.cols() - 1);
    total += k * std::sqrt(2.0 * diff.squaredNorm());
  }
  return total / static_cast<double>(frames);
}

double mcd(const AudioClip& reference, const AudioClip& synthesized, double fps) {
  check_audio(reference);
  check_audio(synthesized);
  if (reference.sample_rate != synthesized.sample_rate) {
    throw IncompatibleInputError("sample rates differ");
  }
  return mcd_from_cepstra(mel_cepstra(reference, fps), mel_cepstra(synthesized, fps));
}

AudioClip add_white_noise_anchor(const AudioClip& audio, double level, std::uint64_t seed) {
  if (!(level >= 0)) throw PreconditionError("noise level must be non-negative");
  AudioClip out = audio;
  if (level == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, level);
  for (double& s : out.samples) s = std::clamp(s + noise(rng), -1.0, 1.0);
  return out;
}

void write_mel(const std::filesystem::path& path, const MelSpectrogram& mel) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigurationError("cannot write mel file: " + path.string());
  out.write(kMelMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(mel.values.rows()));
  put_u32(out, static_cast<std::uint32_t>(mel.values.cols()));
  put_u32(out, mel.normalized ? kFlagStandardized : 0u);
  for (Eigen::Index t = 0; t < mel.values.rows(); ++t) {
    for (Eigen::Index b = 0; b < mel.values.cols(); ++b) {
      put_le(out, static_cast<float>(mel.values(t, b)));
    }
  }
  if (mel.normalized) {
    if (!mel.stats) throw PreconditionError("standardized mel lacks statistics");
    for (double v : mel.stats->mean) put_le(out, v);
    for (double v : mel.stats->std) put_le(out, v);
  }
}

MelSpectrogram read_mel(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedFileError("cannot open mel file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMelMagic, 4) != 0) {
    throw MalformedFileError("bad mel header: " + path.string());
  }
  const std::size_t frames = get_u32(bytes.data() + 4);
  const std::size_t bins = get_u32(bytes.data() + 8);
  const std::uint32_t flags = get_u32(bytes.data() + 12);
  const bool standardized = (flags & kFlagStandardized) != 0;
  const std::size_t payload = frames * bins * 4;
  const std::size_t expected = 16 + payload + (standardized ? bins * 16 : 0);
  if (bytes.size() != expected) throw MalformedFileError("mel payload size mismatch: " + path.string());

  MelSpectrogram mel;
  mel.values.resize(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(bins));
  const unsigned char* p = bytes.data() + 16;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t b = 0; b < bins; ++b, p += 4) mel.values(t, b) = get_le<float>(p);
  }
  mel.normalized = standardized;
  if (standardized) {
    MelStats stats;
    stats.mean.resize(static_cast<Eigen::Index>(bins));
    stats.std.resize(static_cast<Eigen::Index>(bins));
    for (std::size_t b = 0; b < bins; ++b, p += 8) stats.mean(b) = get_le<double>(p);
    for (std::size_t b = 0; b < bins; ++b, p += 8) stats.std(b) = get_le<double>(p);
    mel.stats = std::move(stats);
  }
  return mel;
}

namespace {

// Piecewise-linear approximation of the viridis colour map.
std::array<unsigned char, 3> colour(double v) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{{68, 1, 84},
                                                               {59, 82, 139},
                                                               {33, 145, 140},
                                                               {94, 201, 98},
                                                               {253, 231, 37}}};
  v = std::clamp(v, 0.0, 1.0) * (stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(v), stops.size() - 2);
  const double f = v - static_cast<double>(i);
  std::array<unsigned char, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    rgb[c] = static_cast<unsigned char>(std::lround(stops[i][c] * (1 - f) + stops[i + 1][c] * f));
  }
  return rgb;
}

}  // namespace

void write_mel_png(const std::filesystem::path& path, const MelSpectrogram& mel,
                   int pixels_per_frame, int pixels_per_bin) {
  const int frames = mel.frames(), bins = mel.bins();
  if (frames == 0 || bins == 0) throw ShapeError("cannot plot an empty mel spectrogram");
  const int width = frames * pixels_per_frame;
  const int height = bins * pixels_per_bin;
  const double lo = mel.values.minCoeff();
  const double hi = mel.values.maxCoeff();
  const double range = hi > lo ? hi - lo : 1.0;

  std::vector<unsigned char> image(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    const int b = bins - 1 - y / pixels_per_bin;
    for (int x = 0; x < width; ++x) {
      const auto rgb = colour((mel.values(x / pixels_per_frame, b) - lo) / range);
      std::copy(rgb.begin(), rgb.end(), image.begin() + (static_cast<std::size_t>(y) * width + x) * 3);
    }
  }

  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (fp == nullptr) throw ConfigurationError("cannot write image: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("libpng failed while writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, image.data() + static_cast<std::size_t>(y) * width * 3);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace uts::dsp
