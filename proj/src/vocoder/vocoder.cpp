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

#include "uts/vocoder.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <complex>
#include <cstdlib>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>

#include "uts/error.hpp"

namespace uts::vocoder {

namespace fs = std::filesystem;

Backend parse_backend(const std::string& name) {
  if (name == "external") return Backend::kExternal;
  if (name == "fallback") return Backend::kFallback;
  throw ConfigurationError("unknown vocoder backend: " + name);
}

std::string to_string(Backend backend) {
  return backend == Backend::kExternal ? "external" : "fallback";
}

dsp::MelSpectrogram resample_mel_for_vocoder(const dsp::MelSpectrogram& mel, int target_hop,
                                             double sample_rate) {
  if (target_hop < 1) throw ConfigurationError("vocoder hop must be >= 1");
  if (mel.hop < 1) throw ShapeError("mel spectrogram carries no hop size");
  if (mel.frames() < 1) throw ShapeError("mel spectrogram has no frames");
  dsp::MelSpectrogram out;
  out.normalized = mel.normalized;
  out.stats = mel.stats;
  out.hop = target_hop;
  out.sample_rate = sample_rate;
  if (target_hop == mel.hop) {
    out.values = mel.values;
    return out;
  }
  const double src_hop = mel.hop;
  const int frames = std::max(1, static_cast<int>(std::lround(mel.frames() * src_hop / target_hop)));
  out.values.resize(frames, mel.bins());
  const int last = mel.frames() - 1;
  for (int j = 0; j < frames; ++j) {
    // Frame centres sit at i * hop + hop / 2 in both framings.
    const double pos = std::clamp(((j + 0.5) * target_hop - 0.5 * src_hop) / src_hop, 0.0,
                                  static_cast<double>(last));
    const int i0 = static_cast<int>(pos);
    const int i1 = std::min(last, i0 + 1);
    const double w = pos - i0;
    out.values.row(j) = (1.0 - w) * mel.values.row(i0) + w * mel.values.row(i1);
  }
  return out;
}

Matrix invert_mel_filterbank(const Matrix& mel_magnitude, const Matrix& filterbank, int iterations) {
  if (mel_magnitude.cols() != filterbank.rows()) {
    throw ShapeError("mel width does not match the filterbank");
  }
  constexpr double kTiny = 1e-12;
  const Matrix gram = filterbank.transpose() * filterbank;  // K x K
  const Matrix numer = mel_magnitude * filterbank;          // T x K
  // Start from the filterbank transpose image, rescaled per bin so that a
  // flat spectrum maps onto itself.
  const Eigen::RowVectorXd coverage = filterbank.colwise().sum();
  const Eigen::RowVectorXd response = filterbank.rowwise().sum().transpose() * filterbank;
  Matrix spec(mel_magnitude.rows(), filterbank.cols());
  for (Eigen::Index k = 0; k < spec.cols(); ++k) {
    const double scale = response(k) > kTiny ? coverage(k) / response(k) : 0.0;
    spec.col(k) = numer.col(k) * scale;
  }
  spec = spec.cwiseMax(kTiny);
  for (int it = 0; it < iterations; ++it) {
    const Matrix denom = spec * gram;
    spec.array() *= numer.array() / (denom.array() + kTiny);
  }
  // Bins no filter covers carry no information.
  for (Eigen::Index k = 0; k < spec.cols(); ++k) {
    if (coverage(k) <= kTiny) spec.col(k).setZero();
  }
  return spec;
}

std::vector<double> griffin_lim(const Matrix& magnitude, int n_fft, int hop, std::size_t length,
                                int iterations, std::uint64_t seed) {
  const int frames = static_cast<int>(magnitude.rows());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  dsp::ComplexMatrix spec(frames, magnitude.cols());
  for (Eigen::Index i = 0; i < spec.size(); ++i) {
    spec.data()[i] = std::polar(magnitude.data()[i], angle(rng));
  }
  std::vector<double> signal = dsp::istft(spec, n_fft, hop, length);
  for (int it = 0; it < iterations; ++it) {
    const dsp::ComplexMatrix est = dsp::stft(signal, n_fft, hop, frames);
    for (Eigen::Index i = 0; i < spec.size(); ++i) {
      const double mag = std::abs(est.data()[i]);
      spec.data()[i] = mag > 1e-12 ? est.data()[i] * (magnitude.data()[i] / mag)
                                   : std::complex<double>(magnitude.data()[i], 0.0);
    }
    signal = dsp::istft(spec, n_fft, hop, length);
  }
  return signal;
}

namespace {

void check_mel(const dsp::MelSpectrogram& mel) {
  if (mel.normalized) throw PreconditionError("vocoder input must be destandardized log-mels");
  if (mel.frames() < 1 || mel.bins() < 1) throw ShapeError("empty mel spectrogram");
  if (mel.hop < 1 || mel.sample_rate <= 0) throw ShapeError("mel spectrogram lacks hop or sample rate");
  if (!mel.values.allFinite()) throw NumericInputError("mel spectrogram contains non-finite values");
}

AudioClip fallback(const dsp::MelSpectrogram& mel, const VocoderConfig& config) {
  const double sr = mel.sample_rate;
  const int n_fft = dsp::fft_size_for(sr);
  const dsp::MelConfig defaults;
  const Matrix fb = dsp::mel_filterbank(n_fft, sr, mel.bins(), defaults.fmin, sr / 2.0);
  // Entries at the analysis floor carry no energy.
  const double floor_log = std::log(defaults.floor) + 1e-6;
  const Matrix mel_mag = mel.values.unaryExpr([&](double v) { return v <= floor_log ? 0.0 : std::exp(v); });
  const Matrix magnitude = invert_mel_filterbank(mel_mag, fb, config.filterbank_iterations);
  const std::size_t length = static_cast<std::size_t>(mel.frames()) * static_cast<std::size_t>(mel.hop);
  AudioClip out;
  out.sample_rate = sr;
  out.samples = griffin_lim(magnitude, n_fft, mel.hop, length, config.griffin_lim_iterations, config.seed);
  limit_to_unit_range(out);
  return out;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

bool executable_available(const std::string& command) {
  std::istringstream is(command);
  std::string program;
  is >> program;
  if (program.empty()) return false;
  if (program.find('/') != std::string::npos) return ::access(program.c_str(), X_OK) == 0;
  const char* path = std::getenv("PATH");
  if (!path) return false;
  std::istringstream dirs(path);
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    if (!dir.empty() && ::access((fs::path(dir) / program).c_str(), X_OK) == 0) return true;
  }
  return false;
}

std::mutex& command_mutex(const std::string& command) {
  static std::mutex guard;
  static std::map<std::string, std::mutex> per_command;
  std::lock_guard lock(guard);
  return per_command[command];
}

AudioClip external(const dsp::MelSpectrogram& mel, const VocoderConfig& config) {
  if (config.command.empty()) throw BackendMissingError("no external vocoder command configured (vocoder.cmd)");
  if (!executable_available(config.command)) {
    throw BackendMissingError("external vocoder not found: " + config.command);
  }
  const dsp::MelSpectrogram input = resample_mel_for_vocoder(mel, config.hop, config.sample_rate);

  std::string tmpl = (fs::temp_directory_path() / "uts-vocoder-XXXXXX").string();
  if (!::mkdtemp(tmpl.data())) throw Error("cannot create a temporary directory");
  const fs::path dir(tmpl);
  struct Cleanup {
    fs::path dir;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(dir, ec);
    }
  } cleanup{dir};

  const fs::path mel_path = dir / "mel.bin", wav_path = dir / "out.wav";
  dsp::write_mel(mel_path, input);
  const std::string cmd = config.command + " --in " + shell_quote(mel_path.string()) + " --out " +
                          shell_quote(wav_path.string());
  int status = 0;
  {
    std::lock_guard lock(command_mutex(config.command));
    status = std::system(cmd.c_str());
  }
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw Error("external vocoder failed: " + config.command);
  }
  if (!fs::exists(wav_path)) throw Error("external vocoder produced no output file");
  AudioClip out = read_wav(wav_path);
  limit_to_unit_range(out);
  return out;
}

}  // namespace

AudioClip synthesize(const dsp::MelSpectrogram& mel, const VocoderConfig& config) {
  check_mel(mel);
  return config.backend == Backend::kExternal ? external(mel, config) : fallback(mel, config);
}

}  // namespace uts::vocoder
