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

#include "uts/corpus.hpp"
#include "uts/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "uts/error.hpp"

namespace uts::corpus {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Accepts both "key: value" and the "Key=Value" style of TaL exports.
std::map<std::string, std::string> read_params(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("missing ultrasound parameter file: " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto sep = line.find_first_of(":=");
    if (sep == std::string::npos) continue;
    out[trim(line.substr(0, sep))] = trim(line.substr(sep + 1));
  }
  return out;
}

std::optional<double> lookup(const std::map<std::string, std::string>& params,
                             std::initializer_list<const char*> keys) {
  for (const char* key : keys) {
    if (auto it = params.find(key); it != params.end()) {
      try {
        return std::stod(it->second);
      } catch (const std::exception&) {
        throw ConfigurationError(std::string("parameter ") + key + " is not numeric");
      }
    }
  }
  return std::nullopt;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

constexpr char kFramesMagic[4] = {'U', 'T', 'S', 'F'};

}  // namespace

ByteMatrix UltrasoundRecording::frame(int t) const {
  if (t < 0 || t >= frame_count()) throw ShapeError("frame index out of range");
  const std::size_t size = static_cast<std::size_t>(scanlines) * samples_per_line;
  return Eigen::Map<const ByteMatrix>(frames.data() + size * t, scanlines, samples_per_line);
}

const std::set<std::string>& test_utterance_ids() {
  static const std::set<std::string> ids = [] {
    std::set<std::string> s;
    for (int i = 5; i <= 14; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%03d_xaud", i);
      s.insert(buf);
    }
    return s;
  }();
  return ids;
}

UltrasoundRecording load_recording(const fs::path& ultrasound_path, const fs::path& audio_path,
                                   const fs::path& params_path) {
  const auto params = read_params(params_path);
  const auto fps = lookup(params, {"fps", "FramesPerSec"});
  if (!fps || !(*fps > 0)) throw ConfigurationError("parameter file lacks a positive fps");
  const int scanlines = static_cast<int>(lookup(params, {"scanlines", "NumVectors"}).value_or(kScanlines));
  const int samples = static_cast<int>(
      lookup(params, {"samples_per_line", "PixPerVector"}).value_or(kRawSamplesPerLine));
  if (scanlines != kScanlines || samples != kRawSamplesPerLine) {
    throw ConfigurationError("unsupported ultrasound geometry " + std::to_string(scanlines) + "x" +
                             std::to_string(samples));
  }
  const double offset = lookup(params, {"offset", "TimeInSecsOfFirstFrame"}).value_or(0.0);

  std::ifstream in(ultrasound_path, std::ios::binary);
  if (!in) throw MalformedFileError("cannot open ultrasound file: " + ultrasound_path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  const std::size_t frame_size = static_cast<std::size_t>(scanlines) * samples;
  if (bytes.empty() || bytes.size() % frame_size != 0) {
    throw MalformedFileError("ultrasound byte count " + std::to_string(bytes.size()) +
                             " is not a positive multiple of the frame size");
  }

  UltrasoundRecording rec;
  rec.speaker_id = ultrasound_path.parent_path().filename().string();
  rec.utterance_id = ultrasound_path.stem().string();
  rec.scanlines = scanlines;
  rec.samples_per_line = samples;
  rec.fps = *fps;
  rec.frames = std::move(bytes);
  rec.audio = read_wav(audio_path);
  peak_normalize(rec.audio);

  // Recorded timestamps are trusted: audio before the first frame is dropped.
  if (offset > 0) {
    const auto skip = std::min(rec.audio.samples.size(),
                               static_cast<std::size_t>(std::lround(offset * rec.audio.sample_rate)));
    rec.audio.samples.erase(rec.audio.samples.begin(), rec.audio.samples.begin() + static_cast<long>(skip));
  }

  const double ultra_seconds = rec.frame_count() / rec.fps;
  const double audio_seconds = rec.audio.duration();
  if (std::abs(ultra_seconds - audio_seconds) > kAlignmentToleranceSeconds) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "duration mismatch: ultrasound %.3f s, audio %.3f s",
                  ultra_seconds, audio_seconds);
    rec.warnings.emplace_back(buf);
  }
  if (audio_seconds > ultra_seconds) {
    rec.audio.samples.resize(static_cast<std::size_t>(std::lround(ultra_seconds * rec.audio.sample_rate)));
  } else {
    // Half a sample of slack absorbs rounding of the audio length.
    const double covered = (audio_seconds + 0.5 / rec.audio.sample_rate) * rec.fps;
    const int keep = std::max(1, static_cast<int>(std::floor(covered + 1e-9)));
    rec.frames.resize(frame_size * static_cast<std::size_t>(std::min(keep, rec.frame_count())));
  }
  return rec;
}

void store_recording(const fs::path& directory, const UltrasoundRecording& recording) {
  fs::create_directories(directory);
  const auto base = directory / recording.utterance_id;
  {
    std::ofstream out(fs::path(base).concat(".ult"), std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigurationError("cannot write " + base.string() + ".ult");
    out.write(reinterpret_cast<const char*>(recording.frames.data()),
              static_cast<std::streamsize>(recording.frames.size()));
  }
  {
    std::ofstream out(fs::path(base).concat(".param"), std::ios::trunc);
    out.precision(17);
    out << "fps: " << recording.fps << "\n"
        << "scanlines: " << recording.scanlines << "\n"
        << "samples_per_line: " << recording.samples_per_line << "\n";
  }
  write_wav(fs::path(base).concat(".wav"), recording.audio);
}

std::vector<UltrasoundRecording> load_speaker(const fs::path& directory) {
  if (!fs::is_directory(directory)) throw ConfigurationError("not a directory: " + directory.string());
  std::vector<fs::path> ults;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (entry.path().extension() == ".ult") ults.push_back(entry.path());
  }
  std::sort(ults.begin(), ults.end());
  std::vector<UltrasoundRecording> out;
  out.reserve(ults.size());
  for (const auto& ult : ults) {
    auto wav = ult, param = ult;
    out.push_back(load_recording(ult, wav.replace_extension(".wav"), param.replace_extension(".param")));
  }
  return out;
}

CorpusSplit split_utterances(const std::string& speaker, std::vector<std::string> ids,
                             std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw PreconditionError("duplicate utterance id for speaker " + speaker);
  }
  CorpusSplit split;
  std::vector<std::string> rest;
  for (auto& id : ids) {
    if (test_utterance_ids().contains(id)) {
      split.test.push_back({speaker, id});
    } else {
      rest.push_back(std::move(id));
    }
  }
  if (rest.size() < 12) {
    throw InsufficientDataError("speaker " + speaker + " has " + std::to_string(rest.size()) +
                                " non-test utterances; at least 12 are required");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(rest.begin(), rest.end(), rng);
  const auto n_dev = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(rest.size() / 10.0)));
  for (std::size_t i = 0; i < rest.size(); ++i) {
    (i < n_dev ? split.dev : split.train).push_back({speaker, rest[i]});
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.dev.begin(), split.dev.end());
  return split;
}

CorpusSplit split_corpus(std::span<const UltrasoundRecording> recordings, std::uint64_t seed) {
  if (recordings.empty()) throw InsufficientDataError("no recordings to split");
  const auto& speaker = recordings.front().speaker_id;
  std::vector<std::string> ids;
  for (const auto& r : recordings) {
    if (r.speaker_id != speaker) throw PreconditionError("split_corpus expects a single speaker");
    ids.push_back(r.utterance_id);
  }
  return split_utterances(speaker, std::move(ids), seed);
}

void write_split_manifest(const fs::path& path, const CorpusSplit& split) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigurationError("cannot write split manifest: " + path.string());
  auto emit = [&](const std::vector<UtteranceRef>& refs, const char* name) {
    for (const auto& r : refs) {
      out << nlohmann::json{{"speaker", r.speaker}, {"utterance", r.utterance}, {"split", name}}.dump()
          << "\n";
    }
  };
  emit(split.train, "train");
  emit(split.dev, "dev");
  emit(split.test, "test");
}

CorpusSplit read_split_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("missing split manifest: " + path.string());
  CorpusSplit split;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedFileError("bad split manifest line: " + std::string(e.what()));
    }
    UtteranceRef ref{j.at("speaker").get<std::string>(), j.at("utterance").get<std::string>()};
    const auto which = j.at("split").get<std::string>();
    if (which == "train") {
      split.train.push_back(ref);
    } else if (which == "dev") {
      split.dev.push_back(ref);
    } else if (which == "test") {
      split.test.push_back(ref);
    } else {
      throw MalformedFileError("unknown split name: " + which);
    }
  }
  return split;
}

std::string synthetic_utterance_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, index <= 24 ? "%03d_xaud" : "%03d_aud", index);
  return buf;
}

namespace {

constexpr int kBands = 3;
constexpr std::array<double, kBands> kPartialBase{1400.0, 4400.0, 7500.0};
constexpr std::array<double, kBands> kPartialGain{3700.0, 5500.0, 4400.0};
constexpr std::array<double, kBands> kPartialAmplitude{0.5, 0.3, 0.2};
constexpr std::size_t kFadeSamples = 512;

int band_begin(int band, int rows) { return band * rows / kBands; }

}  // namespace

std::vector<double> synthetic_partials(const ByteMatrix& frame) {
  std::vector<double> freqs(kBands);
  const auto rows = static_cast<int>(frame.rows());
  for (int b = 0; b < kBands; ++b) {
    const int r0 = band_begin(b, rows), r1 = band_begin(b + 1, rows);
    const double mean =
        frame.middleRows(r0, r1 - r0).cast<double>().mean() / 255.0;
    freqs[b] = kPartialBase[b] + kPartialGain[b] * mean;
  }
  return freqs;
}

std::vector<UltrasoundRecording> generate_synthetic_corpus(std::uint64_t seed, int n_utterances,
                                                           std::pair<int, int> range,
                                                           const SyntheticOptions& options) {
  if (n_utterances < 1) throw PreconditionError("n_utterances must be >= 1");
  if (range.first < 1 || range.first > range.second) {
    throw PreconditionError("frame count range must satisfy 1 <= min <= max");
  }
  constexpr int rows = kScanlines, cols = kRawSamplesPerLine;

  // Static speckle-like texture shared by all utterances of the speaker.
  std::mt19937_64 tex_rng(mix_seed(seed, 0));
  std::normal_distribution<double> tex_noise(0.0, 6.0);
  Matrix texture(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) texture(r, c) = tex_noise(tex_rng);
  }

  std::vector<UltrasoundRecording> out;
  out.reserve(static_cast<std::size_t>(n_utterances));
  for (int u = 0; u < n_utterances; ++u) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(u) + 1));
    std::uniform_int_distribution<int> length(range.first, range.second);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> speckle(0.0, 3.0);

    UltrasoundRecording rec;
    rec.speaker_id = options.speaker_id;
    rec.utterance_id = synthetic_utterance_id(u + 1);
    rec.fps = options.fps;
    const int n_frames = length(rng);

    // Each band follows a sum of slow sinusoids mapped into [0.1, 0.9].
    std::array<std::array<double, 3>, kBands> rate{}, phase{}, weight{};
    for (int b = 0; b < kBands; ++b) {
      for (int m = 0; m < 3; ++m) {
        rate[b][m] = 0.3 + 1.7 * unit(rng);
        phase[b][m] = 2.0 * std::numbers::pi * unit(rng);
        weight[b][m] = 0.5 + unit(rng);
      }
    }
    auto latent = [&](int b, double seconds) {
      double acc = 0.0, norm = 0.0;
      for (int m = 0; m < 3; ++m) {
        acc += weight[b][m] * std::sin(2.0 * std::numbers::pi * rate[b][m] * seconds + phase[b][m]);
        norm += weight[b][m];
      }
      return 0.5 + 0.4 * acc / norm;
    };

    rec.frames.resize(static_cast<std::size_t>(n_frames) * rows * cols);
    std::vector<std::vector<double>> partials(static_cast<std::size_t>(n_frames));
    for (int t = 0; t < n_frames; ++t) {
      const double seconds = t / rec.fps;
      Eigen::Map<ByteMatrix> frame(rec.frames.data() + static_cast<std::size_t>(t) * rows * cols, rows, cols);
      for (int b = 0; b < kBands; ++b) {
        const double z = latent(b, seconds);
        const double centre = 200.0 + 400.0 * z;
        for (int r = band_begin(b, rows); r < band_begin(b + 1, rows); ++r) {
          for (int c = 0; c < cols; ++c) {
            const double d = (c - centre) / 200.0;
            const double v = 20.0 + 200.0 * z * std::exp(-d * d) + texture(r, c) + speckle(rng);
            frame(r, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
          }
        }
      }
      partials[t] = synthetic_partials(frame);
    }

    const double sr = options.sample_rate;
    const auto n_samples = static_cast<std::size_t>(std::lround(n_frames * sr / rec.fps));
    rec.audio.sample_rate = sr;
    rec.audio.samples.resize(n_samples);
    std::array<double, kBands> acc_phase{};
    for (int b = 0; b < kBands; ++b) acc_phase[b] = 2.0 * std::numbers::pi * unit(rng);
    for (std::size_t n = 0; n < n_samples; ++n) {
      // Frequencies glide smoothly (Catmull-Rom) between frame centres.
      const double pos = std::clamp(static_cast<double>(n) * rec.fps / sr - 0.5, 0.0, n_frames - 1.0);
      const int t1 = static_cast<int>(pos);
      const double w = pos - t1;
      const auto at = [&](int t, int b) { return partials[std::clamp(t, 0, n_frames - 1)][b]; };
      double s = 0.0;
      for (int b = 0; b < kBands; ++b) {
        double f = 0.0;
        for (int k = -1; k <= 2; ++k) f += dsp::cubic_kernel(w - k) * at(t1 + k, b);
        acc_phase[b] += 2.0 * std::numbers::pi * f / sr;
        s += kPartialAmplitude[b] * std::sin(acc_phase[b]);
      }
      rec.audio.samples[n] = s;
    }
    // Raised-cosine onset and offset so the clip edges do not splatter
    // energy across the spectrum.
    const std::size_t fade = std::min<std::size_t>(kFadeSamples, n_samples / 2);
    for (std::size_t n = 0; n < fade; ++n) {
      const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * (n + 0.5) / fade);
      rec.audio.samples[n] *= g;
      rec.audio.samples[n_samples - 1 - n] *= g;
    }
    peak_normalize(rec.audio);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_frames(const fs::path& path, std::span<const Matrix> frames) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigurationError("cannot write frames file: " + path.string());
  const auto rows = frames.empty() ? 0 : frames.front().rows();
  const auto cols = frames.empty() ? 0 : frames.front().cols();
  out.write(kFramesMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(frames.size()));
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
  for (const auto& f : frames) {
    if (f.rows() != rows || f.cols() != cols) throw ShapeError("frames differ in shape");
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        const float v = static_cast<float>(f(r, c));
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
    }
  }
}

std::vector<Matrix> read_frames(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedFileError("cannot open frames file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kFramesMagic, 4) != 0) {
    throw MalformedFileError("bad frames header: " + path.string());
  }
  const std::size_t n = get_u32(bytes.data() + 4);
  const std::size_t rows = get_u32(bytes.data() + 8);
  const std::size_t cols = get_u32(bytes.data() + 12);
  if (bytes.size() != 16 + n * rows * cols * 4) {
    throw MalformedFileError("frames payload size mismatch: " + path.string());
  }
  std::vector<Matrix> frames(n, Matrix(rows, cols));
  const unsigned char* p = bytes.data() + 16;
  for (auto& f : frames) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c, p += 4) {
        float v;
        std::memcpy(&v, p, sizeof v);
        f(r, c) = v;
      }
    }
  }
  return frames;
}

}  // namespace uts::corpus
