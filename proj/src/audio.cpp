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

#include "uts/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "uts/error.hpp"

namespace uts {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

}  // namespace

void validate(const AudioClip& clip) {
  if (!(clip.sample_rate > 0)) throw ValidationError("audio sample rate must be positive");
  for (double s : clip.samples) {
    if (!std::isfinite(s) || std::abs(s) > 1.0) {
      throw ValidationError("audio sample outside [-1, 1]");
    }
  }
}

double peak(std::span<const double> samples) {
  double p = 0.0;
  for (double s : samples) p = std::max(p, std::abs(s));
  return p;
}

double rms(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

void peak_normalize(AudioClip& clip) {
  const double p = peak(clip.samples);
  if (p <= 0.0) return;
  for (double& s : clip.samples) s /= p;
}

void limit_to_unit_range(AudioClip& clip) {
  const double p = peak(clip.samples);
  if (p > 1.0) {
    for (double& s : clip.samples) s /= p;
  }
  for (double& s : clip.samples) s = std::clamp(s, -1.0, 1.0);
}

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedFileError("cannot open wav file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw MalformedFileError("not a RIFF/WAVE file: " + path.string());
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || avail < 16) throw MalformedFileError("truncated fmt chunk: " + path.string());
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible && size >= 26 && avail >= 26) {
        format = read_u16(chunk + 8 + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      // Streams written without a final size are common; clamp to the file.
      data_size = std::min<std::size_t>(size, avail);
    }
    pos = body + size + (size & 1u);
  }
  if (channels == 0 || rate == 0 || data == nullptr) {
    throw MalformedFileError("wav file lacks fmt or data chunk: " + path.string());
  }
  if (!((format == kFormatPcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32)) ||
        (format == kFormatFloat && bits == 32))) {
    throw MalformedFileError("unsupported wav encoding in " + path.string());
  }

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * channels;
  const std::size_t n_frames = data_size / frame_bytes;
  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * bytes_per_sample;
      double v = 0.0;
      if (format == kFormatFloat) {
        float f;
        std::uint32_t raw = read_u32(p);
        std::memcpy(&f, &raw, sizeof f);
        v = f;
      } else if (bits == 8) {
        v = (static_cast<double>(p[0]) - 128.0) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t raw = p[0] | (p[1] << 8) | (p[2] << 16);
        if (raw & 0x800000) raw -= 0x1000000;
        v = raw / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
      }
      acc += v;
    }
    clip.samples[i] = std::clamp(acc / channels, -1.0, 1.0);
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  if (!(clip.sample_rate > 0)) throw ValidationError("cannot write wav without a sample rate");
  const auto rate = static_cast<std::uint32_t>(std::lround(clip.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (double s : clip.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::clamp<long>(std::lround(c * 32768.0), -32768, 32767));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigurationError("cannot write wav file: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace uts
