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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "support/support.hpp"
#include "uts/error.hpp"
#include "uts/vocoder.hpp"

using namespace uts;
using namespace uts::vocoder;

namespace {

dsp::MelSpectrogram mel_of(const AudioClip& a) {
  const int frames = static_cast<int>(a.duration() * kUltrasoundFps);
  return dsp::extract_mel(a, kUltrasoundFps, frames);
}

}  // namespace

TEST_CASE("backend names") {
  CHECK(parse_backend("fallback") == Backend::kFallback);
  CHECK(parse_backend("external") == Backend::kExternal);
  CHECK(to_string(Backend::kExternal) == "external");
  CHECK_THROWS(parse_backend("wavenet"));
}

TEST_CASE("resampling to the analysis hop is the identity") {
  const auto mel = mel_of(testing::speech_like_audio(1, 0.3));
  const auto same = resample_mel_for_vocoder(mel, mel.hop, mel.sample_rate);
  CHECK(same.values == mel.values);
  CHECK(same.hop == mel.hop);
}

TEST_CASE("resampling changes frame count by the hop ratio and keeps constants") {
  dsp::MelSpectrogram mel;
  mel.values = Matrix::Constant(10, 80, -2.0);
  mel.hop = 271;
  mel.sample_rate = 22050;
  const auto r = resample_mel_for_vocoder(mel, 256, 22050);
  CHECK(r.frames() == 11);
  CHECK((r.values.array() + 2.0).abs().maxCoeff() < 1e-12);
  CHECK_THROWS(resample_mel_for_vocoder(mel, 0, 22050));
}

TEST_CASE("fallback inverts a floor-level spectrogram to silence") {
  AudioClip silence{std::vector<double>(22050 / 2, 0.0), 22050};
  const auto mel = mel_of(silence);
  VocoderConfig cfg;
  cfg.griffin_lim_iterations = 5;
  const auto out = synthesize(mel, cfg);
  CHECK(out.samples.size() == static_cast<std::size_t>(mel.frames() * mel.hop));
  CHECK(rms(out.samples) < 1e-6);
}

TEST_CASE("fallback round trip on speech-like audio") {
  const auto audio = testing::speech_like_audio(2, 1.0);
  const auto mel = mel_of(audio);
  VocoderConfig cfg;
  cfg.seed = 1;
  const auto out = synthesize(mel, cfg);
  CHECK(peak(out.samples) <= 1.0);
  const auto back = dsp::extract_mel(out, kUltrasoundFps, mel.frames());
  CHECK((back.values - mel.values).cwiseAbs().mean() < 0.5);
  // Same seed, same waveform.
  CHECK(synthesize(mel, cfg).samples == out.samples);
}

TEST_CASE("vocoder input checks") {
  auto mel = mel_of(testing::speech_like_audio(3, 0.2));
  mel.values(2, 3) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(synthesize(mel, {}), NumericInputError);
  auto z = mel_of(testing::speech_like_audio(3, 0.2));
  z.normalized = true;
  CHECK_THROWS_AS(synthesize(z, {}), PreconditionError);
}

TEST_CASE("external backend") {
  const auto mel = mel_of(testing::speech_like_audio(4, 0.25));
  VocoderConfig cfg;
  cfg.backend = Backend::kExternal;
  cfg.command = "/nonexistent/vocoder";
  CHECK_THROWS_AS(synthesize(mel, cfg), BackendMissingError);
  cfg.command.clear();
  CHECK_THROWS_AS(synthesize(mel, cfg), BackendMissingError);

  cfg.command = std::string(UTS_FAKE_VOCODER) + " --hop 256 --rate 22050";
  const auto out = synthesize(mel, cfg);
  const auto expected_frames = std::lround(mel.frames() * static_cast<double>(mel.hop) / 256.0);
  CHECK(out.samples.size() == static_cast<std::size_t>(expected_frames * 256));
  CHECK(out.sample_rate == 22050);
  CHECK(peak(out.samples) == doctest::Approx(0.5).epsilon(1e-3));

  cfg.command = std::string(UTS_FAKE_VOCODER) + " --fail";
  CHECK_THROWS_AS(synthesize(mel, cfg), Error);
}

TEST_CASE("fallback error is stable across seeds and lengths follow the hop") {
  const auto mel = mel_of(testing::speech_like_audio(9, 0.6));
  std::vector<double> errors;
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    VocoderConfig cfg;
    cfg.seed = seed;
    const auto out = synthesize(mel, cfg);
    CHECK(std::abs(static_cast<double>(out.samples.size()) - mel.frames() * mel.hop) <= mel.hop);
    CHECK(peak(out.samples) <= 1.0);
    errors.push_back((dsp::extract_mel(out, kUltrasoundFps, mel.frames()).values - mel.values).cwiseAbs().mean());
  }
  const auto [lo, hi] = std::minmax_element(errors.begin(), errors.end());
  CHECK(*hi < 0.5);
  CHECK(*hi - *lo < 0.1);
}

TEST_CASE("malformed mels are shape errors") {
  dsp::MelSpectrogram empty;
  empty.hop = 271;
  empty.sample_rate = 22050;
  CHECK_THROWS_AS(synthesize(empty, {}), ShapeError);
  auto no_hop = mel_of(testing::speech_like_audio(3, 0.2));
  no_hop.hop = 0;
  CHECK_THROWS_AS(synthesize(no_hop, {}), ShapeError);
}
