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

#include <cmath>
#include <fstream>
#include <numbers>

#include "support/support.hpp"
#include "uts/audio.hpp"
#include "uts/error.hpp"

using namespace uts;

TEST_CASE("peak normalisation and unit-range limiting") {
  AudioClip c{{0.1, -0.25, 0.2}, 16000};
  peak_normalize(c);
  CHECK(peak(c.samples) == doctest::Approx(1.0));
  CHECK(c.samples[1] == doctest::Approx(-1.0));

  AudioClip quiet{{0.1, -0.2}, 16000};
  limit_to_unit_range(quiet);
  CHECK(quiet.samples[1] == doctest::Approx(-0.2));

  AudioClip loud{{3.0, -1.5}, 16000};
  limit_to_unit_range(loud);
  CHECK(peak(loud.samples) <= 1.0);
  CHECK(loud.samples[1] == doctest::Approx(-0.5));

  AudioClip silence{{0.0, 0.0}, 16000};
  peak_normalize(silence);
  CHECK(silence.samples[0] == 0.0);
}

TEST_CASE("validate rejects out-of-range clips") {
  CHECK_THROWS_AS(validate(AudioClip{{1.5}, 16000}), ValidationError);
  CHECK_THROWS_AS(validate(AudioClip{{0.5}, 0}), ValidationError);
  CHECK_NOTHROW(validate(AudioClip{{0.5, -1.0}, 16000}));
}

TEST_CASE("16-bit WAV round trip stays within half a quantisation step") {
  testing::TempDir dir;
  AudioClip c;
  c.sample_rate = 22050;
  for (int i = 0; i < 1000; ++i) c.samples.push_back(0.9 * std::sin(2 * std::numbers::pi * 440 * i / 22050.0));
  write_wav(dir / "a.wav", c);
  const AudioClip r = read_wav(dir / "a.wav");
  REQUIRE(r.samples.size() == c.samples.size());
  CHECK(r.sample_rate == 22050);
  double worst = 0;
  for (std::size_t i = 0; i < c.samples.size(); ++i) worst = std::max(worst, std::abs(r.samples[i] - c.samples[i]));
  CHECK(worst <= 0.5 / 32768 + 1e-12);

  write_wav(dir / "full.wav", AudioClip{{1.0, -1.0, 0.0}, 8000});
  const auto full = read_wav(dir / "full.wav");
  CHECK(full.samples[0] == doctest::Approx(32767.0 / 32768.0));
  CHECK(full.samples[1] == -1.0);
}

TEST_CASE("malformed WAV files are rejected") {
  testing::TempDir dir;
  std::ofstream(dir / "bad.wav") << "not a wave file";
  CHECK_THROWS_AS(read_wav(dir / "bad.wav"), MalformedFileError);
  CHECK_THROWS(read_wav(dir / "missing.wav"));
}
