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

#include <fstream>
#include <random>
#include <set>

#include "support/support.hpp"
#include "uts/corpus.hpp"
#include "uts/dsp.hpp"
#include "uts/error.hpp"

using namespace uts;
using namespace uts::corpus;

namespace {

std::vector<std::string> ids_up_to(int n) {
  std::vector<std::string> ids;
  for (int i = 1; i <= n; ++i) ids.push_back(synthetic_utterance_id(i));
  return ids;
}

}  // namespace

TEST_CASE("store / load round trip preserves frames and audio") {
  testing::TempDir dir;
  const auto recs = generate_synthetic_corpus(11, 3, {20, 30});
  for (const auto& r : recs) store_recording(dir / "syn01", r);
  const auto back = load_speaker(dir / "syn01");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].utterance_id == recs[i].utterance_id);
    CHECK(back[i].speaker_id == "syn01");
    CHECK(back[i].frames == recs[i].frames);
    CHECK(back[i].frame_count() >= 20);
    CHECK(back[i].audio.samples.size() == recs[i].audio.samples.size());
    CHECK(back[i].warnings.empty());
  }
}

TEST_CASE("malformed ultrasound size and missing fps are rejected") {
  testing::TempDir dir;
  const auto recs = generate_synthetic_corpus(12, 1, {10, 10});
  store_recording(dir / "s", recs[0]);
  const auto base = dir / "s" / recs[0].utterance_id;
  auto with = [&](const char* ext) { return std::filesystem::path(base).concat(ext); };
  const auto ult = with(".ult"), wav = with(".wav"), par = with(".param");
  std::filesystem::resize_file(ult, 64 * 842 * 3 + 7);
  CHECK_THROWS_AS(load_recording(ult, wav, par), MalformedFileError);

  std::ofstream(par) << "scanlines: 64\n";
  CHECK_THROWS_AS(load_recording(ult, wav, par), ConfigurationError);
}

TEST_CASE("duration mismatch becomes a warning and the longer stream is truncated") {
  testing::TempDir dir;
  auto rec = generate_synthetic_corpus(13, 1, {40, 40})[0];
  rec.audio.samples.resize(rec.audio.samples.size() + static_cast<std::size_t>(rec.audio.sample_rate));
  store_recording(dir / "s", rec);
  const auto back = load_speaker(dir / "s")[0];
  CHECK(back.warnings.size() == 1);
  CHECK(back.frame_count() == 40);
  CHECK(back.audio.duration() == doctest::Approx(40 / kUltrasoundFps).epsilon(1e-3));
}

TEST_CASE("split boundary: 11 non-test utterances fail, 12 succeed") {
  CHECK_THROWS_AS(split_utterances("s", ids_up_to(21), 1), InsufficientDataError);
  const auto split = split_utterances("s", ids_up_to(22), 1);
  CHECK(split.test.size() == 10);
  CHECK(split.dev.size() == 1);
  CHECK(split.train.size() == 11);
}

TEST_CASE("split is a deterministic partition with fixed test ids") {
  const auto ids = ids_up_to(60);
  const auto a = split_utterances("s", ids, 9), b = split_utterances("s", ids, 9);
  CHECK(a.train == b.train);
  CHECK(a.dev == b.dev);
  std::set<std::string> seen;
  for (const auto* part : {&a.train, &a.dev, &a.test})
    for (const auto& r : *part) CHECK(seen.insert(r.utterance).second);
  CHECK(seen.size() == ids.size());
  for (const auto& r : a.test) CHECK(test_utterance_ids().contains(r.utterance));
  CHECK(a.dev.size() == 5);
  CHECK_THROWS_AS(split_utterances("s", {"a", "a"}, 1), PreconditionError);
}

TEST_CASE("split manifest round trip") {
  testing::TempDir dir;
  const auto split = split_utterances("s", ids_up_to(30), 4);
  write_split_manifest(dir / "split.jsonl", split);
  const auto back = read_split_manifest(dir / "split.jsonl");
  CHECK(back.train == split.train);
  CHECK(back.dev == split.dev);
  CHECK(back.test == split.test);
}

TEST_CASE("synthetic corpus is seeded and consistent") {
  const auto a = generate_synthetic_corpus(5, 4, {40, 80});
  const auto b = generate_synthetic_corpus(5, 4, {40, 80});
  const auto c = generate_synthetic_corpus(6, 4, {40, 80});
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].frames == b[i].frames);
    CHECK(a[i].audio.samples == b[i].audio.samples);
    CHECK(a[i].frame_count() >= 40);
    CHECK(a[i].frame_count() <= 80);
    CHECK(std::abs(a[i].audio.duration() - a[i].frame_count() / a[i].fps) < 0.05);
    CHECK(peak(a[i].audio.samples) <= 1.0);
  }
  CHECK(a[0].frames != c[0].frames);
}

TEST_CASE("frames file round trip") {
  testing::TempDir dir;
  std::mt19937_64 rng(8);
  std::vector<Matrix> frames{testing::random_matrix(rng, 64, 128), testing::random_matrix(rng, 64, 128)};
  write_frames(dir / "x.frames", frames);
  const auto back = read_frames(dir / "x.frames");
  REQUIRE(back.size() == 2);
  CHECK((back[1] - frames[1]).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("constant payload and off-by-one sizes") {
  testing::TempDir dir;
  const auto ult = dir / "s" / "001_xaud.ult", wav = dir / "s" / "001_xaud.wav", par = dir / "s" / "001_xaud.param";
  std::filesystem::create_directories(dir / "s");
  std::ofstream(ult, std::ios::binary) << std::string(2 * 64 * 842, static_cast<char>(128));
  std::ofstream(par) << "FramesPerSec=81.5\n";
  write_wav(wav, AudioClip{std::vector<double>(541, 0.1), 22050});
  const auto rec = load_recording(ult, wav, par);
  CHECK(rec.frame_count() == 2);
  CHECK((rec.frame(1).array() == 128).all());

  std::ofstream(ult, std::ios::binary | std::ios::trunc) << std::string(64 * 842 + 1, 'x');
  CHECK_THROWS_AS(load_recording(ult, wav, par), MalformedFileError);
}

TEST_CASE("paper-sized speaker split") {
  const auto split = split_utterances("01fi", ids_up_to(204), 3);
  CHECK(split.test.size() == 10);
  CHECK(split.dev.size() >= 19);
  CHECK(split.dev.size() <= 20);
  CHECK(split.train.size() + split.dev.size() == 194);
}

TEST_CASE("property: splits partition any id set with at least 12 non-test ids") {
  std::mt19937_64 rng(17);
  for (int c = 0; c < 50; ++c) {
    const int n = 22 + static_cast<int>(rng() % 200);
    std::vector<std::string> ids = ids_up_to(n);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto split = split_utterances("s", ids, rng());
    std::set<std::string> seen;
    for (const auto* part : {&split.train, &split.dev, &split.test})
      for (const auto& r : *part) CHECK(seen.insert(r.utterance).second);
    CHECK(seen.size() == ids.size());
  }
}
