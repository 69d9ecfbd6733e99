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
#include <algorithm>
#include <random>

#include "support/support.hpp"
#include "uts/error.hpp"
#include "uts/evaluation.hpp"

using namespace uts;
using namespace uts::evaluation;

namespace {

dsp::MelSpectrogram standardized(Matrix values) {
  dsp::MelSpectrogram m;
  m.values = std::move(values);
  m.normalized = true;
  m.stats = dsp::MelStats{Eigen::RowVectorXd::Zero(m.values.cols()), Eigen::RowVectorXd::Ones(m.values.cols())};
  return m;
}

std::vector<double> draw(std::mt19937_64& rng, int n, double shift, bool integers) {
  std::normal_distribution<double> nd(shift, 1.0);
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(integers ? std::round(nd(rng) * 2) : nd(rng));
  return v;
}

struct Fixture {
  std::vector<ReferenceSentence> refs;
  std::vector<SystemOutputs> systems;
};

Fixture fixture() {
  Fixture f;
  std::mt19937_64 rng(21);
  for (const char* spk : {"spkA", "spkB"}) {
    for (int u = 0; u < 4; ++u) {
      ReferenceSentence r;
      r.speaker = spk;
      r.utterance = "u" + std::to_string(u);
      r.audio = testing::speech_like_audio(100 + u + (spk[3] == 'B' ? 50 : 0), 0.3);
      r.mel = standardized(testing::random_matrix(rng, 20, 80));
      f.refs.push_back(r);
    }
  }
  for (const auto& [name, noise] : std::vector<std::pair<std::string, double>>{{"conformer", 0.3}, {"baseline", 1.0}}) {
    SystemOutputs s;
    s.system = name;
    for (const auto& r : f.refs) {
      SentenceOutput o;
      o.speaker = r.speaker;
      o.utterance = r.utterance;
      o.predicted = standardized(r.mel.values + testing::random_matrix(rng, 20, 80, noise));
      o.audio = dsp::add_white_noise_anchor(r.audio, 0.02 * noise, 3);
      s.sentences.push_back(o);
    }
    f.systems.push_back(s);
  }
  return f;
}

}  // namespace

TEST_CASE("sentence_mse examples and preconditions") {
  CHECK(sentence_mse(standardized(Matrix::Zero(4, 80)), standardized(Matrix::Ones(4, 80))) == 1.0);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Matrix a = testing::random_matrix(rng, 7, 80), b = testing::random_matrix(rng, 7, 80);
    CHECK(std::abs(sentence_mse(standardized(a), standardized(b)) - testing::mse_double_loop(a, b)) < 1e-12);
  }
  CHECK_THROWS_AS(sentence_mse(standardized(Matrix::Zero(4, 80)), standardized(Matrix::Zero(5, 80))),
                  IncompatibleInputError);
  dsp::MelSpectrogram raw;
  raw.values = Matrix::Zero(4, 80);
  CHECK_THROWS_AS(sentence_mse(raw, standardized(Matrix::Zero(4, 80))), PreconditionError);
}

TEST_CASE("Mann-Whitney U reference examples") {
  const std::vector<double> a{1, 2}, b{3, 4};
  auto r = mann_whitney_u(a, b);
  CHECK(r.u == 0.0);
  CHECK(r.exact);
  CHECK(r.p == doctest::Approx(1.0 / 3.0));

  const std::vector<double> c{1, 2, 3}, d{4, 5, 6};
  CHECK(mann_whitney_u(c, d).p == doctest::Approx(0.1));

  const std::vector<double> fives{5, 5, 5};
  r = mann_whitney_u(fives, fives);
  CHECK(r.u == 4.5);
  CHECK(r.p == 1.0);

  const std::vector<double> same{2, 2, 2}, same2{2, 2};
  r = mann_whitney_u(same, same2);
  CHECK(r.p == 1.0);
  CHECK_FALSE(r.exact);
  CHECK_THROWS_AS(mann_whitney_u(same, same2, UTestMethod::kExact), PreconditionError);
  CHECK_THROWS_AS(mann_whitney_u(std::vector<double>{}, d), PreconditionError);
}

TEST_CASE("U + U' = n1 n2 and U matches pair counting") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> size(1, 15);
  for (int i = 0; i < 300; ++i) {
    const auto a = draw(rng, size(rng), 0.0, i % 2 == 0), b = draw(rng, size(rng), 0.3, i % 2 == 0);
    const double u = mann_whitney_u(a, b).u, v = mann_whitney_u(b, a).u;
    CHECK(u + v == doctest::Approx(static_cast<double>(a.size() * b.size())));
    CHECK(u == doctest::Approx(testing::u_by_pair_counting(a, b)));
    CHECK(mann_whitney_u(a, b).p == doctest::Approx(mann_whitney_u(b, a).p).epsilon(1e-12));
  }
}

TEST_CASE("U is invariant under strictly increasing transforms") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    auto a = draw(rng, 6, 0.0, false), b = draw(rng, 8, 0.5, false);
    const auto before = mann_whitney_u(a, b);
    for (auto* v : {&a, &b})
      for (double& x : *v) x = std::exp(x) * 3.0 + 1.0;
    const auto after = mann_whitney_u(a, b);
    CHECK(after.u == before.u);
    CHECK(after.p == before.p);
  }
}

TEST_CASE("exact p agrees with subset enumeration and approximately with the normal tail") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> size(1, 5);
  for (int i = 0; i < 200; ++i) {
    const auto a = draw(rng, size(rng), 0.0, false), b = draw(rng, size(rng), 0.4, false);
    CHECK(mann_whitney_u(a, b, UTestMethod::kExact).p ==
          doctest::Approx(testing::u_exact_p_by_enumeration(a, b)).epsilon(1e-12));
  }
  for (int i = 0; i < 50; ++i) {
    const auto a = draw(rng, 10, 0.0, false), b = draw(rng, 10, 0.5, false);
    CHECK(std::abs(mann_whitney_u(a, b, UTestMethod::kExact).p - mann_whitney_u(a, b, UTestMethod::kNormal).p) <
          0.05);
  }
}

TEST_CASE("MUSHRA summary statistics") {
  std::vector<RatingCell> cells;
  for (double s : {40.0, 50.0, 60.0}) cells.push_back({"l1", "spkA", "u1", "sysA", s});
  for (double s : {90.0, 95.0, 100.0}) cells.push_back({"l1", "spkB", "u2", "sysB", s});
  cells.push_back({"l1", "spkA", "u1", "solo", 10.0});
  const auto stats = mushra_stats(cells);
  REQUIRE(stats.systems.size() == 3);
  CHECK(stats.systems[0].system == "sysA");
  CHECK(stats.systems[0].mean == 50.0);
  CHECK(stats.systems[0].sd == doctest::Approx(10.0));
  REQUIRE(stats.systems[0].ci_half_width);
  CHECK(*stats.systems[0].ci_half_width == doctest::Approx(24.84).epsilon(1e-3));
  CHECK_FALSE(stats.systems[2].ci_half_width);
  CHECK(stats.pairwise.size() == 3);

  const auto report = mushra_report(cells);
  CHECK(report.per_speaker.size() == 2);
  CHECK(report.per_speaker.at("spkB").systems.size() == 1);
  const auto j = to_json(report);
  CHECK(j.contains("overall"));
  CHECK(j["per_speaker"].contains("spkA"));

  testing::TempDir dir;
  write_mushra_svg(dir / "m.svg", report);
  std::ifstream in(dir / "m.svg");
  std::string first;
  std::getline(in, first);
  CHECK(first.find("<svg") != std::string::npos);

  cells.push_back({"l1", "spkA", "u1", "sysA", 101.0});
  CHECK_THROWS_AS(mushra_stats(cells), ValidationError);
  CHECK_THROWS_AS(mushra_report(std::vector<RatingCell>{}), EmptyReportError);
}

TEST_CASE("objective report: ordering, means and tests") {
  const auto f = fixture();
  const auto report = build_report(f.systems, f.refs, "baseline");
  REQUIRE(report.systems.size() == 2);
  CHECK(report.systems[0] == "baseline");
  REQUIRE(report.speakers.size() == 2);
  for (const auto& spk : report.speakers) {
    const auto& base = spk.at("baseline");
    const auto& conf = spk.at("conformer");
    CHECK_FALSE(base.mse_test);
    REQUIRE(conf.mse_test);
    REQUIRE(conf.mcd_test);
    double sum = 0;
    for (const auto& s : conf.sentences) sum += s.mse;
    CHECK(conf.mean_mse == doctest::Approx(sum / conf.sentences.size()).epsilon(1e-12));
    CHECK(conf.mean_mse < base.mean_mse);
    CHECK(std::isfinite(conf.mean_mcd));
    CHECK(conf.mse_test->p <= 1.0);
  }
  const auto tables = format_tables(report);
  CHECK(tables.find("Table 1. Mean squared error on the test set per speaker") != std::string::npos);
  CHECK(tables.find("Table 2. Mel-cepstral distortion") != std::string::npos);
  CHECK(tables.find("Conformer Base") != std::string::npos);
  CHECK(tables.find("(p = ") != std::string::npos);
}

TEST_CASE("objective report rejects incomplete systems and unknown baselines") {
  auto f = fixture();
  CHECK_THROWS_AS(build_report(f.systems, f.refs, "missing"), IncompatibleInputError);
  f.systems[0].sentences.pop_back();
  CHECK_THROWS_AS(build_report(f.systems, f.refs, "baseline"), IncompatibleInputError);
}

TEST_CASE("objective report JSONL round trip") {
  const auto f = fixture();
  const auto report = build_report(f.systems, f.refs, "baseline");
  const auto back = from_jsonl(to_jsonl(report));
  CHECK(back.baseline == report.baseline);
  CHECK(back.systems == report.systems);
  REQUIRE(back.speakers.size() == report.speakers.size());
  for (std::size_t i = 0; i < back.speakers.size(); ++i) {
    for (const auto& name : report.systems) {
      const auto& a = report.speakers[i].at(name);
      const auto& b = back.speakers[i].at(name);
      CHECK(b.mean_mse == doctest::Approx(a.mean_mse).epsilon(1e-12));
      CHECK(b.mean_mcd == doctest::Approx(a.mean_mcd).epsilon(1e-12));
      CHECK(b.mse_test.has_value() == a.mse_test.has_value());
      if (a.mse_test) CHECK(b.mse_test->p == doctest::Approx(a.mse_test->p).epsilon(1e-12));
    }
  }
  CHECK(format_tables(back) == format_tables(report));
}

TEST_CASE("MUSHRA statistics edge cases and invariances") {
  std::vector<RatingCell> cells;
  for (int l = 0; l < 4; ++l) {
    cells.push_back({"l" + std::to_string(l), "s", "u", "perfect", 100.0});
    cells.push_back({"l" + std::to_string(l), "s", "u", "twin1", 30.0 + 10 * l});
    cells.push_back({"l" + std::to_string(l), "s", "u", "twin2", 30.0 + 10 * l});
  }
  auto stats = mushra_stats(cells);
  CHECK(stats.systems[0].mean == 100.0);
  CHECK(*stats.systems[0].ci_half_width == 0.0);
  for (const auto& t : stats.pairwise)
    if ((t.first == "twin1" && t.second == "twin2") || (t.first == "twin2" && t.second == "twin1")) CHECK(t.p == 1.0);

  // Listener order does not matter.
  std::mt19937_64 rng(8);
  auto shuffled = cells;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto again = mushra_stats(shuffled);
  for (const auto& s : stats.systems) {
    const auto it = std::find_if(again.systems.begin(), again.systems.end(), [&](const auto& x) { return x.system == s.system; });
    REQUIRE(it != again.systems.end());
    CHECK(it->mean == doctest::Approx(s.mean));
  }

  // Replicating the data k times shrinks the CI roughly as 1/sqrt(k).
  std::vector<RatingCell> base, replicated;
  for (double v : {20.0, 45.0, 60.0, 80.0, 95.0}) base.push_back({"l", "s", "u", "sys", v});
  for (int k = 0; k < 16; ++k) replicated.insert(replicated.end(), base.begin(), base.end());
  const double wide = *mushra_stats(base).systems[0].ci_half_width;
  const double narrow = *mushra_stats(replicated).systems[0].ci_half_width;
  CHECK(narrow < wide / 4.0 * 0.8);
  CHECK(narrow > wide / 4.0 * 0.3);
}
