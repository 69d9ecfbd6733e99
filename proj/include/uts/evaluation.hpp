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

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uts/audio.hpp"
#include "uts/dsp.hpp"

namespace uts::evaluation {

// Mean over all T x bins entries of (pred - ref)^2. Both inputs must be
// standardized with the same statistics.
double sentence_mse(const dsp::MelSpectrogram& pred, const dsp::MelSpectrogram& ref);

// ---------------------------------------------------------------------------
// Mann-Whitney U

enum class UTestMethod { kAuto, kExact, kNormal };

struct UTestResult {
  double u = 0.0;  // statistic of the first sample
  double p = 1.0;  // two-sided
  bool exact = false;
};

// U from mid-ranks. kAuto enumerates the null distribution when
// n1 + n2 <= 20 and there are no ties, otherwise uses the normal
// approximation with tie and continuity corrections.
UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                           UTestMethod method = UTestMethod::kAuto);

inline constexpr int kExactLimit = 20;

// ---------------------------------------------------------------------------
// MUSHRA statistics

struct RatingCell {
  std::string listener;
  std::string speaker;
  std::string utterance;
  std::string system;
  double score = 0.0;
};

struct SystemSummary {
  std::string system;
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  // t_{0.975, n-1} * sd / sqrt(n); absent for n < 2.
  std::optional<double> ci_half_width;
};

struct PairwiseTest {
  std::string first, second;
  double u = 0.0;
  double p = 1.0;
};

struct MushraStats {
  std::vector<SystemSummary> systems;  // order of first appearance
  std::vector<PairwiseTest> pairwise;
};

// Pools all (listener, utterance) cells per system.
MushraStats mushra_stats(std::span<const RatingCell> cells);

struct MushraReport {
  MushraStats overall;
  std::map<std::string, MushraStats> per_speaker;
};

MushraReport mushra_report(std::span<const RatingCell> cells);

nlohmann::json to_json(const MushraStats& stats);
nlohmann::json to_json(const MushraReport& report);

// Bar chart of per-system means with 95% intervals, one panel per speaker
// plus the pooled panel.
void write_mushra_svg(const std::filesystem::path& path, const MushraReport& report);

// ---------------------------------------------------------------------------
// Objective report

struct SentenceOutput {
  std::string speaker;
  std::string utterance;
  dsp::MelSpectrogram predicted;  // standardized
  AudioClip audio;                // vocoded prediction
};

struct SystemOutputs {
  std::string system;
  std::vector<SentenceOutput> sentences;
};

struct ReferenceSentence {
  std::string speaker;
  std::string utterance;
  dsp::MelSpectrogram mel;  // standardized with the predicted mels' statistics
  AudioClip audio;
};

struct SentenceScore {
  std::string utterance;
  double mse = 0.0;
  double mcd = 0.0;
};

struct SystemScores {
  std::string system;
  std::vector<SentenceScore> sentences;
  double mean_mse = 0.0;
  double mean_mcd = 0.0;
  // Against the baseline row; absent on the baseline itself.
  std::optional<UTestResult> mse_test, mcd_test;
};

struct SpeakerScores {
  std::string speaker;
  std::vector<SystemScores> systems;  // same order as EvaluationReport::systems

  const SystemScores& at(const std::string& system) const;
};

struct EvaluationReport {
  std::string baseline;
  std::vector<std::string> systems;  // row order, baseline first
  std::vector<SpeakerScores> speakers;

  const SpeakerScores& at(const std::string& speaker) const;
};

// Table row label for a system name ("baseline" -> "Baseline", ...).
std::string display_name(const std::string& system);

EvaluationReport build_report(std::span<const SystemOutputs> systems,
                              std::span<const ReferenceSentence> references,
                              const std::string& baseline);

// Two tables (MSE, MCD): one row per system, one column per speaker, with
// "(p = x)" under every non-baseline mean.
std::string format_tables(const EvaluationReport& report);

// Line-delimited records: one "meta" line, one "cell" line per
// (table, speaker, system), one "sentence" line per scored sentence.
std::string to_jsonl(const EvaluationReport& report);
EvaluationReport from_jsonl(const std::string& text);

}  // namespace uts::evaluation
