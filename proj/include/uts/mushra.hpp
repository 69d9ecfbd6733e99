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

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uts/evaluation.hpp"

namespace uts::mushra {

inline const std::string kHiddenReference = "hidden_reference";
inline const std::string kAnchor = "anchor";

struct UtteranceStimuli {
  std::string speaker;
  std::string utterance;
  std::filesystem::path reference;
  std::map<std::string, std::filesystem::path> conditions;  // condition -> audio
};

struct Manifest {
  // Rated conditions, including kHiddenReference and kAnchor.
  std::vector<std::string> conditions;
  std::vector<UtteranceStimuli> utterances;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  // Relative audio paths are resolved against base_dir.
  static Manifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

// Checks structure and that every stimulus file exists and decodes.
void validate_manifest(const Manifest& manifest);

// Hex FNV-1a digest of the canonical manifest JSON (which includes the seed).
std::string experiment_id(const Manifest& manifest);

struct Experiment {
  std::string id;
  Manifest manifest;
};

struct TrialCondition {
  std::string label;  // opaque, unique within the trial
  std::string audio_url;
};

struct TrialPayload {
  std::string session_id;
  int index = 0;  // position in the session's trial sequence
  int total = 0;
  std::string reference_url;
  std::vector<TrialCondition> conditions;

  nlohmann::json to_json() const;
};

struct NextTrial {
  bool completed = false;
  std::optional<TrialPayload> trial;
};

struct RatingRecord {
  std::string session_id;
  int trial = 0;
  std::map<std::string, int> scores_by_label;      // as submitted
  std::map<std::string, int> scores_by_condition;  // de-anonymized
  std::string timestamp;                           // UTC, ISO 8601
};

struct SubmitResult {
  bool duplicate = false;
  bool session_completed = false;
  RatingRecord record;
};

// Listening-test state backed by an append-only JSON-lines log in
// data_dir, replayed on construction. All methods are thread-safe.
class Service {
 public:
  explicit Service(std::filesystem::path data_dir);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Idempotent: an identical manifest returns the existing experiment.
  Experiment create_experiment(const Manifest& manifest);
  const Experiment& experiment(const std::string& id) const;

  // Session seed defaults to a value derived from the experiment seed and
  // the session ordinal.
  std::string create_session(const std::string& experiment_id, const nlohmann::json& listener = {},
                             std::optional<std::uint64_t> seed = std::nullopt);

  // Re-serves the served-but-unrated trial if there is one.
  NextTrial next_trial(const std::string& session_id);

  // scores: opaque label -> integer rating in [0, 100], one per condition.
  SubmitResult submit_ratings(const std::string& session_id, int trial_index,
                              const std::map<std::string, double>& scores);

  std::vector<RatingRecord> ratings(const std::string& session_id) const;

  // One cell per rated (session, utterance, condition).
  std::vector<evaluation::RatingCell> rating_cells(const std::string& experiment_id) const;

  evaluation::MushraReport report(const std::string& experiment_id) const;

  // Audio for a served trial; label "reference" is the unrated reference.
  std::filesystem::path audio_path(const std::string& session_id, int trial_index,
                                   const std::string& label) const;

  const std::filesystem::path& data_dir() const { return data_dir_; }

 private:
  struct Session;
  struct Trial {
    std::size_t utterance = 0;
    std::vector<std::string> condition_order;  // index == label position
  };

  void replay();
  void append(const nlohmann::json& record);
  Session& session(const std::string& id);
  const Session& session(const std::string& id) const;
  const Trial& trial_of(const Session& s, int index) const;
  TrialPayload payload(const Session& s, int index) const;
  std::string add_session(const std::string& experiment_id, const nlohmann::json& listener,
                          std::uint64_t seed, const std::string& id);
  void apply_rating(const RatingRecord& record);

  std::filesystem::path data_dir_;
  int log_fd_ = -1;
  mutable std::mutex mutex_;
  std::map<std::string, Experiment> experiments_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
};

// Opaque label for the i-th condition slot of a trial ("A", "B", ...).
std::string slot_label(std::size_t i);

}  // namespace uts::mushra
