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

#include "uts/mushra.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "uts/audio.hpp"
#include "uts/error.hpp"

namespace uts::mushra {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json record_to_json(const RatingRecord& r) {
  return {{"type", "rating"},          {"session", r.session_id},
          {"trial", r.trial},          {"scores", r.scores_by_label},
          {"conditions", r.scores_by_condition}, {"timestamp", r.timestamp}};
}

RatingRecord record_from_json(const json& j) {
  RatingRecord r;
  r.session_id = j.at("session");
  r.trial = j.at("trial");
  r.scores_by_label = j.at("scores").get<std::map<std::string, int>>();
  r.scores_by_condition = j.at("conditions").get<std::map<std::string, int>>();
  r.timestamp = j.at("timestamp");
  return r;
}

}  // namespace

std::string slot_label(std::size_t i) {
  std::string out;
  ++i;
  while (i > 0) {
    --i;
    out.insert(out.begin(), static_cast<char>('A' + i % 26));
    i /= 26;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

json Manifest::to_json() const {
  json utts = json::array();
  for (const auto& u : utterances) {
    json conds = json::object();
    for (const auto& [name, path] : u.conditions) conds[name] = path.string();
    utts.push_back({{"speaker", u.speaker},
                    {"utterance", u.utterance},
                    {"reference", u.reference.string()},
                    {"conditions", conds}});
  }
  return {{"seed", seed}, {"conditions", conditions}, {"utterances", utts}};
}

Manifest Manifest::from_json(const json& j, const fs::path& base_dir) {
  const auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  Manifest m;
  try {
    m.seed = j.value("seed", std::uint64_t{0});
    m.conditions = j.at("conditions").get<std::vector<std::string>>();
    for (const auto& u : j.at("utterances")) {
      UtteranceStimuli s;
      s.speaker = u.at("speaker");
      s.utterance = u.at("utterance");
      s.reference = resolve(u.at("reference"));
      for (const auto& [name, path] : u.at("conditions").items()) {
        s.conditions[name] = resolve(path.get<std::string>());
      }
      m.utterances.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void validate_manifest(const Manifest& manifest) {
  const std::set<std::string> conds(manifest.conditions.begin(), manifest.conditions.end());
  if (conds.size() != manifest.conditions.size()) throw ManifestError("duplicate condition names");
  if (!conds.contains(kHiddenReference)) throw ManifestError("conditions must include " + kHiddenReference);
  if (!conds.contains(kAnchor)) throw ManifestError("conditions must include " + kAnchor);
  if (conds.size() < 3) throw ManifestError("need at least two conditions besides the hidden reference");
  if (conds.contains("reference")) throw ManifestError("'reference' is reserved");
  if (manifest.utterances.empty()) throw ManifestError("manifest lists no utterances");

  std::set<std::pair<std::string, std::string>> seen;
  const auto check_audio = [](const fs::path& path, const std::string& what) {
    if (!fs::is_regular_file(path)) throw ManifestError(what + ": missing audio " + path.string());
    try {
      read_wav(path);
    } catch (const Error& e) {
      throw ManifestError(what + ": undecodable audio " + path.string() + " (" + e.what() + ")");
    }
  };
  for (const auto& u : manifest.utterances) {
    const std::string what = u.speaker + "/" + u.utterance;
    if (!seen.emplace(u.speaker, u.utterance).second) throw ManifestError("duplicate utterance " + what);
    for (const auto& c : manifest.conditions) {
      if (!u.conditions.contains(c)) throw ManifestError(what + ": no audio for condition " + c);
    }
    for (const auto& [name, path] : u.conditions) {
      if (!conds.contains(name)) throw ManifestError(what + ": unknown condition " + name);
      check_audio(path, what);
    }
    check_audio(u.reference, what);
  }
}

std::string experiment_id(const Manifest& manifest) { return hex(fnv1a(manifest.to_json().dump())); }

json TrialPayload::to_json() const {
  json conds = json::array();
  for (const auto& c : conditions) conds.push_back({{"label", c.label}, {"audio_url", c.audio_url}});
  return {{"session_id", session_id}, {"index", index},         {"total", total},
          {"reference_url", reference_url}, {"conditions", conds}};
}

// ---------------------------------------------------------------------------
// Service

struct Service::Session {
  std::string id;
  std::string experiment_id;
  json listener;
  std::uint64_t seed = 0;
  std::vector<Trial> trials;
  int served = 0;
  std::map<int, RatingRecord> rated;
};

Service::Service(fs::path data_dir) : data_dir_(std::move(data_dir)) {
  fs::create_directories(data_dir_);
  replay();
  log_fd_ = ::open((data_dir_ / "log.jsonl").c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (log_fd_ < 0) throw Error("cannot open rating log in " + data_dir_.string());
}

Service::~Service() {
  if (log_fd_ >= 0) ::close(log_fd_);
}

void Service::append(const json& record) {
  const std::string line = record.dump() + "\n";
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t n = ::write(log_fd_, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error("write to rating log failed");
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(log_fd_) != 0) throw Error("fsync of rating log failed");
}

void Service::replay() {
  std::ifstream in(data_dir_ / "log.jsonl");
  if (!in) return;
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    json j;
    try {
      j = json::parse(lines[i]);
    } catch (const json::exception&) {
      // A torn final append is dropped; damage elsewhere is fatal.
      if (i + 1 == lines.size()) break;
      throw MalformedFileError("corrupt rating log line " + std::to_string(i + 1));
    }
    try {
      const std::string type = j.at("type");
      if (type == "experiment") {
        Experiment e{j.at("id"), Manifest::from_json(j.at("manifest"))};
        experiments_[e.id] = std::move(e);
      } else if (type == "session") {
        add_session(j.at("experiment"), j.at("listener"), j.at("seed").get<std::uint64_t>(), j.at("id"));
      } else if (type == "served") {
        session(j.at("session")).served = j.at("trial").get<int>() + 1;
      } else if (type == "rating") {
        apply_rating(record_from_json(j));
      }
    } catch (const json::exception& e) {
      throw MalformedFileError("bad rating log record on line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
}

Experiment Service::create_experiment(const Manifest& manifest) {
  validate_manifest(manifest);
  Experiment e{experiment_id(manifest), manifest};
  std::lock_guard lock(mutex_);
  if (auto it = experiments_.find(e.id); it != experiments_.end()) return it->second;
  append({{"type", "experiment"}, {"id", e.id}, {"manifest", manifest.to_json()}});
  experiments_[e.id] = e;
  return e;
}

const Experiment& Service::experiment(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = experiments_.find(id);
  if (it == experiments_.end()) throw NotFoundError("unknown experiment " + id);
  return it->second;
}

std::string Service::add_session(const std::string& experiment_id, const json& listener, std::uint64_t seed,
                                 const std::string& id) {
  const auto it = experiments_.find(experiment_id);
  if (it == experiments_.end()) throw NotFoundError("unknown experiment " + experiment_id);
  const Manifest& m = it->second.manifest;
  auto s = std::make_unique<Session>();
  s->id = id;
  s->experiment_id = experiment_id;
  s->listener = listener;
  s->seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(m.utterances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  for (std::size_t u : order) {
    Trial t;
    t.utterance = u;
    t.condition_order = m.conditions;
    shuffle(t.condition_order, rng);
    s->trials.push_back(std::move(t));
  }
  sessions_[id] = std::move(s);
  return id;
}

std::string Service::create_session(const std::string& experiment_id, const json& listener,
                                    std::optional<std::uint64_t> seed) {
  std::lock_guard lock(mutex_);
  const auto it = experiments_.find(experiment_id);
  if (it == experiments_.end()) throw NotFoundError("unknown experiment " + experiment_id);
  std::size_t ordinal = 0;
  for (const auto& [id, s] : sessions_) ordinal += s->experiment_id == experiment_id;
  const std::uint64_t session_seed = seed.value_or(it->second.manifest.seed + 1 + ordinal);
  const std::string id = hex(fnv1a(experiment_id + "/" + std::to_string(ordinal)));
  const json meta = listener.is_null() ? json::object() : listener;
  add_session(experiment_id, meta, session_seed, id);
  try {
    append({{"type", "session"}, {"id", id}, {"experiment", experiment_id}, {"listener", meta},
            {"seed", session_seed}, {"created", utc_now()}});
  } catch (...) {
    sessions_.erase(id);
    throw;
  }
  return id;
}

Service::Session& Service::session(const std::string& id) {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session " + id);
  return *it->second;
}

const Service::Session& Service::session(const std::string& id) const {
  return const_cast<Service*>(this)->session(id);
}

const Service::Trial& Service::trial_of(const Session& s, int index) const {
  if (index < 0 || index >= s.served) {
    throw NotFoundError("trial " + std::to_string(index) + " has not been served to session " + s.id);
  }
  return s.trials[static_cast<std::size_t>(index)];
}

TrialPayload Service::payload(const Session& s, int index) const {
  const Trial& t = trial_of(s, index);
  TrialPayload p;
  p.session_id = s.id;
  p.index = index;
  p.total = static_cast<int>(s.trials.size());
  const std::string base = "/audio/" + s.id + "/" + std::to_string(index) + "/";
  p.reference_url = base + "reference";
  for (std::size_t i = 0; i < t.condition_order.size(); ++i) {
    p.conditions.push_back({slot_label(i), base + slot_label(i)});
  }
  return p;
}

NextTrial Service::next_trial(const std::string& session_id) {
  std::lock_guard lock(mutex_);
  Session& s = session(session_id);
  NextTrial out;
  if (static_cast<int>(s.rated.size()) < s.served) {
    out.trial = payload(s, s.served - 1);
    return out;
  }
  if (s.served >= static_cast<int>(s.trials.size())) {
    out.completed = true;
    return out;
  }
  append({{"type", "served"}, {"session", s.id}, {"trial", s.served}});
  ++s.served;
  out.trial = payload(s, s.served - 1);
  return out;
}

void Service::apply_rating(const RatingRecord& record) {
  Session& s = session(record.session_id);
  s.rated[record.trial] = record;
}

SubmitResult Service::submit_ratings(const std::string& session_id, int trial_index,
                                     const std::map<std::string, double>& scores) {
  std::lock_guard lock(mutex_);
  Session& s = session(session_id);
  const Trial& t = trial_of(s, trial_index);

  RatingRecord r;
  r.session_id = s.id;
  r.trial = trial_index;
  for (std::size_t i = 0; i < t.condition_order.size(); ++i) {
    const std::string label = slot_label(i);
    const auto it = scores.find(label);
    if (it == scores.end()) throw ValidationError("missing score for condition " + label);
    const double v = it->second;
    if (!std::isfinite(v) || v != std::floor(v)) throw ValidationError("score for " + label + " must be an integer");
    if (v < 0 || v > 100) throw ValidationError("score for " + label + " outside [0, 100]");
    r.scores_by_label[label] = static_cast<int>(v);
    r.scores_by_condition[t.condition_order[i]] = static_cast<int>(v);
  }
  if (scores.size() != t.condition_order.size()) throw ValidationError("scores name unknown conditions");

  SubmitResult out;
  if (const auto it = s.rated.find(trial_index); it != s.rated.end()) {
    if (it->second.scores_by_label != r.scores_by_label) {
      throw ConflictError("trial " + std::to_string(trial_index) + " was already rated differently");
    }
    out.duplicate = true;
    out.record = it->second;
  } else {
    r.timestamp = utc_now();
    append(record_to_json(r));
    apply_rating(r);
    out.record = r;
  }
  out.session_completed = s.rated.size() == s.trials.size();
  return out;
}

std::vector<RatingRecord> Service::ratings(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  std::vector<RatingRecord> out;
  for (const auto& [index, r] : session(session_id).rated) out.push_back(r);
  return out;
}

std::vector<evaluation::RatingCell> Service::rating_cells(const std::string& experiment_id) const {
  std::lock_guard lock(mutex_);
  const auto it = experiments_.find(experiment_id);
  if (it == experiments_.end()) throw NotFoundError("unknown experiment " + experiment_id);
  const Manifest& m = it->second.manifest;
  std::vector<evaluation::RatingCell> cells;
  for (const auto& [id, s] : sessions_) {
    if (s->experiment_id != experiment_id) continue;
    for (const auto& [index, r] : s->rated) {
      const auto& u = m.utterances[s->trials[static_cast<std::size_t>(index)].utterance];
      for (const auto& c : m.conditions) {
        cells.push_back({s->id, u.speaker, u.utterance, c, static_cast<double>(r.scores_by_condition.at(c))});
      }
    }
  }
  return cells;
}

evaluation::MushraReport Service::report(const std::string& experiment_id) const {
  const auto cells = rating_cells(experiment_id);
  if (cells.empty()) throw EmptyReportError("no ratings recorded for experiment " + experiment_id);
  return evaluation::mushra_report(cells);
}

fs::path Service::audio_path(const std::string& session_id, int trial_index, const std::string& label) const {
  std::lock_guard lock(mutex_);
  const Session& s = session(session_id);
  const Trial& t = trial_of(s, trial_index);
  const auto& u = experiments_.at(s.experiment_id).manifest.utterances[t.utterance];
  if (label == "reference") return u.reference;
  for (std::size_t i = 0; i < t.condition_order.size(); ++i) {
    if (slot_label(i) == label) return u.conditions.at(t.condition_order[i]);
  }
  throw NotFoundError("no condition " + label + " in trial " + std::to_string(trial_index));
}

}  // namespace uts::mushra
