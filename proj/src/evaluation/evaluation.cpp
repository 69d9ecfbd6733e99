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

#include "uts/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

#include <boost/math/distributions/students_t.hpp>

#include "uts/error.hpp"

namespace uts::evaluation {

using nlohmann::json;

double sentence_mse(const dsp::MelSpectrogram& pred, const dsp::MelSpectrogram& ref) {
  if (pred.values.rows() != ref.values.rows() || pred.values.cols() != ref.values.cols()) {
    throw IncompatibleInputError("mel shapes differ: " + std::to_string(pred.frames()) + "x" +
                                 std::to_string(pred.bins()) + " vs " + std::to_string(ref.frames()) +
                                 "x" + std::to_string(ref.bins()));
  }
  if (!pred.normalized || !ref.normalized) {
    throw PreconditionError("sentence_mse expects standardized mel spectrograms");
  }
  if (pred.values.size() == 0) throw IncompatibleInputError("empty mel spectrogram");
  return (pred.values - ref.values).array().square().mean();
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

namespace {

struct Ranking {
  double rank_sum_a = 0.0;
  double tie_term = 0.0;  // sum over tie groups of t^3 - t
  bool ties = false;
};

Ranking rank(std::span<const double> a, std::span<const double> b) {
  std::vector<std::pair<double, int>> all;
  all.reserve(a.size() + b.size());
  for (double v : a) all.emplace_back(v, 0);
  for (double v : b) all.emplace_back(v, 1);
  std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  Ranking r;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second == 0) r.rank_sum_a += mid;
    }
    if (t > 1) {
      r.ties = true;
      r.tie_term += t * t * t - t;
    }
    i = j;
  }
  return r;
}

// Null distribution of U for sample sizes (n1, n2): counts[u] over all
// C(n1 + n2, n1) equally likely orderings.
std::vector<double> u_distribution(int n1, int n2) {
  // f[i][j] holds the distribution for (i, j); built up by where the largest
  // observation falls.
  std::vector<std::vector<std::vector<double>>> f(n1 + 1, std::vector<std::vector<double>>(n2 + 1));
  for (int i = 0; i <= n1; ++i) {
    for (int j = 0; j <= n2; ++j) {
      auto& cur = f[i][j];
      cur.assign(static_cast<std::size_t>(i * j + 1), 0.0);
      if (i == 0 || j == 0) {
        cur[0] = 1.0;
        continue;
      }
      const auto& top_a = f[i - 1][j];  // largest is from a: beats all j
      for (std::size_t u = 0; u < top_a.size(); ++u) cur[u + j] += top_a[u];
      const auto& top_b = f[i][j - 1];
      for (std::size_t u = 0; u < top_b.size(); ++u) cur[u] += top_b[u];
    }
  }
  return f[n1][n2];
}

double normal_p(double u, double n1, double n2, double tie_term) {
  const double n = n1 + n2;
  const double mu = 0.5 * n1 * n2;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (!(var > 0.0)) return 1.0;
  const double z = std::max(0.0, std::abs(u - mu) - 0.5) / std::sqrt(var);
  return std::clamp(std::erfc(z / std::sqrt(2.0)), 0.0, 1.0);
}

}  // namespace

UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b, UTestMethod method) {
  if (a.empty() || b.empty()) throw PreconditionError("Mann-Whitney U needs two non-empty samples");
  for (auto s : {a, b}) {
    for (double v : s) {
      if (!std::isfinite(v)) throw NumericInputError("Mann-Whitney U input contains a non-finite value");
    }
  }
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  const Ranking r = rank(a, b);
  UTestResult out;
  out.u = r.rank_sum_a - n1 * (n1 + 1.0) / 2.0;

  bool exact = false;
  switch (method) {
    case UTestMethod::kAuto:
      exact = !r.ties && a.size() + b.size() <= static_cast<std::size_t>(kExactLimit);
      break;
    case UTestMethod::kExact:
      if (r.ties) throw PreconditionError("exact Mann-Whitney U requires untied samples");
      exact = true;
      break;
    case UTestMethod::kNormal:
      break;
  }
  out.exact = exact;
  if (!exact) {
    out.p = normal_p(out.u, n1, n2, r.tie_term);
    return out;
  }
  const auto counts = u_distribution(static_cast<int>(a.size()), static_cast<int>(b.size()));
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  const auto u = static_cast<std::size_t>(std::lround(out.u));
  const double lower = std::accumulate(counts.begin(), counts.begin() + u + 1, 0.0);
  const double upper = std::accumulate(counts.begin() + u, counts.end(), 0.0);
  out.p = std::clamp(2.0 * std::min(lower, upper) / total, 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// MUSHRA statistics

MushraStats mushra_stats(std::span<const RatingCell> cells) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> scores;
  for (const auto& c : cells) {
    if (!std::isfinite(c.score) || c.score < 0.0 || c.score > 100.0) {
      throw ValidationError("rating out of range [0, 100] for system " + c.system);
    }
    auto& s = scores[c.system];
    if (s.empty()) order.push_back(c.system);
    s.push_back(c.score);
  }
  MushraStats out;
  for (const auto& name : order) {
    const auto& s = scores[name];
    SystemSummary sum;
    sum.system = name;
    sum.n = s.size();
    const double n = static_cast<double>(s.size());
    sum.mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
    if (s.size() >= 2) {
      double ss = 0.0;
      for (double v : s) ss += (v - sum.mean) * (v - sum.mean);
      sum.sd = std::sqrt(ss / (n - 1.0));
      const boost::math::students_t_distribution<double> t(n - 1.0);
      sum.ci_half_width = boost::math::quantile(t, 0.975) * sum.sd / std::sqrt(n);
    }
    out.systems.push_back(sum);
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const auto res = mann_whitney_u(scores[order[i]], scores[order[j]]);
      out.pairwise.push_back({order[i], order[j], res.u, res.p});
    }
  }
  return out;
}

MushraReport mushra_report(std::span<const RatingCell> cells) {
  if (cells.empty()) throw EmptyReportError("no ratings recorded");
  MushraReport report;
  report.overall = mushra_stats(cells);
  std::map<std::string, std::vector<RatingCell>> by_speaker;
  for (const auto& c : cells) by_speaker[c.speaker].push_back(c);
  for (const auto& [speaker, subset] : by_speaker) report.per_speaker[speaker] = mushra_stats(subset);
  return report;
}

json to_json(const MushraStats& stats) {
  json systems = json::array();
  for (const auto& s : stats.systems) {
    json row{{"system", s.system}, {"n", s.n}, {"mean", s.mean}, {"sd", s.sd}};
    if (s.ci_half_width) {
      row["ci_half_width"] = *s.ci_half_width;
      row["ci"] = {s.mean - *s.ci_half_width, s.mean + *s.ci_half_width};
    } else {
      row["ci_half_width"] = nullptr;
      row["ci"] = nullptr;
    }
    systems.push_back(row);
  }
  json pairs = json::array();
  for (const auto& p : stats.pairwise) {
    pairs.push_back({{"first", p.first}, {"second", p.second}, {"u", p.u}, {"p", p.p}});
  }
  return {{"systems", systems}, {"pairwise", pairs}};
}

json to_json(const MushraReport& report) {
  json speakers = json::object();
  for (const auto& [name, stats] : report.per_speaker) speakers[name] = to_json(stats);
  return {{"overall", to_json(report.overall)},
          {"per_speaker", speakers},
          {"pooling", "listener x utterance cells pooled per system; no listener screening"},
          {"interval", "mean +/- t(0.975, n-1) * s / sqrt(n)"}};
}

void write_mushra_svg(const std::filesystem::path& path, const MushraReport& report) {
  std::vector<std::pair<std::string, const MushraStats*>> panels;
  for (const auto& [name, stats] : report.per_speaker) panels.emplace_back(name, &stats);
  panels.emplace_back("average", &report.overall);

  constexpr int kPanelW = 320, kPanelH = 240, kCols = 3, kMargin = 40;
  const int rows = (static_cast<int>(panels.size()) + kCols - 1) / kCols;
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kCols * kPanelW << "\" height=\""
     << rows * kPanelH << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const int x0 = static_cast<int>(p % kCols) * kPanelW, y0 = static_cast<int>(p / kCols) * kPanelH;
    const double plot_h = kPanelH - 2 * kMargin, plot_w = kPanelW - 2 * kMargin;
    const double base = y0 + kMargin + plot_h;
    const auto y_of = [&](double v) { return base - plot_h * std::clamp(v, 0.0, 100.0) / 100.0; };
    os << "<text x=\"" << x0 + kPanelW / 2 << "\" y=\"" << y0 + 20 << "\" text-anchor=\"middle\">"
       << panels[p].first << "</text>\n";
    os << "<line x1=\"" << x0 + kMargin << "\" y1=\"" << base << "\" x2=\"" << x0 + kMargin + plot_w
       << "\" y2=\"" << base << "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 100; tick += 20) {
      os << "<text x=\"" << x0 + kMargin - 4 << "\" y=\"" << y_of(tick) + 3
         << "\" text-anchor=\"end\">" << tick << "</text>\n";
    }
    const auto& systems = panels[p].second->systems;
    const double slot = plot_w / std::max<std::size_t>(1, systems.size());
    for (std::size_t i = 0; i < systems.size(); ++i) {
      const auto& s = systems[i];
      const double cx = x0 + kMargin + slot * (static_cast<double>(i) + 0.5);
      os << "<rect x=\"" << cx - slot * 0.35 << "\" y=\"" << y_of(s.mean) << "\" width=\"" << slot * 0.7
         << "\" height=\"" << base - y_of(s.mean) << "\" fill=\"#8fa8c8\"/>\n";
      if (s.ci_half_width) {
        const double lo = y_of(s.mean - *s.ci_half_width), hi = y_of(s.mean + *s.ci_half_width);
        os << "<line x1=\"" << cx << "\" y1=\"" << lo << "\" x2=\"" << cx << "\" y2=\"" << hi
           << "\" stroke=\"black\"/>\n";
        for (double y : {lo, hi}) {
          os << "<line x1=\"" << cx - 4 << "\" y1=\"" << y << "\" x2=\"" << cx + 4 << "\" y2=\"" << y
             << "\" stroke=\"black\"/>\n";
        }
      }
      os << "<text x=\"" << cx << "\" y=\"" << base + 12 << "\" text-anchor=\"middle\">" << s.system
         << "</text>\n";
    }
  }
  os << "</svg>\n";
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << os.str();
}

// ---------------------------------------------------------------------------
// Objective report

const SystemScores& SpeakerScores::at(const std::string& system) const {
  for (const auto& s : systems) {
    if (s.system == system) return s;
  }
  throw NotFoundError("no system " + system + " for speaker " + speaker);
}

const SpeakerScores& EvaluationReport::at(const std::string& speaker) const {
  for (const auto& s : speakers) {
    if (s.speaker == speaker) return s;
  }
  throw NotFoundError("no speaker " + speaker + " in report");
}

std::string display_name(const std::string& system) {
  if (system == "baseline") return "Baseline";
  if (system == "conformer") return "Conformer Base";
  if (system == "conformer-bilstm") return "Conformer with bi-LSTM";
  return system;
}

namespace {

using SentenceKey = std::pair<std::string, std::string>;

SystemScores empty_row(const std::string& system) {
  SystemScores row;
  row.system = system;
  return row;
}

SystemScores& find_row(EvaluationReport& report, const std::string& speaker, const std::string& system) {
  return const_cast<SystemScores&>(std::as_const(report).at(speaker).at(system));
}

double mean_of(const std::vector<SentenceScore>& s, double SentenceScore::*field) {
  double sum = 0.0;
  for (const auto& x : s) sum += x.*field;
  return s.empty() ? 0.0 : sum / static_cast<double>(s.size());
}

std::vector<double> column(const std::vector<SentenceScore>& s, double SentenceScore::*field) {
  std::vector<double> out;
  for (const auto& x : s) out.push_back(x.*field);
  return out;
}

void fill_tests(EvaluationReport& report) {
  for (auto& sp : report.speakers) {
    const auto& base = sp.at(report.baseline);
    const auto base_mse = column(base.sentences, &SentenceScore::mse);
    const auto base_mcd = column(base.sentences, &SentenceScore::mcd);
    for (auto& sys : sp.systems) {
      sys.mean_mse = mean_of(sys.sentences, &SentenceScore::mse);
      sys.mean_mcd = mean_of(sys.sentences, &SentenceScore::mcd);
      if (sys.system == report.baseline) continue;
      sys.mse_test = mann_whitney_u(column(sys.sentences, &SentenceScore::mse), base_mse);
      sys.mcd_test = mann_whitney_u(column(sys.sentences, &SentenceScore::mcd), base_mcd);
    }
  }
}

}  // namespace

EvaluationReport build_report(std::span<const SystemOutputs> systems,
                              std::span<const ReferenceSentence> references,
                              const std::string& baseline) {
  if (references.empty()) throw IncompatibleInputError("no reference sentences");
  std::map<SentenceKey, const ReferenceSentence*> refs;
  std::vector<std::string> speakers;
  for (const auto& r : references) {
    if (!refs.emplace(SentenceKey{r.speaker, r.utterance}, &r).second) {
      throw IncompatibleInputError("duplicate reference " + r.speaker + "/" + r.utterance);
    }
    if (std::find(speakers.begin(), speakers.end(), r.speaker) == speakers.end()) {
      speakers.push_back(r.speaker);
    }
  }

  EvaluationReport report;
  report.baseline = baseline;
  std::vector<const SystemOutputs*> ordered;
  for (const auto& s : systems) {
    if (s.system == baseline) ordered.insert(ordered.begin(), &s);
    else ordered.push_back(&s);
  }
  if (ordered.empty() || ordered.front()->system != baseline) {
    throw IncompatibleInputError("baseline system '" + baseline + "' is missing");
  }
  std::set<std::string> seen;
  for (const auto* s : ordered) {
    if (!seen.insert(s->system).second) throw IncompatibleInputError("duplicate system " + s->system);
    report.systems.push_back(s->system);
  }

  for (const auto& speaker : speakers) {
    SpeakerScores sp;
    sp.speaker = speaker;
    for (const auto* s : ordered) sp.systems.push_back(empty_row(s->system));
    report.speakers.push_back(std::move(sp));
  }

  for (std::size_t si = 0; si < ordered.size(); ++si) {
    const auto& sys = *ordered[si];
    std::map<SentenceKey, const SentenceOutput*> outputs;
    for (const auto& o : sys.sentences) {
      if (!refs.contains({o.speaker, o.utterance})) {
        throw IncompatibleInputError(sys.system + " has no reference for " + o.speaker + "/" + o.utterance);
      }
      if (!outputs.emplace(SentenceKey{o.speaker, o.utterance}, &o).second) {
        throw IncompatibleInputError(sys.system + " repeats " + o.speaker + "/" + o.utterance);
      }
    }
    if (outputs.size() != refs.size()) {
      throw IncompatibleInputError(sys.system + " does not cover every test sentence");
    }
    for (const auto& r : references) {
      const auto& out = *outputs.at({r.speaker, r.utterance});
      SentenceScore score{r.utterance, sentence_mse(out.predicted, r.mel), dsp::mcd(r.audio, out.audio)};
      for (auto& sp : report.speakers) {
        if (sp.speaker == r.speaker) sp.systems[si].sentences.push_back(score);
      }
    }
  }
  fill_tests(report);
  return report;
}

namespace {

std::string fixed3(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

void format_table(std::ostringstream& os, const EvaluationReport& report, const std::string& title,
                  double SystemScores::*mean, std::optional<UTestResult> SystemScores::*test) {
  constexpr std::size_t kLabel = 24, kCell = 13;
  os << title << "\n";
  std::string header = pad("Model", kLabel);
  for (const auto& sp : report.speakers) header += " | " + pad(sp.speaker, kCell);
  const std::string rule(header.size(), '-');
  os << rule << "\n" << header << "\n" << rule << "\n";
  for (const auto& name : report.systems) {
    std::string line = pad(display_name(name), kLabel);
    std::string p_line = pad("", kLabel);
    for (const auto& sp : report.speakers) {
      const auto& s = sp.at(name);
      line += " | " + pad(fixed3(s.*mean), kCell);
      p_line += " | " + pad((s.*test) ? "(p = " + fixed3((s.*test)->p) + ")" : "", kCell);
    }
    os << line << "\n";
    if (name != report.baseline) os << p_line << "\n";
  }
  os << rule << "\n";
}

}  // namespace

std::string format_tables(const EvaluationReport& report) {
  std::ostringstream os;
  format_table(os, report, "Table 1. Mean squared error on the test set per speaker",
               &SystemScores::mean_mse, &SystemScores::mse_test);
  os << "\n";
  format_table(os, report, "Table 2. Mel-cepstral distortion (dB) on the test set per speaker",
               &SystemScores::mean_mcd, &SystemScores::mcd_test);
  return os.str();
}

std::string to_jsonl(const EvaluationReport& report) {
  std::ostringstream os;
  json speakers = json::array();
  for (const auto& sp : report.speakers) speakers.push_back(sp.speaker);
  os << json{{"record", "meta"},
             {"baseline", report.baseline},
             {"systems", report.systems},
             {"speakers", speakers},
             {"mse", "mean squared error of standardized log-mels"},
             {"mcd", "dB, c1..c12, positional frame pairing"},
             {"test", "two-sided Mann-Whitney U against the baseline"}}
            .dump()
     << "\n";
  for (const auto& sp : report.speakers) {
    for (const auto& s : sp.systems) {
      for (const auto& [table, mean, test] :
           {std::tuple{"mse", s.mean_mse, s.mse_test}, std::tuple{"mcd", s.mean_mcd, s.mcd_test}}) {
        json cell{{"record", "cell"}, {"table", table},   {"speaker", sp.speaker},
                  {"system", s.system}, {"mean", mean},   {"n", s.sentences.size()}};
        if (test) {
          cell["u"] = test->u;
          cell["p"] = test->p;
          cell["exact"] = test->exact;
        } else {
          cell["p"] = nullptr;
        }
        os << cell.dump() << "\n";
      }
    }
    for (const auto& s : sp.systems) {
      for (const auto& x : s.sentences) {
        os << json{{"record", "sentence"}, {"speaker", sp.speaker}, {"system", s.system},
                   {"utterance", x.utterance}, {"mse", x.mse},       {"mcd", x.mcd}}
                  .dump()
           << "\n";
      }
    }
  }
  return os.str();
}

EvaluationReport from_jsonl(const std::string& text) {
  EvaluationReport report;
  std::istringstream is(text);
  std::string line;
  bool have_meta = false;
  std::vector<json> cells;
  try {
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string kind = j.at("record");
      if (kind == "meta") {
        report.baseline = j.at("baseline");
        report.systems = j.at("systems").get<std::vector<std::string>>();
        for (const auto& sp : j.at("speakers")) {
          SpeakerScores s;
          s.speaker = sp;
          for (const auto& name : report.systems) s.systems.push_back(empty_row(name));
          report.speakers.push_back(std::move(s));
        }
        have_meta = true;
      } else if (kind == "sentence") {
        if (!have_meta) throw MalformedFileError("sentence record before meta record");
        auto& sys = find_row(report, j.at("speaker"), j.at("system"));
        sys.sentences.push_back({j.at("utterance"), j.at("mse"), j.at("mcd")});
      } else if (kind == "cell") {
        cells.push_back(j);
      }
    }
  } catch (const json::exception& e) {
    throw MalformedFileError(std::string("malformed report line: ") + e.what());
  }
  if (!have_meta) throw MalformedFileError("report has no meta record");
  for (auto& sp : report.speakers) {
    for (auto& s : sp.systems) {
      s.mean_mse = mean_of(s.sentences, &SentenceScore::mse);
      s.mean_mcd = mean_of(s.sentences, &SentenceScore::mcd);
    }
  }
  for (const auto& c : cells) {
    if (c.at("p").is_null()) continue;
    auto& sys = find_row(report, c.at("speaker"), c.at("system"));
    const UTestResult r{c.at("u"), c.at("p"), c.value("exact", false)};
    (c.at("table") == "mse" ? sys.mse_test : sys.mcd_test) = r;
  }
  return report;
}

}  // namespace uts::evaluation
