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

#include "cli.hpp"

#include <signal.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "uts/error.hpp"
#include "uts/mushra_http.hpp"
#include "uts/pipeline.hpp"

namespace uts::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::map<std::string, std::string> read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  int number = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos || colon == 0) {
      throw ConfigurationError(path.string() + ":" + std::to_string(number) + ": expected 'key: value'");
    }
    out[trim(line.substr(0, colon))] = trim(line.substr(colon + 1));
  }
  return out;
}

std::string config_key_to_flag(const std::string& key) {
  if (key == "vocoder.backend") return "--vocoder";
  std::string flag = key;
  for (char& c : flag) {
    if (c == '.' || c == '_') c = '-';
  }
  return "--" + flag;
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Appends config-file settings for flags the command line leaves unset.
std::vector<std::string> with_config(CLI::App& app, const std::vector<std::string>& args) {
  std::string config_path;
  CLI::App* leaf = &app;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (a.rfind("--config=", 0) == 0) {
      config_path = a.substr(9);
    } else if (!a.empty() && a[0] != '-') {
      if (CLI::App* sub = leaf->get_subcommand_no_throw(a)) leaf = sub;
    }
  }
  if (config_path.empty()) return args;
  const auto given = [&](const std::string& flag) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::vector<std::string> out = args;
  for (const auto& [key, value] : read_config(config_path)) {
    const std::string flag = config_key_to_flag(key);
    CLI::Option* opt = leaf->get_option_no_throw(flag);
    if (!opt || given(flag)) continue;
    if (opt->get_type_size() == 0) {
      out.push_back(flag + "=" + value);
      continue;
    }
    out.push_back(flag);
    std::istringstream is(value);
    for (std::string v; is >> v;) out.push_back(v);
  }
  return out;
}

json option_values(const CLI::App& app) {
  json out = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name.empty()) continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      out[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      out[name] = opt->get_default_str();
    }
  }
  return out;
}

struct RunManifest {
  std::string command;
  const CLI::App* app = nullptr;
  std::vector<std::string> args;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  std::string started = utc_now();

  void write(const fs::path& dir, json extra = json::object()) const {
    fs::create_directories(dir);
    json j{{"tool", "uts"},
           {"version", UTS_VERSION},
           {"command", command},
           {"args", args},
           {"options", option_values(*app)},
           {"started", started},
           {"finished", utc_now()},
           {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    for (auto& [k, v] : extra.items()) j[k] = v;
    std::ofstream out(dir / "run.json", std::ios::trunc);
    if (!out) throw ConfigurationError("cannot write " + (dir / "run.json").string());
    out << j.dump(2) << "\n";
  }
};

std::vector<pipeline::SystemDir> parse_systems(const std::vector<std::string>& specs) {
  std::vector<pipeline::SystemDir> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
      throw ConfigurationError("system must be given as name=directory: " + s);
    }
    out.push_back({s.substr(0, eq), s.substr(eq + 1)});
  }
  return out;
}

std::pair<std::string, int> parse_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ConfigurationError("address must be host:port, got " + addr);
  try {
    const int port = std::stoi(addr.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    return {addr.substr(0, colon), port};
  } catch (const std::logic_error&) {
    throw ConfigurationError("invalid port in address " + addr);
  }
}

// Options bound to the command line.
struct Options {
  // generate-synthetic
  int speakers = 2;
  int utterances = 22;
  int min_frames = 40;
  int max_frames = 80;
  double sample_rate = 22050.0;
  // shared
  fs::path data, out, checkpoint;
  std::uint64_t seed = 0;
  // train
  std::string speaker, model;
  int epochs = 20, batch = 128, micro_batch = 32, patience = 3;
  std::int64_t first_cycle = 100;
  double lr = 1e-4, lr_min = 1e-5, growth = 5.0, decay = 0.9, weight_decay = 0.01;
  bool dev_as_train = false, train_mse = false;
  // synthesize
  std::vector<std::string> utterances_arg;
  std::string split = "test";
  std::string vocoder = "fallback", vocoder_cmd;
  int vocoder_hop = 256, gl_iters = 60;
  double vocoder_sample_rate = 22050.0;
  // evaluate / mushra
  std::vector<std::string> systems;
  std::string baseline;
  double noise_level = 0.0005;
  int per_speaker = 5;
  std::string addr = "127.0.0.1:8080";
  fs::path manifest;
  std::string experiment;
  std::string config;
};

void add_config(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "key: value file; flags on the command line take precedence");
}

int cmd_generate(const Options& o, const RunManifest& run, std::ostream& out) {
  if (o.speakers < 1 || o.utterances < 1) throw ConfigurationError("need at least one speaker and utterance");
  if (o.min_frames < 1 || o.max_frames < o.min_frames) throw ConfigurationError("invalid frame range");
  for (int k = 1; k <= o.speakers; ++k) {
    corpus::SyntheticOptions opts;
    std::ostringstream id;
    id << "syn" << std::setw(2) << std::setfill('0') << k;
    opts.speaker_id = id.str();
    opts.sample_rate = o.sample_rate;
    const auto recs = corpus::generate_synthetic_corpus(o.seed + 7919ull * static_cast<std::uint64_t>(k - 1),
                                                        o.utterances, {o.min_frames, o.max_frames}, opts);
    for (const auto& r : recs) corpus::store_recording(o.out / opts.speaker_id, r);
    out << opts.speaker_id << ": " << recs.size() << " recordings\n";
  }
  run.write(o.out);
  return 0;
}

int cmd_preprocess(const Options& o, const RunManifest& run, std::ostream& out) {
  const auto summary = pipeline::preprocess_corpus(o.data, o.out, o.seed, &out);
  json speakers = json::array();
  for (const auto& s : summary) {
    speakers.push_back({{"speaker", s.speaker}, {"utterances", s.utterances}, {"frames", s.frames},
                        {"train", s.split.train.size()}, {"dev", s.split.dev.size()},
                        {"test", s.split.test.size()}, {"warnings", s.warnings}});
  }
  run.write(o.out, {{"speakers", speakers}});
  return 0;
}

int cmd_train(const Options& o, const RunManifest& run, std::ostream& out, std::ostream& err) {
  pipeline::TrainOptions t;
  t.kind = models::parse_model_kind(o.model);
  t.seed = o.seed;
  t.dev_is_train = o.dev_as_train;
  t.schedule.lr_initial = o.lr;
  t.schedule.lr_min = o.lr_min;
  t.schedule.first_cycle_steps = o.first_cycle;
  t.schedule.cycle_growth = o.growth;
  t.schedule.peak_decay = o.decay;
  t.schedule.validate();
  t.trainer.batch_size = o.batch;
  t.trainer.micro_batch = o.micro_batch;
  t.trainer.max_epochs = o.epochs;
  t.trainer.patience = o.patience;
  t.trainer.weight_decay = o.weight_decay;
  t.trainer.eval_train_mse = o.train_mse;
  t.trainer.validate();
  const auto r = pipeline::train_speaker(o.data, o.speaker, t, o.out, &err);
  out << o.speaker << " " << models::to_string(t.kind) << ": " << r.history.epochs.size() << " epochs, best epoch "
      << r.history.best_epoch << ", dev MSE " << r.history.best_dev_mse << ", train MSE " << r.train_mse << "\n";
  double seconds = 0.0;
  for (const auto& e : r.history.epochs) seconds += e.seconds;
  run.write(o.out, {{"parameters", r.parameters},
                    {"train_frames", r.train_frames},
                    {"dev_frames", r.dev_frames},
                    {"best_epoch", r.history.best_epoch},
                    {"best_dev_mse", r.history.best_dev_mse},
                    {"train_mse", r.train_mse},
                    {"mean_epoch_seconds", seconds / std::max<std::size_t>(1, r.history.epochs.size())}});
  return 0;
}

vocoder::VocoderConfig vocoder_config(const Options& o) {
  vocoder::VocoderConfig c;
  c.backend = vocoder::parse_backend(o.vocoder);
  c.command = o.vocoder_cmd;
  c.hop = o.vocoder_hop;
  c.sample_rate = o.vocoder_sample_rate;
  c.griffin_lim_iterations = o.gl_iters;
  c.seed = o.seed;
  if (c.griffin_lim_iterations < 0) throw ConfigurationError("griffin-lim iterations must be >= 0");
  return c;
}

pipeline::PreparedUtterance resolve_utterance(const Options& o, const std::string& speaker, const std::string& arg) {
  const fs::path path(arg);
  if (path.extension() == ".frames" && fs::exists(path)) {
    const fs::path dir = fs::absolute(path).parent_path();
    return pipeline::load_prepared(dir.parent_path(), dir.filename().string(), path.stem().string());
  }
  if (path.extension() == ".ult" && fs::exists(path)) {
    const fs::path base = fs::path(path).replace_extension();
    auto rec = corpus::load_recording(path, fs::path(base).concat(".wav"), fs::path(base).concat(".param"));
    if (rec.speaker_id.empty()) rec.speaker_id = speaker;
    return pipeline::prepare_utterance(rec);
  }
  if (o.data.empty()) throw ConfigurationError("utterance id " + arg + " needs --data");
  return pipeline::load_prepared(o.data, speaker, arg);
}

int cmd_synthesize(const Options& o, const RunManifest& run, std::ostream& out) {
  auto ckpt = models::load_checkpoint(o.checkpoint);
  const std::string speaker = ckpt.speaker;
  std::vector<std::string> ids = o.utterances_arg;
  if (ids.empty()) {
    if (o.data.empty()) throw ConfigurationError("give --utterance or --data with --split");
    ids = pipeline::split_ids(pipeline::load_split(o.data, speaker), o.split);
  }
  const auto config = vocoder_config(o);
  json written = json::array();
  for (const auto& id : ids) {
    const auto utt = resolve_utterance(o, speaker, id);
    const auto result = pipeline::synthesize_utterance(ckpt, utt, config);
    const std::string who = speaker.empty() ? utt.speaker : speaker;
    pipeline::write_system_output(o.out, who, utt.utterance, result);
    out << who << "/" << utt.utterance << ": " << result.mel.frames() << " frames, " << result.audio.samples.size()
        << " samples\n";
    written.push_back(who + "/" + utt.utterance);
  }
  run.write(o.out, {{"utterances", written}, {"model", models::to_string(ckpt.spec.kind)}});
  return 0;
}

int cmd_evaluate(const Options& o, const RunManifest& run, std::ostream& out) {
  const auto systems = parse_systems(o.systems);
  std::string baseline = o.baseline;
  if (baseline.empty()) {
    baseline = systems.front().name;
    for (const auto& s : systems) {
      if (s.name == "baseline") baseline = s.name;
    }
  }
  const auto report = pipeline::evaluate_systems(systems, o.data, baseline);
  fs::create_directories(o.out);
  const std::string tables = evaluation::format_tables(report);
  std::ofstream(o.out / "report.txt") << tables;
  std::ofstream(o.out / "report.jsonl") << evaluation::to_jsonl(report);
  out << tables;
  run.write(o.out);
  return 0;
}

int cmd_mushra_prepare(const Options& o, const RunManifest& run, std::ostream& out) {
  pipeline::ListeningTestOptions opts;
  opts.per_speaker = o.per_speaker;
  opts.noise_level = o.noise_level;
  opts.seed = o.seed;
  const auto systems = parse_systems(o.systems);
  const auto manifest = pipeline::prepare_listening_test(systems, o.data, opts, o.out);
  out << manifest.utterances.size() << " trials x " << manifest.conditions.size() << " conditions; manifest "
      << (o.out / "manifest.json").string() << " (experiment " << mushra::experiment_id(manifest) << ")\n";
  run.write(o.out, {{"experiment_id", mushra::experiment_id(manifest)}});
  return 0;
}

int cmd_mushra_serve(const Options& o, std::ostream& out) {
  const auto [host, port] = parse_address(o.addr);
  mushra::Service service(o.data);
  if (!o.manifest.empty()) {
    std::ifstream in(o.manifest);
    if (!in) throw ConfigurationError("cannot read manifest " + o.manifest.string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ManifestError(std::string("malformed manifest: ") + e.what());
    }
    const auto e = service.create_experiment(mushra::Manifest::from_json(j, o.manifest.parent_path()));
    out << "experiment " << e.id << "\n";
  }
  mushra::HttpServer server(service);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  std::thread watcher([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  const int bound = port == 0 ? server.bind_to_any_port(host) : port;
  out << "listening on " << host << ":" << bound << std::endl;
  const bool ok = port == 0 ? server.listen_after_bind() : server.listen(host, port);
  pthread_kill(watcher.native_handle(), SIGTERM);
  watcher.join();
  pthread_sigmask(SIG_UNBLOCK, &signals, nullptr);
  if (!ok) throw Error("cannot listen on " + o.addr);
  return 0;
}

int cmd_mushra_report(const Options& o, std::ostream& out) {
  mushra::Service service(o.data);
  const auto report = service.report(o.experiment);
  fs::create_directories(o.out);
  std::ofstream(o.out / "mushra_report.json") << evaluation::to_json(report).dump(2) << "\n";
  evaluation::write_mushra_svg(o.out / "mushra.svg", report);
  for (const auto& s : report.overall.systems) {
    out << s.system << ": mean " << s.mean << " (n = " << s.n << ")";
    if (s.ci_half_width) out << " +/- " << *s.ci_half_width;
    out << "\n";
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ultrasound tongue imaging to speech: preprocessing, training, synthesis and evaluation", "uts"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(UTS_VERSION));
  Options o;

  auto* gen = app.add_subcommand("generate-synthetic", "Write a seeded synthetic corpus (raw recording files)");
  gen->add_option("--out", o.out, "Output corpus directory")->required();
  gen->add_option("--speakers", o.speakers, "Number of speakers");
  gen->add_option("--utterances", o.utterances, "Utterances per speaker (ids 001_xaud, ...)");
  gen->add_option("--min-frames", o.min_frames, "Shortest utterance in frames");
  gen->add_option("--max-frames", o.max_frames, "Longest utterance in frames");
  gen->add_option("--sample-rate", o.sample_rate, "Audio sample rate (Hz)");
  gen->add_option("--seed", o.seed, "Random seed");
  add_config(gen, o);

  auto* pre = app.add_subcommand("preprocess", "Resize frames, extract mels and split each speaker's corpus");
  pre->add_option("--data-dir", o.data, "Corpus root with one directory per speaker")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", o.out, "Output directory")->required();
  pre->add_option("--seed", o.seed, "Seed of the train/dev split");
  add_config(pre, o);

  auto* train = app.add_subcommand("train", "Train one speaker-specific model");
  train->add_option("--speaker", o.speaker, "Speaker id")->required();
  train->add_option("--model", o.model, "baseline | conformer | conformer-bilstm")
      ->required()
      ->check(CLI::IsMember({"baseline", "conformer", "conformer-bilstm"}));
  train->add_option("--data", o.data, "Preprocessed corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", o.out, "Checkpoint directory")->required();
  train->add_option("--seed", o.seed, "Initialisation and shuffling seed");
  train->add_option("--epochs", o.epochs, "Maximum epochs");
  train->add_option("--batch-size", o.batch, "Frames per optimizer step");
  train->add_option("--micro-batch", o.micro_batch, "Frames per gradient-accumulation slice");
  train->add_option("--patience", o.patience, "Early-stopping patience (epochs)");
  train->add_option("--lr", o.lr, "Initial learning rate");
  train->add_option("--lr-min", o.lr_min, "Learning-rate floor");
  train->add_option("--first-cycle", o.first_cycle, "Steps in the first cosine cycle");
  train->add_option("--cycle-growth", o.growth, "Cycle length multiplier");
  train->add_option("--peak-decay", o.decay, "Peak learning-rate decay per cycle");
  train->add_option("--weight-decay", o.weight_decay, "AdamW decoupled weight decay");
  train->add_flag("--dev-as-train", o.dev_as_train, "Monitor early stopping on the training set");
  train->add_flag("--train-mse", o.train_mse, "Log inference-mode training MSE each epoch");
  add_config(train, o);

  auto* synth = app.add_subcommand("synthesize", "Predict mels with a checkpoint and vocode them");
  synth->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  synth->add_option("--utterance", o.utterances_arg,
                    "Utterance id (with --data), preprocessed .frames file or raw .ult recording; repeatable");
  synth->add_option("--data", o.data, "Preprocessed corpus directory");
  synth->add_option("--split", o.split, "Split to synthesize when no --utterance is given")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  synth->add_option("--vocoder", o.vocoder, "external | fallback")->check(CLI::IsMember({"external", "fallback"}));
  synth->add_option("--vocoder-cmd", o.vocoder_cmd, "External vocoder: <cmd> --in mel.bin --out out.wav");
  synth->add_option("--vocoder-hop", o.vocoder_hop, "Native hop of the external vocoder");
  synth->add_option("--vocoder-sample-rate", o.vocoder_sample_rate, "Sample rate of the external vocoder");
  synth->add_option("--griffin-lim-iters", o.gl_iters, "Phase reconstruction iterations (fallback)");
  synth->add_option("--seed", o.seed, "Phase initialisation seed (fallback)");
  synth->add_option("--out", o.out, "Output directory")->required();
  add_config(synth, o);

  auto* eval = app.add_subcommand("evaluate", "MSE / MCD tables with Mann-Whitney U tests against the baseline");
  eval->add_option("--systems", o.systems, "name=directory of synthesize output; repeatable")->required();
  eval->add_option("--reference,--data", o.data, "Preprocessed corpus or a system output directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--baseline", o.baseline, "Baseline system name (default: 'baseline' or the first system)");
  eval->add_option("--out", o.out, "Report directory")->required();
  add_config(eval, o);

  auto* mushra = app.add_subcommand("mushra", "Listening test");
  mushra->require_subcommand(1);
  auto* prep = mushra->add_subcommand("prepare", "Select stimuli, build anchors and write a manifest");
  prep->add_option("--systems", o.systems, "name=directory of synthesize output; repeatable")->required();
  prep->add_option("--data", o.data, "Preprocessed corpus (reference audio)")->required()->check(CLI::ExistingDirectory);
  prep->add_option("--noise-level", o.noise_level, "Anchor white-noise standard deviation");
  prep->add_option("--per-speaker", o.per_speaker, "Utterances per speaker");
  prep->add_option("--seed", o.seed, "Selection, anchor and presentation seed");
  prep->add_option("--out", o.out, "Output directory")->required();
  add_config(prep, o);
  auto* serve = mushra->add_subcommand("serve", "Run the listening-test HTTP service");
  serve->add_option("--addr", o.addr, "host:port (port 0 picks a free port)");
  serve->add_option("--data", o.data, "Service data directory (rating log)")->required();
  serve->add_option("--manifest", o.manifest, "Experiment manifest to register at startup");
  add_config(serve, o);
  auto* rep = mushra->add_subcommand("report", "Statistics and plot from a service data directory");
  rep->add_option("--data", o.data, "Service data directory")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--experiment", o.experiment, "Experiment id")->required();
  rep->add_option("--out", o.out, "Output directory")->required();
  add_config(rep, o);

  std::vector<std::string> effective;
  try {
    effective = with_config(app, args);
    std::vector<std::string> reversed(effective.rbegin(), effective.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const auto manifest_for = [&](const std::string& name, const CLI::App* sub) {
      RunManifest m;
      m.command = name;
      m.app = sub;
      m.args = effective;
      return m;
    };
    if (gen->parsed()) return cmd_generate(o, manifest_for("generate-synthetic", gen), out);
    if (pre->parsed()) return cmd_preprocess(o, manifest_for("preprocess", pre), out);
    if (train->parsed()) return cmd_train(o, manifest_for("train", train), out, err);
    if (synth->parsed()) return cmd_synthesize(o, manifest_for("synthesize", synth), out);
    if (eval->parsed()) return cmd_evaluate(o, manifest_for("evaluate", eval), out);
    if (prep->parsed()) return cmd_mushra_prepare(o, manifest_for("mushra prepare", prep), out);
    if (serve->parsed()) return cmd_mushra_serve(o, out);
    if (rep->parsed()) return cmd_mushra_report(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace uts::cli
