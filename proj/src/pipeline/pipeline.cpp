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

#include "uts/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "uts/error.hpp"

namespace uts::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

PreparedUtterance prepare_utterance(const corpus::UltrasoundRecording& recording) {
  PreparedUtterance out;
  out.speaker = recording.speaker_id;
  out.utterance = recording.utterance_id;
  const int n = recording.frame_count();
  if (n < 1) throw InsufficientDataError("recording " + recording.utterance_id + " has no frames");
  out.frames.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) out.frames.push_back(dsp::preprocess_frame(recording.frame(t)));
  out.mel = dsp::extract_mel(recording.audio, recording.fps, n);
  out.audio = recording.audio;
  return out;
}

namespace {

bool has_extension(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) return false;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) return true;
  }
  return false;
}

std::vector<std::string> stems_with(const fs::path& dir, const std::string& ext) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MalformedFileError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw MalformedFileError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigurationError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace

std::vector<std::string> list_speakers(const fs::path& root) {
  if (!fs::is_directory(root)) throw ConfigurationError("not a directory: " + root.string());
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    if (has_extension(e.path(), ".ult") || has_extension(e.path(), ".mel")) {
      out.push_back(e.path().filename().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<PreprocessSummary> preprocess_corpus(const fs::path& data_dir, const fs::path& out_dir,
                                                 std::uint64_t seed, std::ostream* log) {
  const auto speakers = list_speakers(data_dir);
  if (speakers.empty()) throw InsufficientDataError("no speaker directories with recordings in " + data_dir.string());
  std::vector<PreprocessSummary> out;
  for (const auto& speaker : speakers) {
    const auto recordings = corpus::load_speaker(data_dir / speaker);
    PreprocessSummary sum;
    sum.speaker = speaker;
    sum.split = corpus::split_corpus(recordings, seed);
    const fs::path dir = out_dir / speaker;
    fs::create_directories(dir);
    double sample_rate = 0.0, fps = 0.0;
    for (const auto& rec : recordings) {
      for (const auto& w : rec.warnings) sum.warnings.push_back(rec.utterance_id + ": " + w);
      const PreparedUtterance p = prepare_utterance(rec);
      corpus::write_frames(dir / (p.utterance + ".frames"), p.frames);
      dsp::write_mel(dir / (p.utterance + ".mel"), p.mel);
      write_wav(dir / (p.utterance + ".wav"), p.audio);
      sample_rate = rec.audio.sample_rate;
      fps = rec.fps;
      ++sum.utterances;
      sum.frames += static_cast<int>(p.frames.size());
    }
    corpus::write_split_manifest(dir / "split.jsonl", sum.split);
    write_json(dir / "speaker.json", {{"speaker", speaker},
                                      {"sample_rate", sample_rate},
                                      {"fps", fps},
                                      {"hop", dsp::hop_for(sample_rate, fps)},
                                      {"utterances", sum.utterances},
                                      {"frames", sum.frames}});
    if (log) {
      *log << speaker << ": " << sum.utterances << " utterances, " << sum.frames << " frames (train "
           << sum.split.train.size() << ", dev " << sum.split.dev.size() << ", test " << sum.split.test.size()
           << ")\n";
      for (const auto& w : sum.warnings) *log << "  warning: " << w << "\n";
    }
    out.push_back(std::move(sum));
  }
  return out;
}

PreparedUtterance load_prepared(const fs::path& root, const std::string& speaker, const std::string& utterance) {
  const fs::path dir = root / speaker;
  PreparedUtterance p;
  p.speaker = speaker;
  p.utterance = utterance;
  p.frames = corpus::read_frames(dir / (utterance + ".frames"));
  p.mel = dsp::read_mel(dir / (utterance + ".mel"));
  p.audio = read_wav(dir / (utterance + ".wav"));
  double fps = kUltrasoundFps;
  if (fs::exists(dir / "speaker.json")) fps = read_json(dir / "speaker.json").value("fps", fps);
  p.mel.sample_rate = p.audio.sample_rate;
  p.mel.hop = dsp::hop_for(p.audio.sample_rate, fps);
  if (static_cast<int>(p.frames.size()) != p.mel.frames()) {
    throw ShapeError(speaker + "/" + utterance + ": frame and mel counts differ");
  }
  return p;
}

corpus::CorpusSplit load_split(const fs::path& root, const std::string& speaker) {
  return corpus::read_split_manifest(root / speaker / "split.jsonl");
}

std::vector<std::string> split_ids(const corpus::CorpusSplit& split, const std::string& name) {
  const std::vector<corpus::UtteranceRef>* refs = nullptr;
  if (name == "train") refs = &split.train;
  else if (name == "dev") refs = &split.dev;
  else if (name == "test") refs = &split.test;
  else throw ConfigurationError("unknown split " + name + " (train, dev or test)");
  std::vector<std::string> out;
  for (const auto& r : *refs) out.push_back(r.utterance);
  return out;
}

training::FrameDataset make_dataset(std::span<const PreparedUtterance> utterances, const dsp::MelStats& stats) {
  Eigen::Index total = 0;
  for (const auto& u : utterances) total += static_cast<Eigen::Index>(u.frames.size());
  if (total == 0) throw InsufficientDataError("dataset has no frames");
  const int width = static_cast<int>(utterances.front().frames.front().size());
  training::FrameDataset ds;
  ds.inputs.resize(total, width);
  ds.targets.resize(total, utterances.front().mel.bins());
  Eigen::Index row = 0;
  for (const auto& u : utterances) {
    const auto n = static_cast<Eigen::Index>(u.frames.size());
    if (n != u.mel.frames()) throw ShapeError(u.utterance + ": frame and mel counts differ");
    ds.inputs.middleRows(row, n) = models::frames_to_rows<float>(u.frames);
    ds.targets.middleRows(row, n) = dsp::standardize_mel(u.mel, stats).values.cast<float>();
    row += n;
  }
  return ds;
}

TrainResult train_speaker(const fs::path& data_root, const std::string& speaker, const TrainOptions& options,
                          const fs::path& out_dir, std::ostream* log) {
  const auto split = load_split(data_root, speaker);
  const auto load = [&](const std::string& name) {
    std::vector<PreparedUtterance> out;
    for (const auto& id : split_ids(split, name)) out.push_back(load_prepared(data_root, speaker, id));
    return out;
  };
  const auto train_utts = load("train");
  if (train_utts.empty()) throw InsufficientDataError("speaker " + speaker + " has no training utterances");
  auto dev_utts = options.dev_is_train ? std::vector<PreparedUtterance>{} : load("dev");
  if (!options.dev_is_train && dev_utts.empty()) {
    throw InsufficientDataError("speaker " + speaker + " has no development utterances");
  }

  std::vector<dsp::MelSpectrogram> mels;
  for (const auto& u : train_utts) mels.push_back(u.mel);
  const dsp::MelStats stats = dsp::compute_mel_stats(mels);
  const training::FrameDataset train = make_dataset(train_utts, stats);
  const training::FrameDataset dev = options.dev_is_train ? train : make_dataset(dev_utts, stats);

  models::Model<float> model(models::standard_spec(options.kind), options.seed);
  training::TrainerConfig trainer = options.trainer;
  trainer.seed = options.seed;
  if (log) {
    *log << speaker << " " << models::to_string(options.kind) << ": " << model.parameters().total_size()
         << " parameters, " << train.size() << " train frames, " << dev.size() << " dev frames\n";
  }
  TrainResult result;
  result.history = training::fit(model, train, dev, options.schedule, trainer, log);
  result.parameters = model.parameters().total_size();
  result.train_frames = static_cast<int>(train.size());
  result.dev_frames = static_cast<int>(dev.size());
  result.train_mse = training::evaluate_mse(model, train);

  fs::create_directories(out_dir);
  models::save_checkpoint(out_dir, model, stats, speaker);
  result.history.write_jsonl(out_dir / "history.jsonl");
  return result;
}

dsp::MelSpectrogram predict_mel(models::Checkpoint& checkpoint, const std::vector<Matrix>& frames, int hop,
                                double sample_rate) {
  if (!checkpoint.mel_stats) throw PreconditionError("checkpoint carries no mel statistics");
  if (frames.empty()) throw InsufficientDataError("no frames to synthesize");
  dsp::MelSpectrogram mel;
  mel.values = checkpoint.model->predict(models::frames_to_rows<float>(frames)).cast<double>();
  if (!mel.values.allFinite()) throw NumericError("model produced non-finite mel values");
  mel.normalized = true;
  mel.stats = checkpoint.mel_stats;
  mel.hop = hop;
  mel.sample_rate = sample_rate;
  return mel;
}

SynthesisResult synthesize_utterance(models::Checkpoint& checkpoint, const PreparedUtterance& utterance,
                                     const vocoder::VocoderConfig& config) {
  SynthesisResult out;
  out.mel = predict_mel(checkpoint, utterance.frames, utterance.mel.hop, utterance.mel.sample_rate);
  out.audio = vocoder::synthesize(dsp::destandardize_mel(out.mel), config);
  return out;
}

void write_system_output(const fs::path& out_root, const std::string& speaker, const std::string& utterance,
                         const SynthesisResult& result) {
  const fs::path dir = out_root / speaker;
  fs::create_directories(dir);
  dsp::write_mel(dir / (utterance + ".mel"), result.mel);
  write_wav(dir / (utterance + ".wav"), result.audio);
  dsp::write_mel_png(dir / (utterance + ".png"), dsp::destandardize_mel(result.mel));
}

namespace {

bool same_stats(const dsp::MelStats& a, const dsp::MelStats& b) {
  return a.mean.size() == b.mean.size() && a.std.size() == b.std.size() &&
         (a.mean - b.mean).cwiseAbs().maxCoeff() <= 1e-6 && (a.std - b.std).cwiseAbs().maxCoeff() <= 1e-6;
}

}  // namespace

evaluation::EvaluationReport evaluate_systems(std::span<const SystemDir> systems, const fs::path& reference_root,
                                              const std::string& baseline) {
  if (systems.empty()) throw ConfigurationError("no systems to evaluate");
  std::vector<evaluation::SystemOutputs> outputs;
  for (const auto& sys : systems) {
    evaluation::SystemOutputs o;
    o.system = sys.name;
    for (const auto& speaker : list_speakers(sys.root)) {
      for (const auto& utt : stems_with(sys.root / speaker, ".mel")) {
        evaluation::SentenceOutput s;
        s.speaker = speaker;
        s.utterance = utt;
        s.predicted = dsp::read_mel(sys.root / speaker / (utt + ".mel"));
        if (!s.predicted.normalized) {
          throw IncompatibleInputError(sys.name + ": " + speaker + "/" + utt + " is not a standardized prediction");
        }
        s.audio = read_wav(sys.root / speaker / (utt + ".wav"));
        o.sentences.push_back(std::move(s));
      }
    }
    if (o.sentences.empty()) throw InsufficientDataError("system " + sys.name + " has no outputs");
    outputs.push_back(std::move(o));
  }

  // Statistics per sentence from the first system; all systems must agree.
  std::map<std::pair<std::string, std::string>, dsp::MelStats> stats;
  for (const auto& s : outputs.front().sentences) stats[{s.speaker, s.utterance}] = *s.predicted.stats;
  for (const auto& o : outputs) {
    for (const auto& s : o.sentences) {
      const auto it = stats.find({s.speaker, s.utterance});
      if (it != stats.end() && !same_stats(it->second, *s.predicted.stats)) {
        throw IncompatibleInputError(o.system + " was trained with different mel statistics for " + s.speaker);
      }
    }
  }

  std::vector<evaluation::ReferenceSentence> refs;
  for (const auto& [key, st] : stats) {
    const auto& [speaker, utt] = key;
    const fs::path dir = reference_root / speaker;
    evaluation::ReferenceSentence r;
    r.speaker = speaker;
    r.utterance = utt;
    r.mel = dsp::read_mel(dir / (utt + ".mel"));
    if (!r.mel.normalized) {
      r.mel = dsp::standardize_mel(r.mel, st);
    } else if (!same_stats(*r.mel.stats, st)) {
      throw IncompatibleInputError("reference " + speaker + "/" + utt + " uses different mel statistics");
    }
    r.audio = read_wav(dir / (utt + ".wav"));
    refs.push_back(std::move(r));
  }
  return evaluation::build_report(outputs, refs, baseline);
}

mushra::Manifest prepare_listening_test(std::span<const SystemDir> systems, const fs::path& data_root,
                                        const ListeningTestOptions& options, const fs::path& out_dir) {
  if (systems.empty()) throw ConfigurationError("no systems for the listening test");
  if (options.per_speaker < 1) throw ConfigurationError("per-speaker utterance count must be >= 1");
  if (!(options.noise_level >= 0.0)) throw ConfigurationError("noise level must be >= 0");
  for (const auto& sys : systems) {
    if (sys.name == mushra::kHiddenReference || sys.name == mushra::kAnchor || sys.name == "reference") {
      throw ConfigurationError("system name '" + sys.name + "' is reserved");
    }
  }

  mushra::Manifest manifest;
  manifest.seed = options.seed;
  manifest.conditions.push_back(mushra::kHiddenReference);
  for (const auto& sys : systems) manifest.conditions.push_back(sys.name);
  manifest.conditions.push_back(mushra::kAnchor);

  std::mt19937_64 rng(options.seed);
  for (const auto& speaker : list_speakers(systems.front().root)) {
    std::vector<std::string> common = stems_with(systems.front().root / speaker, ".wav");
    for (const auto& sys : systems) {
      const fs::path dir = sys.root / speaker;
      const auto have = fs::is_directory(dir) ? stems_with(dir, ".wav") : std::vector<std::string>{};
      const std::set<std::string> present(have.begin(), have.end());
      std::erase_if(common, [&](const std::string& u) { return !present.contains(u); });
    }
    std::erase_if(common, [&](const std::string& u) { return !fs::exists(data_root / speaker / (u + ".wav")); });
    if (static_cast<int>(common.size()) < options.per_speaker) {
      throw InsufficientDataError("speaker " + speaker + " has only " + std::to_string(common.size()) +
                                  " utterances available to every system");
    }
    for (std::size_t i = common.size(); i > 1; --i) std::swap(common[i - 1], common[rng() % i]);
    common.resize(static_cast<std::size_t>(options.per_speaker));
    std::sort(common.begin(), common.end());

    for (const auto& utt : common) {
      const fs::path dir = fs::absolute(out_dir / "stimuli" / speaker / utt);
      fs::create_directories(dir);
      mushra::UtteranceStimuli s;
      s.speaker = speaker;
      s.utterance = utt;
      const AudioClip reference = read_wav(data_root / speaker / (utt + ".wav"));
      s.reference = dir / "reference.wav";
      write_wav(s.reference, reference);
      s.conditions[mushra::kHiddenReference] = dir / (mushra::kHiddenReference + ".wav");
      write_wav(s.conditions[mushra::kHiddenReference], reference);
      s.conditions[mushra::kAnchor] = dir / (mushra::kAnchor + ".wav");
      write_wav(s.conditions[mushra::kAnchor], dsp::add_white_noise_anchor(reference, options.noise_level, rng()));
      for (const auto& sys : systems) {
        const AudioClip clip = read_wav(sys.root / speaker / (utt + ".wav"));
        if (clip.sample_rate != reference.sample_rate) {
          throw IncompatibleInputError(sys.name + ": " + speaker + "/" + utt + " sample rate differs from the reference");
        }
        s.conditions[sys.name] = dir / (sys.name + ".wav");
        write_wav(s.conditions[sys.name], clip);
      }
      manifest.utterances.push_back(std::move(s));
    }
  }
  mushra::validate_manifest(manifest);
  write_json(out_dir / "manifest.json", manifest.to_json());
  return manifest;
}

}  // namespace uts::pipeline
