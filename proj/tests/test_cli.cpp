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
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "support/support.hpp"
#include "uts/evaluation.hpp"

using namespace uts;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run uts_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(uts_cli({}).code == 2);
  CHECK(uts_cli({"frobnicate"}).code == 2);
  CHECK(uts_cli({"--help"}).code == 0);
  CHECK(uts_cli({"train", "--speaker", "x"}).code == 2);
  testing::TempDir dir;
  // Parses, then fails at run time.
  const auto r = uts_cli({"mushra", "report", "--data", dir.path().string(), "--experiment", "nope", "--out",
                          (dir / "rep").string()});
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: ", 0) == 0);
}

TEST_CASE("config keys map to flags") {
  CHECK(cli::config_key_to_flag("vocoder.backend") == "--vocoder");
  CHECK(cli::config_key_to_flag("batch_size") == "--batch-size");
  CHECK(cli::config_key_to_flag("vocoder.cmd") == "--vocoder-cmd");
  testing::TempDir dir;
  std::ofstream(dir / "bad.yaml") << "no colon here\n";
  CHECK_THROWS(cli::read_config(dir / "bad.yaml"));
}

TEST_CASE("command line overrides the config file, which overrides defaults") {
  testing::TempDir dir;
  std::ofstream(dir / "c.yaml") << "# synthetic corpus\nspeakers: 1\nutterances: 3\nseed: 3\nmin_frames: 10\nmax_frames: 12\n";
  const auto r = uts_cli({"generate-synthetic", "--config", (dir / "c.yaml").string(), "--seed", "4", "--out",
                          (dir / "corpus").string()});
  REQUIRE(r.code == 0);
  const auto run = read_json(dir / "corpus" / "run.json");
  CHECK(run["options"]["seed"] == "4");
  CHECK(run["options"]["utterances"] == "3");
  CHECK(run["options"]["sample-rate"] == "22050");
  CHECK(run["version"] == UTS_VERSION);
  CHECK(std::filesystem::exists(dir / "corpus" / "syn01" / "003_xaud.ult"));
  CHECK_FALSE(std::filesystem::exists(dir / "corpus" / "syn02"));
}

TEST_CASE("pipeline smoke run and self-comparison") {
  testing::TempDir dir;
  const auto p = [&](const char* name) { return (dir / name).string(); };
  REQUIRE(uts_cli({"generate-synthetic", "--out", p("raw"), "--speakers", "1", "--utterances", "22", "--min-frames",
                   "12", "--max-frames", "16", "--seed", "5"})
              .code == 0);
  REQUIRE(uts_cli({"preprocess", "--data-dir", p("raw"), "--out", p("prep")}).code == 0);
  const auto tr = uts_cli({"train", "--speaker", "syn01", "--model", "conformer", "--data", p("prep"), "--out",
                           p("ckpt"), "--epochs", "1", "--batch-size", "32"});
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  const auto syn = uts_cli({"synthesize", "--checkpoint", p("ckpt"), "--data", p("prep"), "--split", "test",
                            "--griffin-lim-iters", "4", "--out", p("out")});
  REQUIRE_MESSAGE(syn.code == 0, syn.err);
  CHECK(std::filesystem::exists(dir / "out" / "syn01" / "005_xaud.wav"));
  CHECK(std::filesystem::exists(dir / "out" / "syn01" / "005_xaud.png"));

  const auto ev = uts_cli({"evaluate", "--systems", "baseline=" + p("out"), "conformer=" + p("out"), "--reference",
                           p("prep"), "--out", p("eval")});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  std::ifstream in(dir / "eval" / "report.jsonl");
  std::stringstream text;
  text << in.rdbuf();
  const auto report = evaluation::from_jsonl(text.str());
  const auto& row = report.at("syn01").at("conformer");
  CHECK(row.mean_mse == doctest::Approx(report.at("syn01").at("baseline").mean_mse));
  REQUIRE(row.mse_test);
  CHECK(row.mse_test->p == doctest::Approx(1.0));
  CHECK(row.sentences.size() == 10);

  const auto prep = uts_cli({"mushra", "prepare", "--systems", "conformer=" + p("out"), "--data", p("prep"),
                             "--per-speaker", "3", "--out", p("listen")});
  REQUIRE_MESSAGE(prep.code == 0, prep.err);
  const auto manifest = read_json(dir / "listen" / "manifest.json");
  CHECK(manifest["utterances"].size() == 3);
  CHECK(manifest["conditions"].size() == 3);

  // A typo'd model name is a usage error.
  CHECK(uts_cli({"train", "--speaker", "syn01", "--model", "conformr", "--data", p("prep"), "--out", p("x")}).code ==
        2);
}
