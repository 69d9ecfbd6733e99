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
#include <random>

#include "support/support.hpp"
#include "uts/dsp.hpp"
#include "uts/error.hpp"

using namespace uts;
using testing::random_matrix;

namespace {

// Direct kernel sum for one output sample of the half-pixel-centred resize.
double bicubic_oracle(const Matrix& in, int row, int out_col, int out_cols) {
  const double scale = static_cast<double>(in.cols()) / out_cols;
  const double src = (out_col + 0.5) * scale - 0.5;
  const int base = static_cast<int>(std::floor(src));
  double acc = 0.0;
  for (int k = base - 1; k <= base + 2; ++k) {
    const int c = std::clamp(k, 0, static_cast<int>(in.cols()) - 1);
    const double x = src - k;
    const double ax = std::abs(x), a = -0.5;
    double w = 0.0;
    if (ax <= 1) w = (a + 2) * ax * ax * ax - (a + 3) * ax * ax + 1;
    else if (ax < 2) w = a * ax * ax * ax - 5 * a * ax * ax + 8 * a * ax - 4 * a;
    acc += w * in(row, c);
  }
  return acc;
}

AudioClip sine(double hz, double seconds, double sr = 22050.0, double amplitude = 1.0) {
  AudioClip c;
  c.sample_rate = sr;
  const auto n = static_cast<std::size_t>(seconds * sr);
  for (std::size_t i = 0; i < n; ++i) c.samples.push_back(amplitude * std::sin(2 * std::numbers::pi * hz * i / sr));
  return c;
}

}  // namespace

TEST_CASE("resize_bicubic reproduces constants and the identity scale") {
  const Matrix constant = Matrix::Constant(64, 842, 100.0);
  CHECK((dsp::resize_bicubic(constant).array() - 100.0).abs().maxCoeff() < 1e-9);

  std::mt19937_64 rng(1);
  const Matrix same = random_matrix(rng, 64, 128);
  CHECK((dsp::resize_bicubic(same) - same).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("resize_bicubic matches a brute-force kernel sum") {
  Matrix ramp(4, 8);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 8; ++c) ramp(r, c) = r * 10 + c * c;
  for (int out_cols : {3, 5, 16}) {
    const Matrix got = dsp::resize_bicubic(ramp, out_cols);
    REQUIRE(got.rows() == 4);
    REQUIRE(got.cols() == out_cols);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < out_cols; ++c) CHECK(got(r, c) == doctest::Approx(bicubic_oracle(ramp, r, c, out_cols)).epsilon(1e-9));
  }
}

TEST_CASE("resize_bicubic is linear") {
  std::mt19937_64 rng(2);
  const Matrix a = random_matrix(rng, 64, 842), b = random_matrix(rng, 64, 842);
  const Matrix lhs = dsp::resize_bicubic(2.5 * a - 0.75 * b);
  const Matrix rhs = 2.5 * dsp::resize_bicubic(a) - 0.75 * dsp::resize_bicubic(b);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("resize_bicubic rejects non-finite input") {
  Matrix m = Matrix::Zero(64, 842);
  m(3, 4) = std::nan("");
  CHECK_THROWS_AS(dsp::resize_bicubic(m), NumericInputError);
}

TEST_CASE("normalize_pixels endpoints and monotonicity") {
  ByteMatrix px(1, 4);
  px << 0, 51, 128, 255;
  const Matrix n = dsp::normalize_pixels(px);
  CHECK(n(0, 0) == -1.0);
  CHECK(n(0, 1) == doctest::Approx(-0.6));
  CHECK(n(0, 3) == 1.0);
  CHECK(n(0, 1) < n(0, 2));

  ByteMatrix raw = ByteMatrix::Constant(64, 842, 255);
  const Matrix f = dsp::preprocess_frame(raw);
  CHECK(f.rows() == 64);
  CHECK(f.cols() == 128);
  CHECK(f.maxCoeff() <= 1.0);
}

TEST_CASE("extract_mel shape, silence floor and sine peak") {
  AudioClip silence{std::vector<double>(22050, 0.0), 22050};
  const auto mel = dsp::extract_mel(silence, kUltrasoundFps, 50);
  CHECK(mel.frames() == 50);
  CHECK(mel.bins() == 80);
  CHECK((mel.values.array() - std::log(1e-5)).abs().maxCoeff() < 1e-9);

  const auto tone = dsp::extract_mel(sine(440.0, 1.0), kUltrasoundFps, 60);
  const auto centres = dsp::mel_center_frequencies(22050, 80, 0.0, 11025.0);
  int nearest = 0;
  for (int b = 1; b < 80; ++b)
    if (std::abs(centres[b] - 440.0) < std::abs(centres[nearest] - 440.0)) nearest = b;
  for (int t = 5; t < 55; ++t) {
    Eigen::Index arg = 0;
    tone.values.row(t).maxCoeff(&arg);
    CHECK(arg == nearest);
  }
}

TEST_CASE("extract_mel needs at least one hop of audio") {
  AudioClip tiny{std::vector<double>(10, 0.1), 22050};
  CHECK_THROWS_AS(dsp::extract_mel(tiny, kUltrasoundFps, 1), InsufficientAudioError);
}

TEST_CASE("hop and FFT size conventions") {
  CHECK(dsp::hop_for(22050, 81.5) == 271);
  CHECK(dsp::fft_size_for(22050) == 1024);
}

TEST_CASE("standardize / destandardize round trip and degenerate statistics") {
  std::mt19937_64 rng(3);
  dsp::MelSpectrogram mel;
  mel.values = random_matrix(rng, 30, 80, 3.0);
  const std::vector<dsp::MelSpectrogram> set{mel};
  const auto stats = dsp::compute_mel_stats(set);
  const auto z = dsp::standardize_mel(mel, stats);
  CHECK(z.normalized);
  CHECK((dsp::destandardize_mel(z).values - mel.values).cwiseAbs().maxCoeff() < 1e-9);

  dsp::MelSpectrogram at_mean;
  at_mean.values = stats.mean.replicate(4, 1);
  CHECK(dsp::standardize_mel(at_mean, stats).values.cwiseAbs().maxCoeff() < 1e-12);

  auto bad = stats;
  bad.std(7) = 0.0;
  CHECK_THROWS_AS(dsp::standardize_mel(mel, bad), DegenerateStatsError);
  CHECK_THROWS_AS(dsp::standardize_mel(z, stats), PreconditionError);
}

TEST_CASE("standard deviations are floored") {
  dsp::MelSpectrogram flat;
  flat.values = Matrix::Constant(10, 80, std::log(1e-5));
  const std::vector<dsp::MelSpectrogram> set{flat};
  const auto stats = dsp::compute_mel_stats(set);
  CHECK(stats.std.minCoeff() == doctest::Approx(1.0));
}

TEST_CASE("mel cepstra of silence have zero c1..c12") {
  AudioClip silence{std::vector<double>(5000, 0.0), 22050};
  const Matrix c = dsp::mel_cepstra(silence);
  CHECK(c.cols() == 13);
  CHECK(c.rightCols(12).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("c0 dominates for white noise") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 0.3);
  double c0 = 0, rest = 0;
  for (int clip = 0; clip < 100; ++clip) {
    AudioClip a;
    a.sample_rate = 22050;
    for (int i = 0; i < 4000; ++i) a.samples.push_back(std::clamp(nd(rng), -1.0, 1.0));
    const Matrix c = dsp::mel_cepstra(a);
    c0 += c.col(0).cwiseAbs().mean();
    rest += c.rightCols(12).cwiseAbs().mean();
  }
  CHECK(c0 > rest);
}

TEST_CASE("mcd closed forms and pseudometric properties") {
  Matrix a = Matrix::Zero(20, 13), b = Matrix::Zero(20, 13);
  b.col(1).setOnes();
  CHECK(dsp::mcd_from_cepstra(a, b) == doctest::Approx(10.0 / std::log(10.0) * std::sqrt(2.0)).epsilon(1e-12));
  // c0 is ignored; truncation pairs the first min(T) frames.
  Matrix c = a;
  c.col(0).setConstant(5.0);
  CHECK(dsp::mcd_from_cepstra(a, c) == 0.0);
  CHECK(dsp::mcd_from_cepstra(a, Matrix(b.topRows(5))) == doctest::Approx(6.141851).epsilon(1e-6));

  const AudioClip x = sine(300.0, 0.5, 22050, 0.5), y = sine(900.0, 0.4, 22050, 0.7);
  CHECK(dsp::mcd(x, x) == 0.0);
  CHECK(dsp::mcd(x, y) == doctest::Approx(dsp::mcd(y, x)).epsilon(1e-12));
  CHECK(dsp::mcd(x, y) > 0.0);

  AudioClip other = y;
  other.sample_rate = 16000;
  CHECK_THROWS_AS(dsp::mcd(x, other), IncompatibleInputError);
}

TEST_CASE("mcd equals a per-frame summation oracle") {
  const AudioClip x = sine(250.0, 0.6, 22050, 0.6), y = sine(700.0, 0.6, 22050, 0.4);
  const Matrix cx = dsp::mel_cepstra(x), cy = dsp::mel_cepstra(y);
  const Eigen::Index n = std::min(cx.rows(), cy.rows());
  double total = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    double s = 0;
    for (int d = 1; d <= 12; ++d) s += (cx(t, d) - cy(t, d)) * (cx(t, d) - cy(t, d));
    total += 10.0 / std::log(10.0) * std::sqrt(2.0 * s);
  }
  CHECK(dsp::mcd(x, y) == doctest::Approx(total / n).epsilon(1e-9));
}

TEST_CASE("white-noise anchor") {
  AudioClip silence{std::vector<double>(1000000, 0.0), 22050};
  const AudioClip same = dsp::add_white_noise_anchor(silence, 0.0, 1);
  CHECK(same.samples == silence.samples);
  const AudioClip noisy = dsp::add_white_noise_anchor(silence, 0.0005, 1);
  double ss = 0;
  for (double v : noisy.samples) ss += v * v;
  CHECK(std::sqrt(ss / noisy.samples.size()) == doctest::Approx(0.0005).epsilon(0.02));
  CHECK(dsp::add_white_noise_anchor(silence, 0.0005, 1).samples == noisy.samples);
  AudioClip full{std::vector<double>(100, 1.0), 22050};
  CHECK(peak(dsp::add_white_noise_anchor(full, 0.5, 2).samples) <= 1.0);
}

TEST_CASE("mel file round trip keeps flags and statistics") {
  testing::TempDir dir;
  std::mt19937_64 rng(5);
  dsp::MelSpectrogram mel;
  mel.values = random_matrix(rng, 12, 80);
  dsp::write_mel(dir / "raw.mel", mel);
  const auto back = dsp::read_mel(dir / "raw.mel");
  CHECK_FALSE(back.normalized);
  CHECK((back.values - mel.values).cwiseAbs().maxCoeff() < 1e-6);

  const std::vector<dsp::MelSpectrogram> set{mel};
  const auto z = dsp::standardize_mel(mel, dsp::compute_mel_stats(set, 1e-3));
  dsp::write_mel(dir / "z.mel", z);
  const auto zb = dsp::read_mel(dir / "z.mel");
  REQUIRE(zb.normalized);
  REQUIRE(zb.stats);
  CHECK((zb.stats->std - z.stats->std).cwiseAbs().maxCoeff() == 0.0);

  std::ofstream(dir / "bad.mel") << "XXXX";
  CHECK_THROWS_AS(dsp::read_mel(dir / "bad.mel"), MalformedFileError);

  dsp::write_mel_png(dir / "m.png", mel);
  CHECK(std::filesystem::file_size(dir / "m.png") > 0);
}

TEST_CASE("cepstra are deterministic") {
  const AudioClip x = sine(333.0, 0.3, 22050, 0.4);
  CHECK(dsp::mel_cepstra(x) == dsp::mel_cepstra(x));
}

TEST_CASE("property: extract_mel returns the requested frame count") {
  std::mt19937_64 rng(6);
  for (int c = 0; c < 30; ++c) {
    const int frames = 1 + static_cast<int>(rng() % 60);
    const int hop = dsp::hop_for(16000, kUltrasoundFps);
    AudioClip a{std::vector<double>(static_cast<std::size_t>(frames * hop + rng() % 500), 0.01), 16000};
    const auto mel = dsp::extract_mel(a, kUltrasoundFps, frames);
    CHECK(mel.frames() == frames);
    CHECK(mel.values.allFinite());
  }
}
