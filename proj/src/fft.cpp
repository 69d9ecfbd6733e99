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

#include "uts/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace uts::dsp {

namespace {
// The FFTW planner is not reentrant; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

RealFft::RealFft(int n) : n_(n) {
  if (n < 2) throw std::invalid_argument("fft size must be >= 2");
  std::lock_guard lock(planner_mutex());
  real_ = fftw_alloc_real(static_cast<std::size_t>(n));
  auto* spectrum = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
  complex_ = spectrum;
  forward_plan_ = fftw_plan_dft_r2c_1d(n, real_, spectrum, FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_1d(n, spectrum, real_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
  fftw_free(real_);
  fftw_free(complex_);
}

void RealFft::forward(std::span<const double> input, std::span<std::complex<double>> output) {
  std::copy(input.begin(), input.end(), real_);
  fftw_execute(static_cast<fftw_plan>(forward_plan_));
  const auto* spectrum = static_cast<const fftw_complex*>(complex_);
  for (int k = 0; k <= n_ / 2; ++k) output[k] = {spectrum[k][0], spectrum[k][1]};
}

void RealFft::inverse(std::span<const std::complex<double>> input, std::span<double> output) {
  auto* spectrum = static_cast<fftw_complex*>(complex_);
  for (int k = 0; k <= n_ / 2; ++k) {
    spectrum[k][0] = input[k].real();
    spectrum[k][1] = input[k].imag();
  }
  // c2r destroys its input, which is our private buffer.
  fftw_execute(static_cast<fftw_plan>(inverse_plan_));
  std::copy(real_, real_ + n_, output.begin());
}

RealFft& RealFft::for_size(int n) {
  thread_local std::map<int, std::unique_ptr<RealFft>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

}  // namespace uts::dsp
