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

#include <complex>
#include <span>

namespace uts::dsp {

// Thin RAII wrapper over an FFTW real-to-complex / complex-to-real plan
// pair of one size. Instances are not shareable across threads; use
// RealFft::for_size() which keeps one cached instance per thread and size.
class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return n_; }

  // input.size() == n, output.size() == n/2 + 1.
  void forward(std::span<const double> input, std::span<std::complex<double>> output);
  // Unnormalised inverse: forward followed by inverse scales by n.
  void inverse(std::span<const std::complex<double>> input, std::span<double> output);

  static RealFft& for_size(int n);

 private:
  int n_;
  double* real_ = nullptr;
  void* complex_ = nullptr;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

}  // namespace uts::dsp
