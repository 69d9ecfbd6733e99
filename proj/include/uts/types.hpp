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

#include <Eigen/Core>

namespace uts {

// Row-major so that a T x 64 x 128 stack of frames is one contiguous block
// and flattening a 64 x 256 activation is a reinterpretation, not a copy.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ByteMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr int kScanlines = 64;
inline constexpr int kRawSamplesPerLine = 842;
inline constexpr int kResizedSamplesPerLine = 128;
inline constexpr int kMelBins = 80;
inline constexpr int kCepstralOrder = 13;
inline constexpr double kUltrasoundFps = 81.5;

}  // namespace uts
