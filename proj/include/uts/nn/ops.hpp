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

#include <algorithm>

#include "uts/nn/graph.hpp"

// Differentiable ops on the tape. Batched sequences are stored as
// (batch * seq_len) x features matrices, one row per time step, frames
// contiguous; ops that mix time steps take seq_len explicitly.
namespace uts::nn {

template <typename T> Var<T> matmul(Graph<T>& g, Var<T> a, Var<T> b);

// x * w + b with w: in x out, b: 1 x out.
template <typename T> Var<T> linear(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b);

template <typename T> Var<T> add(Graph<T>& g, Var<T> a, Var<T> b);

// a + scale * b.
template <typename T> Var<T> add_scaled(Graph<T>& g, Var<T> a, Var<T> b, T scale);

// Row-wise normalisation over the feature axis with affine gamma/beta
// (1 x features each).
template <typename T>
Var<T> layer_norm(Graph<T>& g, Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

// Per-frame, per-feature normalisation over the seq_len steps of each frame,
// with affine gamma/beta. Independent of the batch composition.
template <typename T>
Var<T> sequence_norm(Graph<T>& g, Var<T> x, Var<T> gamma, Var<T> beta, int seq_len,
                     T eps = T(1e-5));

template <typename T> Var<T> swish(Graph<T>& g, Var<T> x);
template <typename T> Var<T> relu(Graph<T>& g, Var<T> x);

// Gated linear unit over columns: [a | b] -> a * sigmoid(b).
template <typename T> Var<T> glu(Graph<T>& g, Var<T> x);

// Inverted dropout; identity unless the graph is in training mode.
template <typename T> Var<T> dropout(Graph<T>& g, Var<T> x, double rate);

// Row-major reinterpretation.
template <typename T> Var<T> reshape(Graph<T>& g, Var<T> x, Eigen::Index rows, Eigen::Index cols);

template <typename T> Var<T> concat_cols(Graph<T>& g, Var<T> a, Var<T> b);

// Multi-head scaled dot-product self-attention within each frame with
// learned relative-position terms: logit(i, j) = q_i . (k_j + r_{j-i}) /
// sqrt(head_dim). `relative` is (2 * seq_len - 1) x head_dim, shared by all
// heads, row j - i + seq_len - 1.
template <typename T>
Var<T> relative_attention(Graph<T>& g, Var<T> q, Var<T> k, Var<T> v, Var<T> relative, int heads,
                          int seq_len);

// Depthwise convolution along time with "same" zero padding. w is
// kernel x channels (odd kernel), b is 1 x channels.
template <typename T>
Var<T> depthwise_conv1d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b, int seq_len);

// One LSTM direction over each frame. w: in x 4H, u: H x 4H, b: 1 x 4H,
// gate blocks ordered input, forget, cell, output. Output (batch*seq) x H.
template <typename T>
Var<T> lstm(Graph<T>& g, Var<T> x, Var<T> w, Var<T> u, Var<T> b, int seq_len, bool reverse);

struct Conv2dShape {
  int in_h = 0, in_w = 0, in_c = 0;
  int out_c = 0;
  int kernel_h = 0, kernel_w = 0;
  int stride_h = 1, stride_w = 1;

  // "same" padding: out = ceil(in / stride).
  int out_h() const { return (in_h + stride_h - 1) / stride_h; }
  int out_w() const { return (in_w + stride_w - 1) / stride_w; }
  int pad_top() const { return std::max((out_h() - 1) * stride_h + kernel_h - in_h, 0) / 2; }
  int pad_left() const { return std::max((out_w() - 1) * stride_w + kernel_w - in_w, 0) / 2; }
  int patch_size() const { return kernel_h * kernel_w * in_c; }
};

// 2-D convolution over NHWC images stored one per row. w is
// (kernel_h * kernel_w * in_c) x out_c with patch index (ky, kx, c).
template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b, const Conv2dShape& shape);

struct Pool2dShape {
  int in_h = 0, in_w = 0, channels = 0;
  int size = 2;
  int out_h() const { return in_h / size; }
  int out_w() const { return in_w / size; }
};

template <typename T> Var<T> max_pool2d(Graph<T>& g, Var<T> x, const Pool2dShape& shape);

// mean((pred - target)^2) over all entries, as a 1x1 node.
template <typename T> Var<T> mse_loss(Graph<T>& g, Var<T> pred, const Mat<T>& target);

// sum(x .* weights), as a 1x1 node. Projects any output to a scalar.
template <typename T> Var<T> weighted_sum(Graph<T>& g, Var<T> x, const Mat<T>& weights);

}  // namespace uts::nn
