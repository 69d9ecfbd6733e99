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
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace uts::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A named trainable tensor. Gradients accumulate across backward passes
// until zero_grad().
template <typename T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Registration-ordered collection of parameters. Addresses are stable for
// the lifetime of the set, so modules may hold raw pointers into it.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Eigen::Index rows, Eigen::Index cols);

  Parameter<T>& at(std::string_view name);
  const Parameter<T>& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t count() const { return params_.size(); }
  std::int64_t total_size() const;

  void zero_grad();

  // Flat copies, in registration order; used for best-epoch snapshots.
  std::vector<Mat<T>> snapshot() const;
  void restore(const std::vector<Mat<T>>& values);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

enum class Mode {
  kInference,  // no dropout, no gradient bookkeeping
  kTraining,   // dropout active, gradients recorded
  kGradCheck,  // gradients recorded, dropout off
};

// Define-by-run tape. Every op appends a node; backward() walks the tape in
// reverse creation order, which is a valid topological order.
template <typename T>
class Graph {
 public:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool requires_grad = false;
    std::function<void(Node&)> backward;
  };
  using Var = Node*;

  explicit Graph(Mode mode = Mode::kInference, std::uint64_t seed = 0) : mode_(mode), rng_(seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Mode mode() const { return mode_; }
  bool training() const { return mode_ == Mode::kTraining; }
  bool records_gradients() const { return mode_ != Mode::kInference; }

  Var constant(Mat<T> value);
  Var parameter(Parameter<T>& p);

  // Adds an op output. `backward` is dropped unless some input needs a
  // gradient (signalled by `requires_grad`).
  Var emit(Mat<T> value, bool requires_grad, std::function<void(Node&)> backward);

  // Seeds d(out)/d(out) = 1 for a 1x1 output and propagates.
  void backward(Var out);

  std::mt19937_64& rng() { return rng_; }
  std::size_t size() const { return nodes_.size(); }

  // grad += g, allocating on first touch. No-op for constants.
  template <typename Expr>
  static void accumulate(Var n, const Expr& g) {
    if (!n->requires_grad) return;
    if (n->grad.size() == 0) {
      n->grad = g;
    } else {
      n->grad += g;
    }
  }

 private:
  Mode mode_;
  std::mt19937_64 rng_;
  std::vector<std::unique_ptr<Node>> nodes_;
};

template <typename T>
using Var = typename Graph<T>::Var;

}  // namespace uts::nn
