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

#include "uts/nn/graph.hpp"

#include <algorithm>

#include "uts/error.hpp"

namespace uts::nn {

template <typename T>
Parameter<T>& ParameterSet<T>::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (contains(name)) throw ShapeError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = std::move(name);
  p->value = Mat<T>::Zero(rows, cols);
  p->grad = Mat<T>::Zero(rows, cols);
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Parameter<T>& ParameterSet<T>::at(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw NotFoundError("no parameter named " + std::string(name));
}

template <typename T>
const Parameter<T>& ParameterSet<T>::at(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

template <typename T>
bool ParameterSet<T>::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const auto& p) { return p->name == name; });
}

template <typename T>
std::int64_t ParameterSet<T>::total_size() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename T>
std::vector<Mat<T>> ParameterSet<T>::snapshot() const {
  std::vector<Mat<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value);
  return out;
}

template <typename T>
void ParameterSet<T>::restore(const std::vector<Mat<T>>& values) {
  if (values.size() != params_.size()) throw ShapeError("snapshot does not match parameter set");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].rows() != params_[i]->value.rows() || values[i].cols() != params_[i]->value.cols()) {
      throw ShapeError("snapshot shape mismatch for " + params_[i]->name);
    }
    params_[i]->value = values[i];
  }
}

template <typename T>
typename Graph<T>::Var Graph<T>::constant(Mat<T> value) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

template <typename T>
typename Graph<T>::Var Graph<T>::parameter(Parameter<T>& p) {
  auto node = std::make_unique<Node>();
  node->value = p.value;
  if (records_gradients()) {
    node->requires_grad = true;
    node->backward = [&p](Node& self) {
      if (p.grad.size() == 0) p.grad.setZero(p.value.rows(), p.value.cols());
      p.grad += self.grad;
    };
  }
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

template <typename T>
typename Graph<T>::Var Graph<T>::emit(Mat<T> value, bool requires_grad,
                                      std::function<void(Node&)> backward) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  if (records_gradients() && requires_grad) {
    node->requires_grad = true;
    node->backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

template <typename T>
void Graph<T>::backward(Var out) {
  if (!records_gradients()) throw PreconditionError("graph was built without gradient recording");
  if (out->value.size() != 1) throw ShapeError("backward() needs a scalar output");
  if (!out->requires_grad) return;
  out->grad = Mat<T>::Ones(1, 1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.grad.size() != 0) n.backward(n);
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace uts::nn
