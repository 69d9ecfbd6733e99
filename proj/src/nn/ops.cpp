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

#include "uts/nn/ops.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "uts/error.hpp"

namespace uts::nn {

namespace {

template <typename T>
using G = Graph<T>;

template <typename T>
using RowMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
using ConstRowMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// Rows t, t + seq_len, t + 2 * seq_len, ...: time step t of every frame.
template <typename T>
RowMap<T> step_rows(Mat<T>& m, int t, int seq_len, Eigen::Index batch) {
  return RowMap<T>(m.data() + static_cast<Eigen::Index>(t) * m.cols(), batch, m.cols(),
                   Eigen::OuterStride<>(m.cols() * seq_len));
}

template <typename T>
ConstRowMap<T> step_rows(const Mat<T>& m, int t, int seq_len, Eigen::Index batch) {
  return ConstRowMap<T>(m.data() + static_cast<Eigen::Index>(t) * m.cols(), batch, m.cols(),
                        Eigen::OuterStride<>(m.cols() * seq_len));
}

template <typename T>
Eigen::Index frames_of(const Mat<T>& x, int seq_len) {
  require(seq_len > 0 && x.rows() % seq_len == 0, "row count is not a multiple of the sequence length");
  return x.rows() / seq_len;
}

}  // namespace

template <typename T>
Var<T> matmul(Graph<T>& g, Var<T> a, Var<T> b) {
  require(a->value.cols() == b->value.rows(), "matmul: inner dimensions differ");
  Mat<T> out = a->value * b->value;
  return g.emit(std::move(out), a->requires_grad || b->requires_grad, [a, b](auto& self) {
    if (a->requires_grad) G<T>::accumulate(a, self.grad * b->value.transpose());
    if (b->requires_grad) G<T>::accumulate(b, a->value.transpose() * self.grad);
  });
}

template <typename T>
Var<T> linear(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b) {
  require(x->value.cols() == w->value.rows(), "linear: input width does not match weight rows");
  require(b->value.rows() == 1 && b->value.cols() == w->value.cols(), "linear: bias shape");
  Mat<T> out(x->value.rows(), w->value.cols());
  out.noalias() = x->value * w->value;
  out.rowwise() += b->value.row(0);
  const bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
  return g.emit(std::move(out), rg, [x, w, b](auto& self) {
    if (x->requires_grad) G<T>::accumulate(x, self.grad * w->value.transpose());
    if (w->requires_grad) G<T>::accumulate(w, x->value.transpose() * self.grad);
    if (b->requires_grad) G<T>::accumulate(b, self.grad.colwise().sum());
  });
}

template <typename T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b) {
  return add_scaled(g, a, b, T(1));
}

template <typename T>
Var<T> add_scaled(Graph<T>& g, Var<T> a, Var<T> b, T scale) {
  require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
          "add: shapes differ");
  Mat<T> out = a->value + scale * b->value;
  return g.emit(std::move(out), a->requires_grad || b->requires_grad, [a, b, scale](auto& self) {
    G<T>::accumulate(a, self.grad);
    G<T>::accumulate(b, scale * self.grad);
  });
}

template <typename T>
Var<T> layer_norm(Graph<T>& g, Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const auto n = x->value.rows(), d = x->value.cols();
  require(gamma->value.size() == d && beta->value.size() == d, "layer_norm: affine width");
  auto xhat = std::make_shared<Mat<T>>(n, d);
  auto inv_std = std::make_shared<Eigen::Matrix<T, Eigen::Dynamic, 1>>(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = x->value.row(r).array();
    const T mean = row.mean();
    const T var = (row - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    xhat->row(r) = (row - mean) * is;
  }
  Mat<T> out = (xhat->array().rowwise() * gamma->value.row(0).array()).rowwise() +
               beta->value.row(0).array();
  const bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  return g.emit(std::move(out), rg, [x, gamma, beta, xhat, inv_std, d](auto& self) {
    if (gamma->requires_grad) {
      G<T>::accumulate(gamma, (self.grad.array() * xhat->array()).matrix().colwise().sum());
    }
    if (beta->requires_grad) G<T>::accumulate(beta, self.grad.colwise().sum());
    if (!x->requires_grad) return;
    Mat<T> dxhat = self.grad.array().rowwise() * gamma->value.row(0).array();
    Mat<T> dx(dxhat.rows(), d);
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
      const T mean_d = dxhat.row(r).mean();
      const T mean_dx = (dxhat.row(r).array() * xhat->row(r).array()).mean();
      dx.row(r) = (*inv_std)(r) *
                  (dxhat.row(r).array() - mean_d - xhat->row(r).array() * mean_dx);
    }
    G<T>::accumulate(x, dx);
  });
}

template <typename T>
Var<T> sequence_norm(Graph<T>& g, Var<T> x, Var<T> gamma, Var<T> beta, int seq_len, T eps) {
  const auto frames = frames_of(x->value, seq_len);
  const auto d = x->value.cols();
  require(gamma->value.size() == d && beta->value.size() == d, "sequence_norm: affine width");
  auto xhat = std::make_shared<Mat<T>>(x->value.rows(), d);
  auto inv_std = std::make_shared<Mat<T>>(frames, d);
  for (Eigen::Index f = 0; f < frames; ++f) {
    const auto block = x->value.middleRows(f * seq_len, seq_len).array();
    const auto mean = block.colwise().mean();
    const auto centred = block.rowwise() - mean;
    const auto var = centred.square().colwise().mean();
    const auto is = (var + eps).sqrt().inverse();
    inv_std->row(f) = is;
    xhat->middleRows(f * seq_len, seq_len) = centred.rowwise() * is;
  }
  Mat<T> out = (xhat->array().rowwise() * gamma->value.row(0).array()).rowwise() +
               beta->value.row(0).array();
  const bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  return g.emit(std::move(out), rg, [x, gamma, beta, xhat, inv_std, seq_len, frames](auto& self) {
    if (gamma->requires_grad) {
      G<T>::accumulate(gamma, (self.grad.array() * xhat->array()).matrix().colwise().sum());
    }
    if (beta->requires_grad) G<T>::accumulate(beta, self.grad.colwise().sum());
    if (!x->requires_grad) return;
    Mat<T> dxhat = self.grad.array().rowwise() * gamma->value.row(0).array();
    Mat<T> dx(dxhat.rows(), dxhat.cols());
    for (Eigen::Index f = 0; f < frames; ++f) {
      const auto dh = dxhat.middleRows(f * seq_len, seq_len).array();
      const auto xh = xhat->middleRows(f * seq_len, seq_len).array();
      const auto mean_d = dh.colwise().mean();
      const auto mean_dx = (dh * xh).colwise().mean();
      dx.middleRows(f * seq_len, seq_len) =
          ((dh.rowwise() - mean_d) - (xh.rowwise() * mean_dx)).rowwise() * inv_std->row(f).array();
    }
    G<T>::accumulate(x, dx);
  });
}

template <typename T>
Var<T> swish(Graph<T>& g, Var<T> x) {
  auto sig = std::make_shared<Mat<T>>(x->value.unaryExpr([](T v) { return sigmoid(v); }));
  Mat<T> out = x->value.array() * sig->array();
  return g.emit(std::move(out), x->requires_grad, [x, sig](auto& self) {
    const auto s = sig->array();
    G<T>::accumulate(x, (self.grad.array() * (s + x->value.array() * s * (T(1) - s))).matrix());
  });
}

template <typename T>
Var<T> relu(Graph<T>& g, Var<T> x) {
  Mat<T> out = x->value.cwiseMax(T(0));
  return g.emit(std::move(out), x->requires_grad, [x](auto& self) {
    G<T>::accumulate(x, (x->value.array() > T(0)).select(self.grad, T(0)).matrix());
  });
}

template <typename T>
Var<T> glu(Graph<T>& g, Var<T> x) {
  require(x->value.cols() % 2 == 0, "glu: odd feature width");
  const auto half = x->value.cols() / 2;
  auto gate = std::make_shared<Mat<T>>(
      x->value.rightCols(half).unaryExpr([](T v) { return sigmoid(v); }));
  Mat<T> out = x->value.leftCols(half).array() * gate->array();
  return g.emit(std::move(out), x->requires_grad, [x, gate, half](auto& self) {
    Mat<T> dx(x->value.rows(), 2 * half);
    dx.leftCols(half) = self.grad.array() * gate->array();
    dx.rightCols(half) = self.grad.array() * x->value.leftCols(half).array() * gate->array() *
                         (T(1) - gate->array());
    G<T>::accumulate(x, dx);
  });
}

template <typename T>
Var<T> dropout(Graph<T>& g, Var<T> x, double rate) {
  if (!g.training() || rate <= 0.0) return x;
  if (rate >= 1.0) throw PreconditionError("dropout rate must be < 1");
  const T keep_scale = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<Mat<T>>(x->value.rows(), x->value.cols());
  std::bernoulli_distribution keep(1.0 - rate);
  auto& rng = g.rng();
  for (Eigen::Index i = 0; i < mask->size(); ++i) mask->data()[i] = keep(rng) ? keep_scale : T(0);
  Mat<T> out = x->value.array() * mask->array();
  return g.emit(std::move(out), x->requires_grad, [x, mask](auto& self) {
    G<T>::accumulate(x, (self.grad.array() * mask->array()).matrix());
  });
}

template <typename T>
Var<T> reshape(Graph<T>& g, Var<T> x, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == x->value.size(), "reshape: element count changes");
  Mat<T> out = Eigen::Map<const Mat<T>>(x->value.data(), rows, cols);
  const auto r0 = x->value.rows(), c0 = x->value.cols();
  return g.emit(std::move(out), x->requires_grad, [x, r0, c0](auto& self) {
    G<T>::accumulate(x, Eigen::Map<const Mat<T>>(self.grad.data(), r0, c0));
  });
}

template <typename T>
Var<T> concat_cols(Graph<T>& g, Var<T> a, Var<T> b) {
  require(a->value.rows() == b->value.rows(), "concat_cols: row counts differ");
  const auto ca = a->value.cols(), cb = b->value.cols();
  Mat<T> out(a->value.rows(), ca + cb);
  out.leftCols(ca) = a->value;
  out.rightCols(cb) = b->value;
  return g.emit(std::move(out), a->requires_grad || b->requires_grad, [a, b, ca, cb](auto& self) {
    G<T>::accumulate(a, self.grad.leftCols(ca));
    G<T>::accumulate(b, self.grad.rightCols(cb));
  });
}

template <typename T>
Var<T> relative_attention(Graph<T>& g, Var<T> q, Var<T> k, Var<T> v, Var<T> relative, int heads,
                          int seq_len) {
  const auto frames = frames_of(q->value, seq_len);
  const auto d = q->value.cols();
  require(k->value.rows() == q->value.rows() && v->value.rows() == q->value.rows() &&
              k->value.cols() == d && v->value.cols() == d,
          "attention: q/k/v shapes differ");
  require(heads > 0 && d % heads == 0, "attention: width not divisible by head count");
  const auto dh = d / heads;
  const auto n_rel = 2 * seq_len - 1;
  require(relative->value.rows() == n_rel && relative->value.cols() == dh,
          "attention: relative table must be (2L-1) x head_dim");
  const T scale = T(1) / std::sqrt(T(dh));

  // Softmax weights per (frame, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<Mat<T>>>(static_cast<std::size_t>(frames * heads));
  Mat<T> out(q->value.rows(), d);
  const Mat<T>& rel = relative->value;
  Mat<T> qr(seq_len, n_rel), logits(seq_len, seq_len);
  for (Eigen::Index f = 0; f < frames; ++f) {
    for (int h = 0; h < heads; ++h) {
      const auto Q = q->value.block(f * seq_len, h * dh, seq_len, dh);
      const auto K = k->value.block(f * seq_len, h * dh, seq_len, dh);
      const auto V = v->value.block(f * seq_len, h * dh, seq_len, dh);
      logits.noalias() = Q * K.transpose();
      qr.noalias() = Q * rel.transpose();
      for (int i = 0; i < seq_len; ++i) {
        logits.row(i) += qr.row(i).segment(seq_len - 1 - i, seq_len);
      }
      logits *= scale;
      Mat<T>& a = (*probs)[static_cast<std::size_t>(f * heads + h)];
      a.resize(seq_len, seq_len);
      for (int i = 0; i < seq_len; ++i) {
        const T m = logits.row(i).maxCoeff();
        a.row(i) = (logits.row(i).array() - m).exp();
        a.row(i) /= a.row(i).sum();
      }
      out.block(f * seq_len, h * dh, seq_len, dh).noalias() = a * V;
    }
  }
  const bool rg = q->requires_grad || k->requires_grad || v->requires_grad || relative->requires_grad;
  return g.emit(std::move(out), rg, [=](auto& self) {
    Mat<T> dq = Mat<T>::Zero(q->value.rows(), d);
    Mat<T> dk = Mat<T>::Zero(q->value.rows(), d);
    Mat<T> dv = Mat<T>::Zero(q->value.rows(), d);
    Mat<T> drel = Mat<T>::Zero(n_rel, dh);
    Mat<T> da(seq_len, seq_len), ds(seq_len, seq_len), dqr(seq_len, n_rel);
    for (Eigen::Index f = 0; f < frames; ++f) {
      for (int h = 0; h < heads; ++h) {
        const Mat<T>& a = (*probs)[static_cast<std::size_t>(f * heads + h)];
        const auto Q = q->value.block(f * seq_len, h * dh, seq_len, dh);
        const auto K = k->value.block(f * seq_len, h * dh, seq_len, dh);
        const auto V = v->value.block(f * seq_len, h * dh, seq_len, dh);
        const auto dO = self.grad.block(f * seq_len, h * dh, seq_len, dh);
        da.noalias() = dO * V.transpose();
        dv.block(f * seq_len, h * dh, seq_len, dh).noalias() += a.transpose() * dO;
        for (int i = 0; i < seq_len; ++i) {
          const T dot = (da.row(i).array() * a.row(i).array()).sum();
          ds.row(i) = a.row(i).array() * (da.row(i).array() - dot) * scale;
        }
        dqr.setZero();
        for (int i = 0; i < seq_len; ++i) dqr.row(i).segment(seq_len - 1 - i, seq_len) = ds.row(i);
        dq.block(f * seq_len, h * dh, seq_len, dh).noalias() += ds * K + dqr * rel;
        dk.block(f * seq_len, h * dh, seq_len, dh).noalias() += ds.transpose() * Q;
        drel.noalias() += dqr.transpose() * Q;
      }
    }
    G<T>::accumulate(q, dq);
    G<T>::accumulate(k, dk);
    G<T>::accumulate(v, dv);
    G<T>::accumulate(relative, drel);
  });
}

template <typename T>
Var<T> depthwise_conv1d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b, int seq_len) {
  const auto frames = frames_of(x->value, seq_len);
  const auto c = x->value.cols();
  const auto kernel = static_cast<int>(w->value.rows());
  require(kernel % 2 == 1, "depthwise_conv1d: kernel must be odd");
  require(w->value.cols() == c && b->value.size() == c, "depthwise_conv1d: channel count");
  const int pad = kernel / 2;

  Mat<T> out(x->value.rows(), c);
  out.rowwise() = b->value.row(0);
  for (Eigen::Index f = 0; f < frames; ++f) {
    const auto base = f * seq_len;
    for (int j = 0; j < kernel; ++j) {
      const int shift = j - pad;  // out[t] += w[j] * x[t + shift]
      const int t0 = std::max(0, -shift), t1 = std::min(seq_len, seq_len - shift);
      if (t1 <= t0) continue;
      out.middleRows(base + t0, t1 - t0).array() +=
          x->value.middleRows(base + t0 + shift, t1 - t0).array().rowwise() * w->value.row(j).array();
    }
  }
  const bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
  return g.emit(std::move(out), rg, [x, w, b, seq_len, frames, kernel, pad, c](auto& self) {
    Mat<T> dx = Mat<T>::Zero(x->value.rows(), c);
    Mat<T> dw = Mat<T>::Zero(kernel, c);
    for (Eigen::Index f = 0; f < frames; ++f) {
      const auto base = f * seq_len;
      for (int j = 0; j < kernel; ++j) {
        const int shift = j - pad;
        const int t0 = std::max(0, -shift), t1 = std::min(seq_len, seq_len - shift);
        if (t1 <= t0) continue;
        const auto dy = self.grad.middleRows(base + t0, t1 - t0).array();
        const auto xs = x->value.middleRows(base + t0 + shift, t1 - t0).array();
        dw.row(j) += (dy * xs).matrix().colwise().sum();
        dx.middleRows(base + t0 + shift, t1 - t0).array() += dy.rowwise() * w->value.row(j).array();
      }
    }
    G<T>::accumulate(x, dx);
    G<T>::accumulate(w, dw);
    G<T>::accumulate(b, self.grad.colwise().sum());
  });
}

template <typename T>
Var<T> lstm(Graph<T>& g, Var<T> x, Var<T> w, Var<T> u, Var<T> b, int seq_len, bool reverse) {
  const auto frames = frames_of(x->value, seq_len);
  const auto hidden = u->value.rows();
  const auto h4 = 4 * hidden;
  require(w->value.rows() == x->value.cols() && w->value.cols() == h4, "lstm: input kernel shape");
  require(u->value.cols() == h4 && b->value.size() == h4, "lstm: recurrent kernel or bias shape");

  // Pre-activations from the input for every step in one product.
  Mat<T> xw(x->value.rows(), h4);
  xw.noalias() = x->value * w->value;
  xw.rowwise() += b->value.row(0);

  // Per processed step s: activated gates and cell state.
  auto gates = std::make_shared<std::vector<Mat<T>>>(static_cast<std::size_t>(seq_len));
  auto cells = std::make_shared<std::vector<Mat<T>>>(static_cast<std::size_t>(seq_len));
  Mat<T> out(x->value.rows(), hidden);
  Mat<T> h = Mat<T>::Zero(frames, hidden);
  Mat<T> c = Mat<T>::Zero(frames, hidden);
  Mat<T> z(frames, h4);
  for (int s = 0; s < seq_len; ++s) {
    const int t = reverse ? seq_len - 1 - s : s;
    z = step_rows(static_cast<const Mat<T>&>(xw), t, seq_len, frames);
    z.noalias() += h * u->value;
    auto zi = z.leftCols(hidden).array();
    auto zf = z.middleCols(hidden, hidden).array();
    auto zg = z.middleCols(2 * hidden, hidden).array();
    auto zo = z.rightCols(hidden).array();
    zi = T(1) / (T(1) + (-zi).exp());
    zf = T(1) / (T(1) + (-zf).exp());
    zg = zg.tanh();
    zo = T(1) / (T(1) + (-zo).exp());
    c = (zf * c.array() + zi * zg).matrix();
    h = (zo * c.array().tanh()).matrix();
    (*gates)[s] = z;
    (*cells)[s] = c;
    step_rows(out, t, seq_len, frames) = h;
  }

  const bool rg = x->requires_grad || w->requires_grad || u->requires_grad || b->requires_grad;
  return g.emit(std::move(out), rg, [=](auto& self) {
    Mat<T> dxw(x->value.rows(), h4);
    Mat<T> du = Mat<T>::Zero(hidden, h4);
    Mat<T> dh_next = Mat<T>::Zero(frames, hidden);
    Mat<T> dc_next = Mat<T>::Zero(frames, hidden);
    Mat<T> dz(frames, h4), h_prev(frames, hidden);
    for (int s = seq_len - 1; s >= 0; --s) {
      const int t = reverse ? seq_len - 1 - s : s;
      const Mat<T>& gt = (*gates)[s];
      const auto gi = gt.leftCols(hidden).array();
      const auto gf = gt.middleCols(hidden, hidden).array();
      const auto gg = gt.middleCols(2 * hidden, hidden).array();
      const auto go = gt.rightCols(hidden).array();
      const auto tc = (*cells)[s].array().tanh().eval();
      const Mat<T> dh = step_rows(self.grad, t, seq_len, frames) + dh_next;
      const auto dc = (dh.array() * go * (T(1) - tc.square()) + dc_next.array()).eval();
      if (s > 0) {
        dz.middleCols(hidden, hidden) = dc * (*cells)[s - 1].array() * gf * (T(1) - gf);
      } else {
        dz.middleCols(hidden, hidden).setZero();
      }
      dz.leftCols(hidden) = dc * gg * gi * (T(1) - gi);
      dz.middleCols(2 * hidden, hidden) = dc * gi * (T(1) - gg.square());
      dz.rightCols(hidden) = dh.array() * tc * go * (T(1) - go);
      dc_next = (dc * gf).matrix();
      step_rows(dxw, t, seq_len, frames) = dz;
      if (s > 0) {
        const int tp = reverse ? seq_len - s : s - 1;
        h_prev = step_rows(static_cast<const Mat<T>&>(self.value), tp, seq_len, frames);
        du.noalias() += h_prev.transpose() * dz;
      }
      dh_next.noalias() = dz * u->value.transpose();
    }
    if (w->requires_grad) G<T>::accumulate(w, x->value.transpose() * dxw);
    if (u->requires_grad) G<T>::accumulate(u, du);
    if (b->requires_grad) G<T>::accumulate(b, dxw.colwise().sum());
    if (x->requires_grad) G<T>::accumulate(x, dxw * w->value.transpose());
  });
}

namespace {

template <typename T>
void im2col(const T* image, const Conv2dShape& s, Mat<T>& patches) {
  const int oh = s.out_h(), ow = s.out_w(), pt = s.pad_top(), pl = s.pad_left();
  patches.resize(static_cast<Eigen::Index>(oh) * ow, s.patch_size());
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* dst = patches.data() + (static_cast<Eigen::Index>(oy) * ow + ox) * s.patch_size();
      for (int ky = 0; ky < s.kernel_h; ++ky) {
        const int iy = oy * s.stride_h + ky - pt;
        for (int kx = 0; kx < s.kernel_w; ++kx, dst += s.in_c) {
          const int ix = ox * s.stride_w + kx - pl;
          if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) {
            std::fill(dst, dst + s.in_c, T(0));
          } else {
            const T* src = image + (static_cast<Eigen::Index>(iy) * s.in_w + ix) * s.in_c;
            std::copy(src, src + s.in_c, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Mat<T>& dpatches, const Conv2dShape& s, T* dimage) {
  const int oh = s.out_h(), ow = s.out_w(), pt = s.pad_top(), pl = s.pad_left();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const T* src = dpatches.data() + (static_cast<Eigen::Index>(oy) * ow + ox) * s.patch_size();
      for (int ky = 0; ky < s.kernel_h; ++ky) {
        const int iy = oy * s.stride_h + ky - pt;
        for (int kx = 0; kx < s.kernel_w; ++kx, src += s.in_c) {
          const int ix = ox * s.stride_w + kx - pl;
          if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
          T* dst = dimage + (static_cast<Eigen::Index>(iy) * s.in_w + ix) * s.in_c;
          for (int ch = 0; ch < s.in_c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b, const Conv2dShape& shape) {
  require(x->value.cols() == static_cast<Eigen::Index>(shape.in_h) * shape.in_w * shape.in_c,
          "conv2d: input row is not in_h * in_w * in_c");
  require(w->value.rows() == shape.patch_size() && w->value.cols() == shape.out_c,
          "conv2d: kernel shape");
  require(b->value.size() == shape.out_c, "conv2d: bias shape");
  const auto batch = x->value.rows();
  const Eigen::Index positions = static_cast<Eigen::Index>(shape.out_h()) * shape.out_w();
  Mat<T> out(batch, positions * shape.out_c);
  Mat<T> patches;
  for (Eigen::Index n = 0; n < batch; ++n) {
    im2col(x->value.row(n).data(), shape, patches);
    Eigen::Map<Mat<T>> y(out.row(n).data(), positions, shape.out_c);
    y.noalias() = patches * w->value;
    y.rowwise() += b->value.row(0);
  }
  const bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
  return g.emit(std::move(out), rg, [x, w, b, shape, positions](auto& self) {
    Mat<T> dx;
    if (x->requires_grad) dx = Mat<T>::Zero(x->value.rows(), x->value.cols());
    Mat<T> dw = Mat<T>::Zero(w->value.rows(), w->value.cols());
    Mat<T> db = Mat<T>::Zero(1, shape.out_c);
    Mat<T> patches, dpatches;
    for (Eigen::Index n = 0; n < x->value.rows(); ++n) {
      Eigen::Map<const Mat<T>> dy(self.grad.row(n).data(), positions, shape.out_c);
      db += dy.colwise().sum();
      if (w->requires_grad) {
        im2col(x->value.row(n).data(), shape, patches);
        dw.noalias() += patches.transpose() * dy;
      }
      if (x->requires_grad) {
        dpatches.noalias() = dy * w->value.transpose();
        col2im_add(dpatches, shape, dx.row(n).data());
      }
    }
    if (x->requires_grad) G<T>::accumulate(x, dx);
    G<T>::accumulate(w, dw);
    G<T>::accumulate(b, db);
  });
}

template <typename T>
Var<T> max_pool2d(Graph<T>& g, Var<T> x, const Pool2dShape& s) {
  require(x->value.cols() == static_cast<Eigen::Index>(s.in_h) * s.in_w * s.channels,
          "max_pool2d: input row is not in_h * in_w * channels");
  const int oh = s.out_h(), ow = s.out_w();
  require(oh > 0 && ow > 0, "max_pool2d: window larger than input");
  const auto batch = x->value.rows();
  const Eigen::Index out_cols = static_cast<Eigen::Index>(oh) * ow * s.channels;
  Mat<T> out(batch, out_cols);
  auto argmax = std::make_shared<std::vector<Eigen::Index>>(static_cast<std::size_t>(batch * out_cols));
  for (Eigen::Index n = 0; n < batch; ++n) {
    const T* in = x->value.row(n).data();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        for (int ch = 0; ch < s.channels; ++ch) {
          Eigen::Index best = -1;
          T best_v = T(0);
          for (int dy = 0; dy < s.size; ++dy) {
            for (int dx = 0; dx < s.size; ++dx) {
              const Eigen::Index idx =
                  (static_cast<Eigen::Index>(oy * s.size + dy) * s.in_w + (ox * s.size + dx)) * s.channels + ch;
              if (best < 0 || in[idx] > best_v) {
                best = idx;
                best_v = in[idx];
              }
            }
          }
          const Eigen::Index o = (static_cast<Eigen::Index>(oy) * ow + ox) * s.channels + ch;
          out(n, o) = best_v;
          (*argmax)[static_cast<std::size_t>(n * out_cols + o)] = best;
        }
      }
    }
  }
  return g.emit(std::move(out), x->requires_grad, [x, argmax, out_cols](auto& self) {
    Mat<T> dx = Mat<T>::Zero(x->value.rows(), x->value.cols());
    for (Eigen::Index n = 0; n < dx.rows(); ++n) {
      for (Eigen::Index o = 0; o < out_cols; ++o) {
        dx(n, (*argmax)[static_cast<std::size_t>(n * out_cols + o)]) += self.grad(n, o);
      }
    }
    G<T>::accumulate(x, dx);
  });
}

template <typename T>
Var<T> mse_loss(Graph<T>& g, Var<T> pred, const Mat<T>& target) {
  require(pred->value.rows() == target.rows() && pred->value.cols() == target.cols(),
          "mse_loss: prediction and target shapes differ");
  auto diff = std::make_shared<Mat<T>>(pred->value - target);
  Mat<T> out(1, 1);
  const T n = static_cast<T>(diff->size());
  out(0, 0) = diff->squaredNorm() / n;
  return g.emit(std::move(out), pred->requires_grad, [pred, diff, n](auto& self) {
    G<T>::accumulate(pred, (T(2) * self.grad(0, 0) / n) * *diff);
  });
}

template <typename T>
Var<T> weighted_sum(Graph<T>& g, Var<T> x, const Mat<T>& weights) {
  require(x->value.rows() == weights.rows() && x->value.cols() == weights.cols(),
          "weighted_sum: weight shape differs");
  Mat<T> out(1, 1);
  out(0, 0) = (x->value.array() * weights.array()).sum();
  return g.emit(std::move(out), x->requires_grad, [x, weights](auto& self) {
    G<T>::accumulate(x, self.grad(0, 0) * weights);
  });
}

#define UTS_INSTANTIATE_OPS(T)                                                              \
  template Var<T> matmul(Graph<T>&, Var<T>, Var<T>);                                        \
  template Var<T> linear(Graph<T>&, Var<T>, Var<T>, Var<T>);                                \
  template Var<T> add(Graph<T>&, Var<T>, Var<T>);                                           \
  template Var<T> add_scaled(Graph<T>&, Var<T>, Var<T>, T);                                 \
  template Var<T> layer_norm(Graph<T>&, Var<T>, Var<T>, Var<T>, T);                         \
  template Var<T> sequence_norm(Graph<T>&, Var<T>, Var<T>, Var<T>, int, T);                 \
  template Var<T> swish(Graph<T>&, Var<T>);                                                 \
  template Var<T> relu(Graph<T>&, Var<T>);                                                  \
  template Var<T> glu(Graph<T>&, Var<T>);                                                   \
  template Var<T> dropout(Graph<T>&, Var<T>, double);                                       \
  template Var<T> reshape(Graph<T>&, Var<T>, Eigen::Index, Eigen::Index);                   \
  template Var<T> concat_cols(Graph<T>&, Var<T>, Var<T>);                                   \
  template Var<T> relative_attention(Graph<T>&, Var<T>, Var<T>, Var<T>, Var<T>, int, int);  \
  template Var<T> depthwise_conv1d(Graph<T>&, Var<T>, Var<T>, Var<T>, int);                 \
  template Var<T> lstm(Graph<T>&, Var<T>, Var<T>, Var<T>, Var<T>, int, bool);               \
  template Var<T> conv2d(Graph<T>&, Var<T>, Var<T>, Var<T>, const Conv2dShape&);            \
  template Var<T> max_pool2d(Graph<T>&, Var<T>, const Pool2dShape&);                        \
  template Var<T> mse_loss(Graph<T>&, Var<T>, const Mat<T>&);                               \
  template Var<T> weighted_sum(Graph<T>&, Var<T>, const Mat<T>&);

UTS_INSTANTIATE_OPS(float)
UTS_INSTANTIATE_OPS(double)

}  // namespace uts::nn
