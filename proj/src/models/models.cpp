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

#include "uts/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <unordered_map>

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "uts/error.hpp"
#include "uts/nn/ops.hpp"

namespace uts::models {

namespace {

using nlohmann::json;

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigurationError(what);
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kBaselineCnn:
      return "baseline";
    case ModelKind::kConformerBase:
      return "conformer";
    case ModelKind::kConformerBilstm:
      return "conformer-bilstm";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "baseline" || name == "baseline_cnn") return ModelKind::kBaselineCnn;
  if (name == "conformer" || name == "conformer_base") return ModelKind::kConformerBase;
  if (name == "conformer-bilstm" || name == "conformer_bilstm") return ModelKind::kConformerBilstm;
  throw ConfigurationError("unknown model kind: " + name);
}

void ConformerBlockConfig::validate() const {
  check(encoder_dim > 0 && attention_heads > 0, "encoder_dim and attention_heads must be positive");
  check(encoder_dim % attention_heads == 0, "encoder_dim must be divisible by attention_heads");
  check(conv_kernel > 0 && conv_kernel % 2 == 1, "conv_kernel must be odd");
  check(ff_expansion > 0, "ff_expansion must be positive");
  check(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
}

void CnnConfig::validate() const {
  check(!channels.empty(), "cnn needs at least one convolution");
  for (int c : channels) check(c > 0, "cnn channel counts must be positive");
  check(kernel > 0 && stride > 0 && pool > 0 && dense_units > 0, "cnn sizes must be positive");
  check(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
}

void ModelSpec::validate() const {
  check(scanlines > 0 && samples > 0 && output_dim > 0, "model geometry must be positive");
  if (is_conformer()) {
    block.validate();
    check(post_dim > 0, "post_dim must be positive");
    if (kind == ModelKind::kConformerBilstm) {
      check(bilstm_hidden > 0 && bilstm_layers > 0, "bi-LSTM sizes must be positive");
    }
  } else {
    cnn.validate();
    int h = scanlines, w = samples;
    for (std::size_t i = 0; i < cnn.channels.size(); ++i) {
      h = (h + cnn.stride - 1) / cnn.stride;
      w = (w + cnn.stride - 1) / cnn.stride;
    }
    check(h / cnn.pool > 0 && w / cnn.pool > 0, "cnn input too small for its pooling");
  }
}

bool ModelSpec::has_standard_geometry() const {
  return scanlines == kScanlines && samples == kResizedSamplesPerLine && output_dim == kMelBins;
}

ModelSpec standard_spec(ModelKind kind) {
  ModelSpec spec;
  spec.kind = kind;
  return spec;
}

std::int64_t count_parameters(const ModelSpec& spec) {
  spec.validate();
  using I = std::int64_t;
  const I out = spec.output_dim;
  if (!spec.is_conformer()) {
    const auto& c = spec.cnn;
    I total = 0, in_c = 1, h = spec.scanlines, w = spec.samples;
    for (int ch : c.channels) {
      total += I(c.kernel) * c.kernel * in_c * ch + ch;
      in_c = ch;
      h = (h + c.stride - 1) / c.stride;
      w = (w + c.stride - 1) / c.stride;
    }
    const I flat = (h / c.pool) * (w / c.pool) * in_c;
    total += flat * c.dense_units + c.dense_units;
    total += I(c.dense_units) * out + out;
    return total;
  }
  const I d = spec.block.encoder_dim;
  const I f = d * spec.block.ff_expansion;
  const I s = spec.scanlines;
  const I ln = 2 * d;
  const I ffn = ln + d * f + f + f * d + d;
  const I mhsa = ln + 4 * (d * d + d) + (2 * s - 1) * spec.block.head_dim();
  const I conv = ln + (d * 2 * d + 2 * d) + (spec.block.conv_kernel * d + d) + ln + (d * d + d);
  I total = spec.samples * d + d;
  total += 2 * ffn + mhsa + conv + ln;
  I width = d;
  if (spec.kind == ModelKind::kConformerBilstm) {
    const I h = spec.bilstm_hidden;
    for (int l = 0; l < spec.bilstm_layers; ++l) {
      total += 2 * (width * 4 * h + h * 4 * h + 4 * h);
      width = 2 * h;
    }
  }
  total += width * spec.post_dim + spec.post_dim;
  total += s * spec.post_dim * out + out;
  return total;
}

json spec_to_json(const ModelSpec& spec) {
  return json{
      {"kind", to_string(spec.kind)},
      {"block",
       {{"encoder_dim", spec.block.encoder_dim},
        {"attention_heads", spec.block.attention_heads},
        {"conv_kernel", spec.block.conv_kernel},
        {"ff_expansion", spec.block.ff_expansion},
        {"dropout", spec.block.dropout}}},
      {"bilstm_hidden", spec.bilstm_hidden},
      {"bilstm_layers", spec.bilstm_layers},
      {"post_dim", spec.post_dim},
      {"cnn",
       {{"channels", spec.cnn.channels},
        {"kernel", spec.cnn.kernel},
        {"stride", spec.cnn.stride},
        {"pool", spec.cnn.pool},
        {"dense_units", spec.cnn.dense_units},
        {"dropout", spec.cnn.dropout}}},
      {"scanlines", spec.scanlines},
      {"samples", spec.samples},
      {"output_dim", spec.output_dim},
  };
}

ModelSpec spec_from_json(const json& j) {
  try {
    ModelSpec spec;
    spec.kind = parse_model_kind(j.at("kind").get<std::string>());
    const auto& b = j.at("block");
    spec.block.encoder_dim = b.at("encoder_dim");
    spec.block.attention_heads = b.at("attention_heads");
    spec.block.conv_kernel = b.at("conv_kernel");
    spec.block.ff_expansion = b.at("ff_expansion");
    spec.block.dropout = b.at("dropout");
    spec.bilstm_hidden = j.at("bilstm_hidden");
    spec.bilstm_layers = j.at("bilstm_layers");
    spec.post_dim = j.at("post_dim");
    const auto& c = j.at("cnn");
    spec.cnn.channels = c.at("channels").get<std::vector<int>>();
    spec.cnn.kernel = c.at("kernel");
    spec.cnn.stride = c.at("stride");
    spec.cnn.pool = c.at("pool");
    spec.cnn.dense_units = c.at("dense_units");
    spec.cnn.dropout = c.at("dropout");
    spec.scanlines = j.at("scanlines");
    spec.samples = j.at("samples");
    spec.output_dim = j.at("output_dim");
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw MalformedFileError(std::string("bad model spec: ") + e.what());
  }
}

Matrix frames_to_sequence(const std::vector<Matrix>& frames) {
  if (frames.empty()) return Matrix(0, kResizedSamplesPerLine);
  const auto rows = frames.front().rows(), cols = frames.front().cols();
  Matrix seq(rows * static_cast<Eigen::Index>(frames.size()), cols);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].rows() != rows || frames[i].cols() != cols) {
      throw ShapeError("frames_to_sequence: frames differ in shape");
    }
    seq.middleRows(static_cast<Eigen::Index>(i) * rows, rows) = frames[i];
  }
  return seq;
}

std::vector<Matrix> sequence_to_frames(const Matrix& sequence, int partition_length) {
  if (partition_length <= 0 || sequence.rows() % partition_length != 0) {
    throw ShapeError("sequence length is not a multiple of the partition length");
  }
  std::vector<Matrix> frames;
  for (Eigen::Index r = 0; r < sequence.rows(); r += partition_length) {
    frames.emplace_back(sequence.middleRows(r, partition_length));
  }
  return frames;
}

template <typename T>
Mat<T> frames_to_rows(const std::vector<Matrix>& frames) {
  if (frames.empty()) return Mat<T>(0, 0);
  const auto size = frames.front().size();
  Mat<T> rows(static_cast<Eigen::Index>(frames.size()), size);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].size() != size) throw ShapeError("frames differ in size");
    rows.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(frames[i].data(), size).template cast<T>();
  }
  return rows;
}

template Mat<float> frames_to_rows<float>(const std::vector<Matrix>&);
template Mat<double> frames_to_rows<double>(const std::vector<Matrix>&);

// ---------------------------------------------------------------------------

template <typename T>
struct Model<T>::Bound {
  nn::Graph<T>& g;
  nn::ParameterSet<T>& params;
  std::unordered_map<std::string, nn::Var<T>> vars;

  nn::Var<T> operator()(const std::string& name) {
    auto it = vars.find(name);
    if (it != vars.end()) return it->second;
    return vars[name] = g.parameter(params.at(name));
  }
};

template <typename T>
Model<T>::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  if (spec_.is_conformer()) {
    build_conformer();
  } else {
    build_cnn();
  }
  initialize(seed);
}

template <typename T>
void Model<T>::build_conformer() {
  const int d = spec_.block.encoder_dim;
  const int f = d * spec_.block.ff_expansion;
  auto& P = params_;
  auto norm = [&](const std::string& prefix, int width) {
    P.add(prefix + ".gamma", 1, width);
    P.add(prefix + ".beta", 1, width);
  };
  auto dense = [&](const std::string& prefix, int in, int out) {
    P.add(prefix + ".w", in, out);
    P.add(prefix + ".b", 1, out);
  };
  dense("input", spec_.samples, d);
  for (const char* ff : {"block.ff1", "block.ff2"}) {
    norm(std::string(ff) + ".norm", d);
    dense(std::string(ff) + ".hidden", d, f);
    dense(std::string(ff) + ".out", f, d);
  }
  norm("block.mhsa.norm", d);
  for (const char* proj : {"query", "key", "value", "out"}) dense(std::string("block.mhsa.") + proj, d, d);
  P.add("block.mhsa.relative", 2 * spec_.scanlines - 1, spec_.block.head_dim());
  norm("block.conv.norm", d);
  dense("block.conv.expand", d, 2 * d);
  dense("block.conv.depthwise", spec_.block.conv_kernel, d);
  norm("block.conv.seqnorm", d);
  dense("block.conv.out", d, d);
  norm("block.norm", d);
  int width = d;
  if (spec_.kind == ModelKind::kConformerBilstm) {
    const int h = spec_.bilstm_hidden;
    for (int l = 0; l < spec_.bilstm_layers; ++l) {
      for (const char* dir : {"fw", "bw"}) {
        const std::string prefix = "lstm" + std::to_string(l) + "." + dir;
        P.add(prefix + ".w", width, 4 * h);
        P.add(prefix + ".u", h, 4 * h);
        P.add(prefix + ".b", 1, 4 * h);
      }
      width = 2 * h;
    }
  }
  dense("post", width, spec_.post_dim);
  dense("output", spec_.scanlines * spec_.post_dim, spec_.output_dim);
}

template <typename T>
void Model<T>::build_cnn() {
  const auto& c = spec_.cnn;
  int in_c = 1, h = spec_.scanlines, w = spec_.samples;
  for (std::size_t i = 0; i < c.channels.size(); ++i) {
    const std::string prefix = "conv" + std::to_string(i);
    params_.add(prefix + ".w", c.kernel * c.kernel * in_c, c.channels[i]);
    params_.add(prefix + ".b", 1, c.channels[i]);
    in_c = c.channels[i];
    h = (h + c.stride - 1) / c.stride;
    w = (w + c.stride - 1) / c.stride;
  }
  params_.add("dense.w", (h / c.pool) * (w / c.pool) * in_c, c.dense_units);
  params_.add("dense.b", 1, c.dense_units);
  params_.add("output.w", c.dense_units, spec_.output_dim);
  params_.add("output.b", 1, spec_.output_dim);
}

template <typename T>
void Model<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](Mat<T>& m, double limit) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  };
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& ptr : params_) {
    auto& p = *ptr;
    auto& v = p.value;
    const double rows = static_cast<double>(v.rows()), cols = static_cast<double>(v.cols());
    if (ends_with(p.name, ".gamma")) {
      v.setOnes();
    } else if (ends_with(p.name, ".beta")) {
      v.setZero();
    } else if (p.name.rfind("lstm", 0) == 0 && ends_with(p.name, ".b")) {
      const auto h = v.cols() / 4;
      v.setZero();
      v.middleCols(h, h).setOnes();  // forget gate
    } else if (p.name.rfind("lstm", 0) == 0 && ends_with(p.name, ".u")) {
      // Orthogonal recurrent kernel: H x 4H with orthonormal rows.
      std::normal_distribution<double> normal(0.0, 1.0);
      Matrix a(v.cols(), v.rows());
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
      Eigen::HouseholderQR<Matrix> qr(a);
      Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
      const Eigen::VectorXd diag = qr.matrixQR().diagonal();
      for (Eigen::Index c = 0; c < q.cols(); ++c) {
        if (diag(c) < 0) q.col(c) *= -1.0;
      }
      v = q.transpose().template cast<T>();
    } else if (p.name == "block.conv.depthwise.w") {
      uniform(v, std::sqrt(6.0 / (2.0 * rows)));
    } else if (p.name == "block.conv.depthwise.b" || ends_with(p.name, ".b")) {
      v.setZero();
    } else if (p.name.rfind("conv", 0) == 0 && ends_with(p.name, ".w")) {
      // fan_in = k*k*in_c, fan_out = k*k*out_c
      const double k2 = static_cast<double>(spec_.cnn.kernel) * spec_.cnn.kernel;
      uniform(v, std::sqrt(6.0 / (rows + k2 * cols)));
    } else {
      uniform(v, std::sqrt(6.0 / (rows + cols)));
    }
    p.zero_grad();
  }
}

template <typename T>
nn::Var<T> Model<T>::conformer_block(nn::Graph<T>& g, Bound& p, nn::Var<T> x) {
  const auto& cfg = spec_.block;
  const int seq = spec_.scanlines;
  const double rate = cfg.dropout;
  auto feed_forward = [&](const std::string& name, nn::Var<T> in) {
    auto h = nn::layer_norm(g, in, p(name + ".norm.gamma"), p(name + ".norm.beta"));
    h = nn::linear(g, h, p(name + ".hidden.w"), p(name + ".hidden.b"));
    h = nn::dropout(g, nn::swish(g, h), rate);
    h = nn::linear(g, h, p(name + ".out.w"), p(name + ".out.b"));
    return nn::add_scaled(g, in, nn::dropout(g, h, rate), T(0.5));
  };

  x = feed_forward("block.ff1", x);

  auto h = nn::layer_norm(g, x, p("block.mhsa.norm.gamma"), p("block.mhsa.norm.beta"));
  auto q = nn::linear(g, h, p("block.mhsa.query.w"), p("block.mhsa.query.b"));
  auto k = nn::linear(g, h, p("block.mhsa.key.w"), p("block.mhsa.key.b"));
  auto v = nn::linear(g, h, p("block.mhsa.value.w"), p("block.mhsa.value.b"));
  h = nn::relative_attention(g, q, k, v, p("block.mhsa.relative"), cfg.attention_heads, seq);
  h = nn::linear(g, h, p("block.mhsa.out.w"), p("block.mhsa.out.b"));
  x = nn::add(g, x, nn::dropout(g, h, rate));

  h = nn::layer_norm(g, x, p("block.conv.norm.gamma"), p("block.conv.norm.beta"));
  h = nn::glu(g, nn::linear(g, h, p("block.conv.expand.w"), p("block.conv.expand.b")));
  h = nn::depthwise_conv1d(g, h, p("block.conv.depthwise.w"), p("block.conv.depthwise.b"), seq);
  h = nn::sequence_norm(g, h, p("block.conv.seqnorm.gamma"), p("block.conv.seqnorm.beta"), seq);
  h = nn::linear(g, nn::swish(g, h), p("block.conv.out.w"), p("block.conv.out.b"));
  x = nn::add(g, x, nn::dropout(g, h, rate));

  x = feed_forward("block.ff2", x);
  return nn::layer_norm(g, x, p("block.norm.gamma"), p("block.norm.beta"));
}

template <typename T>
nn::Var<T> Model<T>::conformer_forward(nn::Graph<T>& g, Bound& p, nn::Var<T> x) {
  const auto batch = x->value.rows();
  const int seq = spec_.scanlines;
  x = nn::reshape(g, x, batch * seq, spec_.samples);
  x = nn::linear(g, x, p("input.w"), p("input.b"));
  x = conformer_block(g, p, x);
  if (spec_.kind == ModelKind::kConformerBilstm) {
    for (int l = 0; l < spec_.bilstm_layers; ++l) {
      const std::string prefix = "lstm" + std::to_string(l);
      auto fw = nn::lstm(g, x, p(prefix + ".fw.w"), p(prefix + ".fw.u"), p(prefix + ".fw.b"), seq, false);
      auto bw = nn::lstm(g, x, p(prefix + ".bw.w"), p(prefix + ".bw.u"), p(prefix + ".bw.b"), seq, true);
      x = nn::concat_cols(g, fw, bw);
    }
  }
  x = nn::linear(g, x, p("post.w"), p("post.b"));
  x = nn::reshape(g, x, batch, static_cast<Eigen::Index>(seq) * spec_.post_dim);
  return nn::linear(g, x, p("output.w"), p("output.b"));
}

template <typename T>
nn::Var<T> Model<T>::cnn_forward(nn::Graph<T>& g, Bound& p, nn::Var<T> x) {
  const auto& c = spec_.cnn;
  int in_c = 1, h = spec_.scanlines, w = spec_.samples;
  for (std::size_t i = 0; i < c.channels.size(); ++i) {
    nn::Conv2dShape shape;
    shape.in_h = h;
    shape.in_w = w;
    shape.in_c = in_c;
    shape.out_c = c.channels[i];
    shape.kernel_h = shape.kernel_w = c.kernel;
    shape.stride_h = shape.stride_w = c.stride;
    const std::string prefix = "conv" + std::to_string(i);
    x = nn::relu(g, nn::conv2d(g, x, p(prefix + ".w"), p(prefix + ".b"), shape));
    in_c = shape.out_c;
    h = shape.out_h();
    w = shape.out_w();
  }
  x = nn::max_pool2d(g, x, nn::Pool2dShape{h, w, in_c, c.pool});
  x = nn::relu(g, nn::linear(g, x, p("dense.w"), p("dense.b")));
  x = nn::dropout(g, x, c.dropout);
  return nn::linear(g, x, p("output.w"), p("output.b"));
}

template <typename T>
nn::Var<T> Model<T>::forward(nn::Graph<T>& g, const Mat<T>& frames) {
  if (frames.cols() != spec_.frame_size()) {
    throw ShapeError("expected " + std::to_string(spec_.frame_size()) + " values per frame, got " +
                     std::to_string(frames.cols()));
  }
  Bound bound{g, params_, {}};
  auto x = g.constant(frames);
  return spec_.is_conformer() ? conformer_forward(g, bound, x) : cnn_forward(g, bound, x);
}

template <typename T>
Mat<T> Model<T>::predict(const Mat<T>& frames, int batch) {
  if (batch < 1) throw PreconditionError("batch must be >= 1");
  Mat<T> out(frames.rows(), spec_.output_dim);
  for (Eigen::Index start = 0; start < frames.rows(); start += batch) {
    const auto n = std::min<Eigen::Index>(batch, frames.rows() - start);
    nn::Graph<T> g(nn::Mode::kInference);
    out.middleRows(start, n) = forward(g, frames.middleRows(start, n))->value;
  }
  return out;
}

template class Model<float>;
template class Model<double>;

template <typename To, typename From>
void copy_parameters(const Model<From>& from, Model<To>& to) {
  auto src = from.parameters().begin();
  for (auto& dst : to.parameters()) {
    if ((*src)->name != dst->name) throw ShapeError("parameter sets differ");
    dst->value = (*src)->value.template cast<To>();
    ++src;
  }
}

template void copy_parameters<double, float>(const Model<float>&, Model<double>&);
template void copy_parameters<float, double>(const Model<double>&, Model<float>&);

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kWeightsMagic[4] = {'U', 'T', 'S', 'W'};

static_assert(std::endian::native == std::endian::little, "weight archives assume little-endian hosts");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw MalformedFileError("truncated weight archive");
  return v;
}

}  // namespace

void write_weights(const std::filesystem::path& path, const nn::ParameterSet<float>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write(kWeightsMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(params.count()));
  for (const auto& p : params) {
    put_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u32(os, static_cast<std::uint32_t>(p->value.rows()));
    put_u32(os, static_cast<std::uint32_t>(p->value.cols()));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!os) throw Error("failed writing " + path.string());
}

void read_weights(const std::filesystem::path& path, nn::ParameterSet<float>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NotFoundError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kWeightsMagic, 4) != 0) {
    throw MalformedFileError(path.string() + " is not a weight archive");
  }
  const auto count = get_u32(is);
  if (count != params.count()) throw ShapeError("weight archive holds a different parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_u32(is);
    if (len > 4096) throw MalformedFileError("implausible tensor name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw MalformedFileError("truncated weight archive");
    const auto rows = get_u32(is), cols = get_u32(is);
    auto& p = params.at(name);
    if (p.value.rows() != rows || p.value.cols() != cols) {
      throw ShapeError("tensor " + name + " has an unexpected shape");
    }
    if (!is.read(reinterpret_cast<char*>(p.value.data()),
                 static_cast<std::streamsize>(p.value.size() * sizeof(float)))) {
      throw MalformedFileError("truncated weight archive");
    }
  }
}

void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model,
                     const std::optional<dsp::MelStats>& stats, const std::string& speaker) {
  std::filesystem::create_directories(dir);
  write_weights(dir / "weights.bin", model.parameters());
  json manifest{{"spec", spec_to_json(model.spec())},
                {"parameter_count", model.parameters().total_size()},
                {"speaker", speaker}};
  if (stats) {
    manifest["mel_stats"] = {
        {"mean", std::vector<double>(stats->mean.data(), stats->mean.data() + stats->mean.size())},
        {"std", std::vector<double>(stats->std.data(), stats->std.data() + stats->std.size())}};
  }
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
  if (!os) throw Error("failed writing checkpoint manifest in " + dir.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw NotFoundError("no checkpoint manifest in " + dir.string());
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw MalformedFileError(std::string("bad checkpoint manifest: ") + e.what());
  }
  Checkpoint ckpt;
  ckpt.spec = spec_from_json(manifest.at("spec"));
  ckpt.model = std::make_unique<Model<float>>(ckpt.spec, 0);
  read_weights(dir / "weights.bin", ckpt.model->parameters());
  ckpt.speaker = manifest.value("speaker", "");
  if (manifest.contains("mel_stats")) {
    const auto mean = manifest["mel_stats"]["mean"].get<std::vector<double>>();
    const auto sd = manifest["mel_stats"]["std"].get<std::vector<double>>();
    dsp::MelStats stats;
    stats.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    stats.std = Eigen::Map<const Eigen::RowVectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    ckpt.mel_stats = std::move(stats);
  }
  return ckpt;
}

}  // namespace uts::models
