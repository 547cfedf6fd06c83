// SPDX-License-Identifier: Apache-2.0
#include "gkd/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace gkd {

void MLPSpec::validate() const {
  if (input_dim < 1 || embedding_dim < 1) {
    throw std::invalid_argument("MLP dimensions must be >= 1");
  }
  if (hidden_dims.empty()) {
    throw std::invalid_argument("MLP needs at least one hidden layer");
  }
  for (std::size_t h : hidden_dims) {
    if (h < 1) throw std::invalid_argument("MLP dimensions must be >= 1");
  }
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = static_cast<std::size_t>(head.weights.size());
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

ModelBundle init_model(const MLPSpec& spec, const HeadSpec& head,
                       std::uint64_t seed) {
  spec.validate();
  if (head.num_classes < 2) {
    throw std::invalid_argument("head needs at least two classes");
  }
  std::mt19937_64 rng(seed);
  ModelBundle m;
  m.spec = spec;
  m.seed = seed;

  std::vector<std::size_t> dims{spec.input_dim};
  dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  dims.push_back(spec.embedding_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(dims[l]);
    const auto fan_out = static_cast<Eigen::Index>(dims[l + 1]);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(fan_out, fan_in);
    for (Eigen::Index r = 0; r < fan_out; ++r) {
      for (Eigen::Index c = 0; c < fan_in; ++c) layer.weight(r, c) = u(rng);
    }
    layer.bias = Eigen::VectorXd::Zero(fan_out);
    m.layers.push_back(std::move(layer));
  }

  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd w(static_cast<Eigen::Index>(head.num_classes),
                    static_cast<Eigen::Index>(spec.embedding_dim));
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = n01(rng);
    w.row(r).normalize();
  }
  m.head = CosineHead{std::move(w), head.scale, head.margin, head.kind};
  m.head.validate();
  return m;
}

ForwardResult forward(const ModelBundle& m, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != m.spec.input_dim) {
    throw std::invalid_argument("input dimension mismatch");
  }
  ForwardResult r;
  r.cache.inputs.reserve(m.layers.size());
  r.cache.pre.reserve(m.layers.size());
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    Eigen::MatrixXd z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    r.cache.inputs.push_back(std::move(h));
    const bool last = l + 1 == m.layers.size();
    h = last ? z : Eigen::MatrixXd(z.cwiseMax(0.0));
    r.cache.pre.push_back(std::move(z));
  }
  r.embeddings = std::move(h);
  return r;
}

SampleForward forward(const ModelBundle& m, std::span<const double> x) {
  const Eigen::MatrixXd row = Eigen::Map<const Eigen::RowVectorXd>(
      x.data(), static_cast<Eigen::Index>(x.size()));
  auto r = forward(m, row);
  SampleForward out;
  out.embedding.assign(r.embeddings.data(),
                       r.embeddings.data() + r.embeddings.size());
  out.cache = std::move(r.cache);
  return out;
}

Eigen::MatrixXd embed(const ModelBundle& m, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != m.spec.input_dim) {
    throw std::invalid_argument("input dimension mismatch");
  }
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    Eigen::MatrixXd z = h * m.layers[l].weight.transpose();
    z.rowwise() += m.layers[l].bias.transpose();
    h = l + 1 == m.layers.size() ? std::move(z) : Eigen::MatrixXd(z.cwiseMax(0.0));
  }
  return h;
}

Gradients Gradients::zeros_like(const ModelBundle& m) {
  Gradients g;
  for (const auto& l : m.layers) {
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
  }
  g.head_weights = Eigen::MatrixXd::Zero(m.head.weights.rows(), m.head.weights.cols());
  return g;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.layers.size() != layers.size()) {
    throw std::invalid_argument("gradient shape mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight += other.layers[l].weight;
    layers[l].bias += other.layers[l].bias;
  }
  head_weights += other.head_weights;
  return *this;
}

Gradients backward(const ModelBundle& m, const ForwardCache& cache,
                   const Eigen::MatrixXd& grad_embeddings) {
  if (m.frozen) throw std::logic_error("backward on frozen model");
  if (cache.inputs.size() != m.layers.size() || cache.pre.size() != m.layers.size()) {
    throw std::invalid_argument("cache does not match model");
  }
  Gradients g;
  g.layers.resize(m.layers.size());
  g.head_weights = Eigen::MatrixXd::Zero(m.head.weights.rows(), m.head.weights.cols());
  Eigen::MatrixXd upstream = grad_embeddings;
  for (std::size_t i = m.layers.size(); i-- > 0;) {
    const bool last = i + 1 == m.layers.size();
    if (!last) {
      upstream = (cache.pre[i].array() > 0.0).select(upstream, 0.0);
    }
    g.layers[i].weight.noalias() = upstream.transpose() * cache.inputs[i];
    g.layers[i].bias = upstream.colwise().sum().transpose();
    if (i > 0) upstream = upstream * m.layers[i].weight;
  }
  return g;
}

std::vector<std::span<double>> parameter_views(ModelBundle& m) {
  std::vector<std::span<double>> v;
  for (auto& l : m.layers) {
    v.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    v.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  v.emplace_back(m.head.weights.data(), static_cast<std::size_t>(m.head.weights.size()));
  return v;
}

std::vector<std::span<const double>> parameter_views(const ModelBundle& m) {
  std::vector<std::span<const double>> v;
  for (const auto& l : m.layers) {
    v.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    v.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  v.emplace_back(m.head.weights.data(), static_cast<std::size_t>(m.head.weights.size()));
  return v;
}

std::vector<std::span<const double>> gradient_views(const Gradients& g) {
  std::vector<std::span<const double>> v;
  for (const auto& l : g.layers) {
    v.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    v.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  v.emplace_back(g.head_weights.data(), static_cast<std::size_t>(g.head_weights.size()));
  return v;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd kd_logits(const ModelBundle& m, const Eigen::MatrixXd& x,
                          std::span<const std::size_t> labels,
                          KDLogitsSource source) {
  const auto fwd = cosine_forward(embed(m, x), m.head);
  if (source == KDLogitsSource::pre_margin) return m.head.scale * fwd.cosines;
  return apply_margin(fwd.cosines, labels, m.head).logits;
}

namespace {

struct StepCore {
  LossTerms terms;
  Eigen::MatrixXd grad_cos;  // B x C, d L / d cosines
  ForwardResult fwd;
  CosineBatch cos;
};

StepCore evaluate(const Eigen::MatrixXd& teacher_logits, const ModelBundle& student,
                  const Batch& batch, const LossSetup& setup, bool want_grad) {
  const auto b = batch.features.rows();
  if (b == 0) throw std::invalid_argument("empty batch");
  if (batch.labels.size() != static_cast<std::size_t>(b)) {
    throw std::invalid_argument("label count does not match batch");
  }
  const auto c = static_cast<Eigen::Index>(student.num_classes());
  const bool distill = setup.variant.has_value();
  if (distill && (teacher_logits.rows() != b || teacher_logits.cols() != c)) {
    throw std::invalid_argument("teacher logits shape does not match batch");
  }

  StepCore s;
  s.fwd = forward(student, batch.features);
  s.cos = cosine_forward(s.fwd.embeddings, student.head);
  const auto marg = apply_margin(s.cos.cosines, batch.labels, student.head);
  const double scale = student.head.scale;
  const double inv_b = 1.0 / static_cast<double>(b);

  // Row-major copies so each sample's logits are contiguous.
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMat cls_logits = marg.logits;
  const RowMat kd_student =
      setup.kd_source == KDLogitsSource::pre_margin ? RowMat(scale * s.cos.cosines)
                                                    : cls_logits;
  const RowMat kd_teacher = distill ? RowMat(teacher_logits) : RowMat();

  // d L / d (student logits) on the classification and KD paths.
  RowMat g_cls(want_grad ? b : 0, want_grad ? c : 0);
  RowMat g_kd = RowMat::Zero(want_grad && distill ? b : 0, want_grad && distill ? c : 0);
  std::vector<double> p(static_cast<std::size_t>(c));

  LossTerms& t = s.terms;
  for (Eigen::Index i = 0; i < b; ++i) {
    const std::span<const double> row(cls_logits.row(i).data(), static_cast<std::size_t>(c));
    const auto y = batch.labels[static_cast<std::size_t>(i)];
    t.cls += ce_loss(row, y);
    if (want_grad) {
      softmax_into(row, 1.0, p);
      for (Eigen::Index j = 0; j < c; ++j) g_cls(i, j) = p[static_cast<std::size_t>(j)];
      g_cls(i, static_cast<Eigen::Index>(y)) -= 1.0;
    }
    if (!distill) continue;
    const std::span<const double> zt(kd_teacher.row(i).data(), static_cast<std::size_t>(c));
    const std::span<const double> zs(kd_student.row(i).data(), static_cast<std::size_t>(c));
    std::span<double> grad = want_grad
        ? std::span<double>(g_kd.row(i).data(), static_cast<std::size_t>(c))
        : std::span<double>();
    const auto r = kd_forward_backward(*setup.variant, zt, zs, setup.kd, grad);
    t.kd += r.loss;
    t.full_kd += r.terms.full_kd;
    t.primary += r.terms.primary;
    t.secondary += r.terms.secondary;
    t.binary += r.terms.binary;
    t.residual += r.terms.residual;
    t.max_residual = std::max(t.max_residual, r.terms.residual);
    t.mean_k += static_cast<double>(r.k);
    t.p_phi_t += r.terms.p_phi_t;
  }
  for (double* v : {&t.cls, &t.kd, &t.full_kd, &t.primary, &t.secondary, &t.binary,
                    &t.residual, &t.mean_k, &t.p_phi_t}) {
    *v *= inv_b;
  }
  t.total = t.cls + t.kd;
  if (!want_grad) return s;

  // Chain through the scale and the label-entry margin slope.
  Eigen::MatrixXd g_margined = g_cls;
  Eigen::MatrixXd g_plain = Eigen::MatrixXd::Zero(b, c);
  if (distill) {
    if (setup.kd_source == KDLogitsSource::post_margin) {
      g_margined += g_kd;
    } else {
      g_plain = g_kd;
    }
  }
  for (Eigen::Index i = 0; i < b; ++i) {
    g_margined(i, static_cast<Eigen::Index>(batch.labels[static_cast<std::size_t>(i)])) *=
        marg.target_slope(i);
  }
  s.grad_cos = (scale * inv_b) * (g_margined + g_plain);
  return s;
}

}  // namespace

LossTerms total_loss(const Eigen::MatrixXd& teacher_logits, const ModelBundle& student,
                     const Batch& batch, const LossSetup& setup) {
  return evaluate(teacher_logits, student, batch, setup, false).terms;
}

StepResult total_loss_step(const Eigen::MatrixXd& teacher_logits,
                           const ModelBundle& student, const Batch& batch,
                           const LossSetup& setup) {
  if (student.frozen) throw std::logic_error("backward on frozen model");
  auto core = evaluate(teacher_logits, student, batch, setup, true);
  const auto head_g = cosine_backward(core.cos, core.grad_cos);
  StepResult out;
  out.terms = core.terms;
  out.grads = backward(student, core.fwd.cache, head_g.embeddings);
  out.grads.head_weights = head_g.weights;
  return out;
}

StepResult total_loss_step(const ModelBundle& teacher, const ModelBundle& student,
                           const Batch& batch, const LossSetup& setup) {
  if (!teacher.frozen) throw std::logic_error("teacher must be frozen");
  if (teacher.num_classes() != student.num_classes()) {
    throw std::invalid_argument("teacher/student class count mismatch");
  }
  Eigen::MatrixXd zt;
  if (setup.variant) {
    zt = kd_logits(teacher, batch.features, batch.labels, setup.kd_source);
  }
  return total_loss_step(zt, student, batch, setup);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'G', 'K', 'D', '1'};

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(buf), std::end(buf));
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw std::runtime_error("checkpoint truncated");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(buf), std::end(buf));
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

void append_row_major(std::vector<double>& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
}

void read_row_major(std::span<const double> src, Eigen::MatrixXd& m) {
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = src[k++];
  }
}

}  // namespace

Checkpoint save(const ModelBundle& m) {
  Checkpoint ck;
  ck.spec = m.spec;
  ck.head = HeadSpec{m.head.num_classes(), m.head.kind, m.head.scale, m.head.margin};
  ck.frozen = m.frozen;
  ck.rng_seed = m.seed;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    ck.shapes.push_back({"layer" + std::to_string(l) + ".weight",
                         static_cast<std::size_t>(layer.weight.rows()),
                         static_cast<std::size_t>(layer.weight.cols())});
    append_row_major(ck.values, layer.weight);
    ck.shapes.push_back({"layer" + std::to_string(l) + ".bias",
                         static_cast<std::size_t>(layer.bias.size()), 1});
    append_row_major(ck.values, layer.bias);
  }
  ck.shapes.push_back({"head.weight", m.head.num_classes(), m.head.dim()});
  append_row_major(ck.values, m.head.weights);
  return ck;
}

ModelBundle load(const Checkpoint& ck) {
  if (ck.format_version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint format_version " +
                             std::to_string(ck.format_version));
  }
  ModelBundle m = init_model(ck.spec, ck.head, ck.rng_seed);
  const std::size_t expected_tensors = 2 * m.layers.size() + 1;
  if (ck.shapes.size() != expected_tensors) {
    throw std::runtime_error("checkpoint shape table does not match spec");
  }
  std::size_t offset = 0;
  std::size_t ti = 0;
  auto take = [&](Eigen::MatrixXd& dst) {
    const auto& sh = ck.shapes[ti++];
    if (sh.rows != static_cast<std::size_t>(dst.rows()) ||
        sh.cols != static_cast<std::size_t>(dst.cols())) {
      throw std::runtime_error("checkpoint tensor shape mismatch: " + sh.name);
    }
    const std::size_t n = sh.rows * sh.cols;
    if (offset + n > ck.values.size()) throw std::runtime_error("checkpoint truncated");
    read_row_major(std::span<const double>(ck.values).subspan(offset, n), dst);
    offset += n;
  };
  for (auto& layer : m.layers) {
    take(layer.weight);
    Eigen::MatrixXd bias(layer.bias.size(), 1);
    take(bias);
    layer.bias = bias.col(0);
  }
  take(m.head.weights);
  if (offset != ck.values.size()) {
    throw std::runtime_error("checkpoint has trailing parameters");
  }
  m.frozen = ck.frozen;
  return m;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::ordered_json h;
  h["spec"] = {{"input_dim", ck.spec.input_dim},
               {"hidden_dims", ck.spec.hidden_dims},
               {"embedding_dim", ck.spec.embedding_dim},
               {"activation", "relu"}};
  h["head"] = {{"num_classes", ck.head.num_classes},
               {"kind", std::string(to_string(ck.head.kind))},
               {"scale", ck.head.scale},
               {"margin", ck.head.margin}};
  h["frozen"] = ck.frozen;
  h["rng_seed"] = ck.rng_seed;
  auto& tensors = h["tensors"] = nlohmann::ordered_json::array();
  for (const auto& s : ck.shapes) {
    tensors.push_back({{"name", s.name}, {"shape", {s.rows, s.cols}}});
  }
  const std::string header = h.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, ck.format_version);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (double v : ck.values) put_le<double>(os, v);
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("not a GKD checkpoint (bad magic)");
  }
  Checkpoint ck;
  ck.format_version = get_le<std::uint32_t>(is);
  if (ck.format_version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint format_version " +
                             std::to_string(ck.format_version));
  }
  const auto len = get_le<std::uint32_t>(is);
  std::string header(len, '\0');
  if (!is.read(header.data(), len)) throw std::runtime_error("checkpoint truncated");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
    const auto& s = h.at("spec");
    ck.spec.input_dim = s.at("input_dim").get<std::size_t>();
    ck.spec.hidden_dims = s.at("hidden_dims").get<std::vector<std::size_t>>();
    ck.spec.embedding_dim = s.at("embedding_dim").get<std::size_t>();
    if (s.at("activation").get<std::string>() != "relu") {
      throw std::runtime_error("unsupported activation");
    }
    const auto& hd = h.at("head");
    ck.head.num_classes = hd.at("num_classes").get<std::size_t>();
    ck.head.kind = parse_head_kind(hd.at("kind").get<std::string>());
    ck.head.scale = hd.at("scale").get<double>();
    ck.head.margin = hd.at("margin").get<double>();
    ck.frozen = h.at("frozen").get<bool>();
    ck.rng_seed = h.at("rng_seed").get<std::uint64_t>();
    for (const auto& t : h.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw std::runtime_error("tensor shape must be 2-D");
      ck.shapes.push_back({t.at("name").get<std::string>(), shape[0], shape[1]});
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("corrupt checkpoint header: ") + e.what());
  }

  std::size_t total = 0;
  for (const auto& s : ck.shapes) total += s.rows * s.cols;
  ck.values.resize(total);
  for (double& v : ck.values) v = get_le<double>(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("checkpoint has trailing bytes");
  }
  return ck;
}

void save_model(const std::filesystem::path& path, const ModelBundle& m) {
  write_checkpoint(path, save(m));
}

ModelBundle load_model(const std::filesystem::path& path) {
  return load(read_checkpoint(path));
}

}  // namespace gkd
