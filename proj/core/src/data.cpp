// SPDX-License-Identifier: Apache-2.0
#include "gkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <utility>

namespace gkd {

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("need at least two classes");
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
  if (samples_per_class < 1) {
    throw std::invalid_argument("samples_per_class must be >= 1");
  }
  if (!(noise_sigma > 0.0)) throw std::invalid_argument("noise_sigma must be > 0");
  if (!(center_scale > 0.0)) throw std::invalid_argument("center_scale must be > 0");
  if (!(nuisance_scale >= 0.0)) {
    throw std::invalid_argument("nuisance_scale must be >= 0");
  }
}

namespace {

Eigen::MatrixXd sphere_points(std::size_t n, std::size_t dim, double radius,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd c(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index r = 0; r < c.rows(); ++r) {
    for (Eigen::Index k = 0; k < c.cols(); ++k) c(r, k) = n01(rng);
    c.row(r) *= radius / c.row(r).norm();
  }
  return c;
}

Dataset sample_around(const Eigen::MatrixXd& centers, std::size_t per_class,
                      double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  Dataset d;
  d.num_classes = static_cast<std::size_t>(centers.rows());
  const auto n = static_cast<Eigen::Index>(d.num_classes * per_class);
  d.features.resize(n, centers.cols());
  d.labels.resize(static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      for (Eigen::Index k = 0; k < centers.cols(); ++k) {
        d.features(row, k) = centers(c, k) + noise(rng);
      }
      d.labels[static_cast<std::size_t>(row)] = static_cast<std::size_t>(c);
    }
  }
  return d;
}

}  // namespace

SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const Eigen::MatrixXd train_centers =
      sphere_points(spec.num_classes, spec.feature_dim, spec.center_scale, rng);
  const Eigen::MatrixXd eval_centers =
      spec.disjoint_eval
          ? sphere_points(spec.eval_classes, spec.feature_dim, spec.center_scale, rng)
          : train_centers;
  SyntheticData out;
  out.train = sample_around(train_centers, spec.samples_per_class, spec.noise_sigma, rng);
  out.eval = sample_around(eval_centers, spec.eval_samples_per_class, spec.noise_sigma, rng);
  out.train_centers = train_centers;
  out.eval_centers = eval_centers;
  if (spec.nuisance_dim > 0) {
    const auto d = static_cast<Eigen::Index>(spec.feature_dim);
    const auto q = static_cast<Eigen::Index>(spec.nuisance_dim);
    std::normal_distribution<double> n01(0.0, 1.0);
    Eigen::MatrixXd a(d, d), b(d, q);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n01(rng) / std::sqrt(double(d));
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = n01(rng) / std::sqrt(double(q));
    auto render = [&](Dataset& ds) {
      Eigen::MatrixXd v(ds.features.rows(), q);
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = n01(rng);
      ds.features = (ds.features * a.transpose() +
                     spec.nuisance_scale * v * b.transpose()).array().tanh().matrix();
    };
    render(out.train);
    render(out.eval);
  }
  return out;
}

void flip_augment(Eigen::MatrixXd& rows, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  const Eigen::Index half = rows.cols() / 2;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    if (coin(rng)) rows.row(r).tail(rows.cols() - half) *= -1.0;
  }
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_be32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("IDX file truncated");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_be32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(b, 4);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open IDX file: " + path.string());
  return is;
}

void read_payload(std::istream& is, std::vector<std::uint8_t>& out) {
  if (!is.read(reinterpret_cast<char*>(out.data()),
               static_cast<std::streamsize>(out.size()))) {
    throw std::runtime_error("IDX file truncated");
  }
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  auto is = open_in(path);
  if (read_be32(is) != kIdxImagesMagic) {
    throw std::runtime_error("bad IDX magic for images: " + path.string());
  }
  IdxImages img;
  img.count = read_be32(is);
  img.rows = read_be32(is);
  img.cols = read_be32(is);
  img.pixels.resize(std::size_t{img.count} * img.rows * img.cols);
  read_payload(is, img.pixels);
  return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  auto is = open_in(path);
  if (read_be32(is) != kIdxLabelsMagic) {
    throw std::runtime_error("bad IDX magic for labels: " + path.string());
  }
  std::vector<std::uint8_t> labels(read_be32(is));
  read_payload(is, labels);
  return labels;
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  if (images.pixels.size() != std::size_t{images.count} * images.rows * images.cols) {
    throw std::invalid_argument("IDX pixel count does not match dimensions");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write IDX file: " + path.string());
  write_be32(os, kIdxImagesMagic);
  write_be32(os, images.count);
  write_be32(os, images.rows);
  write_be32(os, images.cols);
  os.write(reinterpret_cast<const char*>(images.pixels.data()),
           static_cast<std::streamsize>(images.pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path,
                      std::span<const std::uint8_t> labels) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write IDX file: " + path.string());
  write_be32(os, kIdxLabelsMagic);
  write_be32(os, static_cast<std::uint32_t>(labels.size()));
  os.write(reinterpret_cast<const char*>(labels.data()),
           static_cast<std::streamsize>(labels.size()));
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto img = read_idx_images(images_path);
  const auto lab = read_idx_labels(labels_path);
  if (lab.size() != img.count) {
    throw std::runtime_error("IDX image/label count mismatch");
  }
  const std::size_t dim = std::size_t{img.rows} * img.cols;
  Dataset d;
  d.features.resize(img.count, static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < img.count; ++i) {
    for (std::size_t k = 0; k < dim; ++k) {
      d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          normalize_pixel(img.pixels[i * dim + k]);
    }
  }
  d.labels.assign(lab.begin(), lab.end());
  d.num_classes = lab.empty() ? 0 : *std::max_element(lab.begin(), lab.end()) + 1u;
  return d;
}

// ---------------------------------------------------------------------------
// Pairs

PairList make_pairs(std::span<const std::size_t> labels, std::size_t num_pairs,
                    std::uint64_t seed) {
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  std::vector<const std::vector<std::size_t>*> pos_classes;
  std::vector<double> pos_weights;
  double available_pos = 0.0;
  for (const auto& [_, members] : by_class) {
    if (members.size() < 2) continue;
    const double n = static_cast<double>(members.size());
    pos_classes.push_back(&members);
    pos_weights.push_back(n * (n - 1) / 2);
    available_pos += n * (n - 1) / 2;
  }
  if (pos_classes.empty()) {
    throw std::invalid_argument("insufficient data: no class has two samples");
  }
  if (by_class.size() < 2) {
    throw std::invalid_argument("insufficient data: need two classes for negatives");
  }
  double available_neg = 0.0;
  {
    const double total = static_cast<double>(labels.size());
    double same = 0.0;
    for (const auto& [_, members] : by_class) {
      const double n = static_cast<double>(members.size());
      same += n * (n - 1) / 2;
    }
    available_neg = total * (total - 1) / 2 - same;
  }

  const std::size_t half = num_pairs / 2;
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick_class(pos_weights.begin(), pos_weights.end());
  std::uniform_int_distribution<std::size_t> pick_any(0, labels.size() - 1);

  auto key = [](std::size_t a, std::size_t b) {
    return std::make_pair(std::min(a, b), std::max(a, b));
  };
  std::set<std::pair<std::size_t, std::size_t>> seen;

  std::vector<Pair> pos;
  pos.reserve(half);
  while (pos.size() < half) {
    const auto& members = *pos_classes[pick_class(rng)];
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    const std::size_t a = members[pick(rng)];
    const std::size_t b = members[pick(rng)];
    if (a == b) continue;
    const bool fresh = seen.insert(key(a, b)).second;
    if (!fresh && static_cast<double>(seen.size()) < available_pos) continue;
    pos.push_back({std::min(a, b), std::max(a, b), true});
  }
  seen.clear();
  std::vector<Pair> neg;
  neg.reserve(half);
  while (neg.size() < half) {
    const std::size_t a = pick_any(rng);
    const std::size_t b = pick_any(rng);
    if (labels[a] == labels[b]) continue;
    const bool fresh = seen.insert(key(a, b)).second;
    if (!fresh && static_cast<double>(seen.size()) < available_neg) continue;
    neg.push_back({std::min(a, b), std::max(a, b), false});
  }

  PairList out;
  out.pairs.reserve(2 * half);
  out.folds.reserve(2 * half);
  for (std::size_t i = 0; i < half; ++i) {
    const int fold = static_cast<int>(i % kNumFolds);
    out.pairs.push_back(pos[i]);
    out.folds.push_back(fold);
    out.pairs.push_back(neg[i]);
    out.folds.push_back(fold);
  }
  return out;
}

void write_pairs_csv(const std::filesystem::path& path, const PairList& pairs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write pairs CSV: " + path.string());
  os << "index_a,index_b,same,fold\n";
  for (std::size_t i = 0; i < pairs.pairs.size(); ++i) {
    const auto& p = pairs.pairs[i];
    os << p.a << ',' << p.b << ',' << (p.same ? 1 : 0) << ',' << pairs.folds[i] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Verification

std::vector<double> pair_similarities(const Eigen::MatrixXd& embeddings,
                                      const PairList& pairs) {
  const Eigen::VectorXd norms = embeddings.rowwise().norm();
  std::vector<double> sims;
  sims.reserve(pairs.pairs.size());
  for (const auto& p : pairs.pairs) {
    const auto a = static_cast<Eigen::Index>(p.a);
    const auto b = static_cast<Eigen::Index>(p.b);
    if (a >= embeddings.rows() || b >= embeddings.rows()) {
      throw std::invalid_argument("pair index out of range");
    }
    if (norms(a) == 0.0 || norms(b) == 0.0) {
      sims.push_back(0.0);
      continue;
    }
    sims.push_back(embeddings.row(a).dot(embeddings.row(b)) / (norms(a) * norms(b)));
  }
  return sims;
}

double best_threshold(std::span<const double> sims, const std::vector<bool>& same) {
  if (sims.size() != same.size()) throw std::invalid_argument("size mismatch");
  const std::size_t n = sims.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return sims[a] < sims[b]; });

  // Threshold +inf: everything predicted different.
  std::size_t positives = 0;
  for (bool s : same) positives += s ? 1 : 0;
  std::size_t best_correct = n - positives;
  double best = std::numeric_limits<double>::infinity();

  // Walk thresholds from the largest sim downwards; at t = sims[idx[i]]
  // every pair with sim >= t is predicted same.
  std::size_t correct = n - positives;
  std::size_t i = n;
  while (i > 0) {
    const double t = sims[idx[i - 1]];
    while (i > 0 && sims[idx[i - 1]] == t) {
      correct += same[idx[i - 1]] ? 1 : std::size_t(-1);
      --i;
    }
    if (correct >= best_correct) {
      best_correct = correct;
      best = t;
    }
  }
  return best;
}

std::optional<double> tpr_at_fpr(std::span<const double> sims,
                                 const std::vector<bool>& same, double target) {
  std::vector<double> neg, pos;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    (same[i] ? pos : neg).push_back(sims[i]);
  }
  if (pos.empty() || neg.empty()) return std::nullopt;
  if (static_cast<double>(neg.size()) * target < 1.0 - 1e-9) return std::nullopt;
  std::sort(neg.begin(), neg.end(), std::greater<>());
  const auto allowed = static_cast<std::size_t>(
      std::floor(target * static_cast<double>(neg.size()) + 1e-9));
  if (allowed >= neg.size()) return 1.0;
  // Smallest threshold with at most `allowed` negatives at or above it lies
  // just above the (allowed+1)-th largest negative.
  const double cut = neg[allowed];
  const auto hits = std::count_if(pos.begin(), pos.end(), [&](double s) { return s > cut; });
  return static_cast<double>(hits) / static_cast<double>(pos.size());
}

VerificationReport verify(const Eigen::MatrixXd& embeddings, const PairList& pairs) {
  if (pairs.folds.size() != pairs.pairs.size()) {
    throw std::invalid_argument("fold assignment does not match pairs");
  }
  const auto sims = pair_similarities(embeddings, pairs);
  std::vector<bool> same;
  same.reserve(pairs.pairs.size());
  for (const auto& p : pairs.pairs) same.push_back(p.same);

  VerificationReport r;
  double acc_sum = 0.0;
  int used_folds = 0;
  for (int f = 0; f < kNumFolds; ++f) {
    std::vector<double> train_s, test_s;
    std::vector<bool> train_y, test_y;
    for (std::size_t i = 0; i < sims.size(); ++i) {
      if (pairs.folds[i] == f) {
        test_s.push_back(sims[i]);
        test_y.push_back(same[i]);
      } else {
        train_s.push_back(sims[i]);
        train_y.push_back(same[i]);
      }
    }
    if (test_s.empty()) continue;
    const double t = best_threshold(train_s, train_y);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test_s.size(); ++i) {
      correct += ((test_s[i] >= t) == test_y[i]) ? 1 : 0;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(test_s.size());
    r.fold_accuracy.push_back(acc);
    acc_sum += acc;
    ++used_folds;
  }
  r.accuracy = used_folds > 0 ? acc_sum / used_folds : 0.0;
  r.threshold = best_threshold(sims, same);
  for (double target : kFprTargets) {
    if (auto v = tpr_at_fpr(sims, same, target)) r.tpr_at_fpr[target] = *v;
  }
  return r;
}

}  // namespace gkd
