#pragma once

// Cross-domain evaluation: per-domain accuracy, mean/fluctuation aggregation,
// A-distance between feature distributions (linear-probe proxy), and PCA
// projection export for inspecting the learned embedding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "advstyle/mininet.hpp"
#include "advstyle/train.hpp"

namespace advstyle {

// ---------------------------------------------------------------------------
// Accuracy
// ---------------------------------------------------------------------------

// Top-1 accuracy in percent, eval mode. Batch size only controls chunking;
// the result is independent of it.
template <typename T>
double evaluate(MiniNet<T>& model, const Split& data, std::size_t batch_size = 256) {
  if (data.n == 0) throw ValueError("evaluate: empty split");
  if (batch_size < 1) throw ValueError("evaluate: batch_size must be >= 1");
  RngStream rng(0);  // eval mode draws no randomness; stream is inert
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.n; start += batch_size) {
    const std::size_t stop = std::min(data.n, start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Tensor<T> x = detail::batch_images<T>(data, idx);
    const std::vector<int> labels = detail::batch_labels(data, idx);
    const Tensor<T> logits = model.forward(x, Mode::eval, rng);
    correct += detail::count_correct(logits, labels);
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.n);
}

// Penultimate-layer (global-average-pooled) activations for a whole split.
template <typename T>
Tensor<T> extract_features(MiniNet<T>& model, const Split& data, std::size_t batch_size = 256) {
  if (data.n == 0) throw ValueError("extract_features: empty split");
  RngStream rng(0);
  std::vector<Tensor<T>> chunks;
  for (std::size_t start = 0; start < data.n; start += batch_size) {
    const std::size_t stop = std::min(data.n, start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Tensor<T> x = detail::batch_images<T>(data, idx);
    chunks.push_back(model.forward_with_features(x, Mode::eval, rng).features);
  }
  const std::size_t dim = chunks.front().shape()[1];
  Tensor<T> out = Tensor<T>::zeros({data.n, dim});
  std::size_t row = 0;
  for (const Tensor<T>& c : chunks) {
    std::copy(c.data().begin(), c.data().end(), out.data().begin() + row * dim);
    row += c.shape()[0];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct Aggregate {
  double mean = 0;
  double stddev = 0;  // sample (N-1) convention
};

inline Aggregate aggregate(const std::vector<double>& accs) {
  if (accs.size() < 2) throw ValueError("aggregate: need at least 2 domain accuracies");
  Aggregate a;
  for (double v : accs) a.mean += v;
  a.mean /= static_cast<double>(accs.size());
  double ss = 0;
  for (double v : accs) ss += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(ss / static_cast<double>(accs.size() - 1));
  return a;
}

// ---------------------------------------------------------------------------
// A-distance
// ---------------------------------------------------------------------------

// Proxy A-distance between two feature clouds: pool the rows with domain
// labels 0/1, shuffle, train a logistic probe on the first half, measure the
// held-out error eps on the second, and return 2*(1 - 2*eps) clipped to
// [0, 2]. The probe is full-batch gradient descent, 200 epochs, fixed lr.
template <typename T>
double a_distance(const Tensor<T>& features_a, const Tensor<T>& features_b,
                  std::uint64_t seed) {
  if (features_a.ndim() != 2 || features_b.ndim() != 2 ||
      features_a.shape()[1] != features_b.shape()[1])
    throw ShapeError("a_distance: expected N x D feature matrices with matching D, got " +
                     shape_str(features_a.shape()) + " and " + shape_str(features_b.shape()));
  const std::size_t na = features_a.shape()[0];
  const std::size_t nb = features_b.shape()[0];
  if (na < 2 || nb < 2)
    throw ValueError("a_distance: each feature set needs at least 2 points");
  const std::size_t n = na + nb;
  const std::size_t dim = features_a.shape()[1];

  // Pool and shuffle so both halves of the 50/50 split mix the two domains.
  std::vector<double> feat(n * dim);
  std::vector<double> label(n);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t d = 0; d < dim; ++d)
      feat[i * dim + d] = static_cast<double>(features_a.data()[i * dim + d]);
    label[i] = 0.0;
  }
  for (std::size_t i = 0; i < nb; ++i) {
    for (std::size_t d = 0; d < dim; ++d)
      feat[(na + i) * dim + d] = static_cast<double>(features_b.data()[i * dim + d]);
    label[na + i] = 1.0;
  }
  RngStream rng(derive_seed(seed, "adist"));
  const std::vector<std::size_t> perm = rng.permutation(n);
  const std::size_t n_train = n / 2;
  const std::size_t n_test = n - n_train;

  // Standardize with training-half statistics.
  std::vector<double> mu(dim, 0.0), sd(dim, 0.0);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t d = 0; d < dim; ++d) mu[d] += feat[perm[i] * dim + d];
  for (std::size_t d = 0; d < dim; ++d) mu[d] /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t d = 0; d < dim; ++d) {
      const double c = feat[perm[i] * dim + d] - mu[d];
      sd[d] += c * c;
    }
  for (std::size_t d = 0; d < dim; ++d)
    sd[d] = std::max(std::sqrt(sd[d] / static_cast<double>(n_train)), 1e-8);

  const auto x_at = [&](std::size_t row, std::size_t d) {
    return (feat[perm[row] * dim + d] - mu[d]) / sd[d];
  };

  // Logistic probe: w.x + b, sigmoid cross-entropy, 200 epochs of full-batch
  // gradient descent at a fixed learning rate.
  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  const double lr = 0.5;
  const int epochs = 200;
  for (int e = 0; e < epochs; ++e) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) {
      double z = b;
      for (std::size_t d = 0; d < dim; ++d) z += w[d] * x_at(i, d);
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = p - label[perm[i]];
      for (std::size_t d = 0; d < dim; ++d) gw[d] += err * x_at(i, d);
      gb += err;
    }
    for (std::size_t d = 0; d < dim; ++d) w[d] -= lr * gw[d] / static_cast<double>(n_train);
    b -= lr * gb / static_cast<double>(n_train);
  }

  std::size_t wrong = 0;
  for (std::size_t i = n_train; i < n; ++i) {
    double z = b;
    for (std::size_t d = 0; d < dim; ++d) z += w[d] * x_at(i, d);
    const double pred = z >= 0.0 ? 1.0 : 0.0;
    if (pred != label[perm[i]]) ++wrong;
  }
  const double eps = static_cast<double>(wrong) / static_cast<double>(n_test);
  return std::clamp(2.0 * (1.0 - 2.0 * eps), 0.0, 2.0);
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaResult {
  Tensor<double> coords;                  // N x dim
  std::vector<double> explained_ratios;   // per retained component
};

namespace detail {

// Cyclic Jacobi eigensolver for a symmetric matrix stored row-major.
inline void jacobi_eigen(std::vector<double>& a, std::size_t n, std::vector<double>& eigvals,
                         std::vector<double>& eigvecs) {
  eigvecs.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = eigvecs[k * n + p], vkq = eigvecs[k * n + q];
          eigvecs[k * n + p] = c * vkp - s * vkq;
          eigvecs[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  eigvals.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
}

}  // namespace detail

// Mean-centered projection onto the top `dim` principal components.
// Deterministic: each component's sign is fixed so its largest-magnitude
// loading is positive.
template <typename T>
PcaResult pca_project(const Tensor<T>& features, std::size_t dim = 2) {
  if (features.ndim() != 2)
    throw ShapeError("pca_project: expected N x D features, got " + shape_str(features.shape()));
  const std::size_t n = features.shape()[0];
  const std::size_t d = features.shape()[1];
  if (dim < 1 || dim > d)
    throw ValueError("pca_project: dim must be in [1, feature dim]");
  if (n < dim + 1)
    throw ValueError("pca_project: need at least dim+1 samples, got " + std::to_string(n));

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += static_cast<double>(features.data()[i * d + j]);
  for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);

  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      centered[i * d + j] = static_cast<double>(features.data()[i * d + j]) - mean[j];

  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p; q < d; ++q)
        cov[p * d + q] += centered[i * d + p] * centered[i * d + q];
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = p; q < d; ++q) {
      cov[p * d + q] /= static_cast<double>(n - 1);
      cov[q * d + p] = cov[p * d + q];
    }
  double total_var = 0.0;
  for (std::size_t p = 0; p < d; ++p) total_var += cov[p * d + p];
  if (total_var <= 0.0) throw ValueError("pca_project: zero-variance features");

  std::vector<double> eigvals, eigvecs;
  detail::jacobi_eigen(cov, d, eigvals, eigvecs);

  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return eigvals[a] > eigvals[b]; });

  PcaResult res;
  res.coords = Tensor<double>::zeros({n, dim});
  res.explained_ratios.resize(dim);
  for (std::size_t c = 0; c < dim; ++c) {
    const std::size_t col = order[c];
    // Sign convention: largest-|loading| entry of the component is positive.
    std::size_t arg = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (std::abs(eigvecs[j * d + col]) > std::abs(eigvecs[arg * d + col])) arg = j;
    const double sign = eigvecs[arg * d + col] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += centered[i * d + j] * eigvecs[j * d + col];
      res.coords.data()[i * dim + c] = sign * dot;
    }
    res.explained_ratios[c] = std::max(eigvals[col], 0.0) / total_var;
  }
  return res;
}

// ---------------------------------------------------------------------------
// MetricsReport
// ---------------------------------------------------------------------------

struct MetricsReport {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string method = "none";
  std::optional<double> source_acc;                         // accuracy on d0, if evaluated
  std::vector<std::pair<std::string, double>> target_acc;   // (domain name, accuracy %)
  double mean_acc = 0;
  double std_acc = 0;
  // (source domain, target domain, Dist_A)
  std::vector<std::tuple<std::string, std::string, double>> a_distances;

  void finalize() {
    std::vector<double> accs;
    for (const auto& [name, acc] : target_acc) accs.push_back(acc);
    const Aggregate a = aggregate(accs);
    mean_acc = a.mean;
    std_acc = a.stddev;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["method"] = method;
    if (source_acc)
      j["source_acc"] = *source_acc;
    else
      j["source_acc"] = nullptr;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [name, acc] : target_acc) per[name] = acc;
    j["target_acc"] = per;
    j["mean_acc"] = mean_acc;
    j["std_acc"] = std_acc;
    nlohmann::ordered_json ad = nlohmann::ordered_json::object();
    for (const auto& [src, tgt, dist] : a_distances) ad[src + "->" + tgt] = dist;
    j["a_distance"] = ad;
    return j;
  }

  // Frozen CSV layout; cells for domains that were not evaluated stay empty.
  static std::string csv_header() {
    return "config_hash,seed,method,acc_d0,acc_t1,acc_t2,acc_t3,mean_acc,std_acc,"
           "adist_d0_t1,adist_d0_t2,adist_d0_t3";
  }

  std::string csv_row() const {
    const auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    const auto target_cell = [&](const std::string& name) -> std::string {
      for (const auto& [n, acc] : target_acc)
        if (n == name) return num(acc);
      return "";
    };
    const auto adist_cell = [&](const std::string& tgt) -> std::string {
      for (const auto& [s, t, dist] : a_distances)
        if (s == "d0" && t == tgt) return num(dist);
      return "";
    };
    std::ostringstream os;
    os << config_hash << "," << seed << "," << method << ","
       << (source_acc ? num(*source_acc) : std::string()) << "," << target_cell("t1") << ","
       << target_cell("t2") << "," << target_cell("t3") << "," << num(mean_acc) << ","
       << num(std_acc) << "," << adist_cell("t1") << "," << adist_cell("t2") << ","
       << adist_cell("t3");
    return os.str();
  }
};

// PCA coordinates as CSV for external plotting: one row per point with its
// domain label.
inline std::string pca_csv(const PcaResult& pca, const std::vector<std::string>& point_domains) {
  const std::size_t n = pca.coords.shape()[0];
  const std::size_t dim = pca.coords.shape()[1];
  if (point_domains.size() != n)
    throw ValueError("pca_csv: domain label count does not match point count");
  std::ostringstream os;
  os << "domain";
  for (std::size_t c = 0; c < dim; ++c) os << ",pc" << (c + 1);
  os << "\n";
  os.precision(17);
  for (std::size_t i = 0; i < n; ++i) {
    os << point_domains[i];
    for (std::size_t c = 0; c < dim; ++c) os << "," << pca.coords.data()[i * dim + c];
    os << "\n";
  }
  return os.str();
}

}  // namespace advstyle
