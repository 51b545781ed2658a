#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>

#include "lgps/gp.hpp"

namespace lgps::gp {

double RbfKernel::operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  return variance * std::exp(-0.5 * (a - b).squaredNorm() / (lengthscale * lengthscale));
}

Eigen::MatrixXd RbfKernel::gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const {
  if (a.cols() != b.cols()) fail(ErrorKind::kInvalidArgument, "kernel inputs differ in dimension");
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * a * b.transpose()).colwise() + na;
  d2.rowwise() += nb.transpose();
  const double inv = -0.5 / (lengthscale * lengthscale);
  return (variance * (d2.array().max(0.0) * inv).exp()).matrix();
}

Eigen::MatrixXd RbfKernel::gram(const Eigen::MatrixXd& a) const {
  Eigen::MatrixXd g = gram(a, a);
  // Exact symmetry and diagonal; the expanded-norm form leaves rounding noise.
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    g(j, j) = variance;
    for (Eigen::Index i = j + 1; i < g.rows(); ++i) g(j, i) = g(i, j);
  }
  return g;
}

double median_pairwise_distance(const Eigen::MatrixXd& x) {
  std::vector<double> d;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
      const double v = (x.row(i) - x.row(j)).norm();
      if (v > 0.0) d.push_back(v);
    }
  }
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

Eigen::MatrixXd cholesky_with_jitter(const Eigen::MatrixXd& k, double max_jitter, double* used_jitter) {
  const Eigen::Index n = k.rows();
  double jitter = 0.0;
  while (true) {
    Eigen::LLT<Eigen::MatrixXd> llt(k + jitter * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      if (used_jitter) *used_jitter = jitter;
      return llt.matrixL();
    }
    if (jitter >= max_jitter) break;
    jitter = jitter == 0.0 ? 1e-10 : std::min(max_jitter, jitter * 10.0);
  }
  fail(ErrorKind::kOptimization, "matrix is not positive definite even with jitter");
}

const Quadrature& gauss_hermite(int n) {
  static std::mutex mu;
  static std::map<int, Quadrature> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  // Golub-Welsch: eigenpairs of the symmetric Jacobi matrix of the Hermite recurrence.
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) j(i, i - 1) = j(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(j);
  Quadrature q;
  q.nodes = eig.eigenvalues();
  q.weights = std::sqrt(M_PI) * eig.eigenvectors().row(0).transpose().array().square();
  return cache.emplace(n, std::move(q)).first->second;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double expected_sigmoid(double mean, double var) {
  const Quadrature& q = gauss_hermite(20);
  const double s = std::sqrt(2.0 * std::max(var, 0.0));
  double p = 0.0;
  for (Eigen::Index k = 0; k < q.nodes.size(); ++k) p += q.weights(k) * sigmoid(mean + s * q.nodes(k));
  return std::clamp(p / std::sqrt(M_PI), 0.0, 1.0);
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kUnfitted: return "unfitted";
    case Mode::kExactLaplace: return "exact_laplace";
    case Mode::kSvgp: return "svgp";
  }
  return "unknown";
}

Eigen::MatrixXd kmeans(const Eigen::MatrixXd& x, int k, Rng& rng, int iterations) {
  const Eigen::Index n = x.rows();
  if (k < 1 || k > n) fail(ErrorKind::kInvalidArgument, "k-means needs 1 <= k <= n");
  Eigen::MatrixXd centers(k, x.cols());
  // k-means++ seeding.
  centers.row(0) = x.row(static_cast<Eigen::Index>(rng.below(n)));
  Eigen::VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.below(n));
    } else {
      double r = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        r -= d2(pick);
        if (r < 0.0) break;
      }
    }
    centers.row(c) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  std::vector<int> assign(n, -1);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best;
      (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
      if (assign[i] != best) {
        assign[i] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += x.row(i);
      counts(assign[i]) += 1.0;
    }
    for (int c = 0; c < k; ++c) {
      if (counts(c) > 0.0) centers.row(c) = sums.row(c) / counts(c);
    }
  }
  return centers;
}

}  // namespace lgps::gp
