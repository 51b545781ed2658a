#include <cmath>
#include <limits>

#include "lgps/gp.hpp"
#include "lgps/optim.hpp"

namespace lgps::gp {

double regression_log_evidence(const Eigen::MatrixXd& x, const Eigen::VectorXd& t, const RbfKernel& kernel,
                               double noise) {
  const Eigen::Index n = t.size();
  Eigen::LLT<Eigen::MatrixXd> llt(kernel.gram(x) + noise * Eigen::MatrixXd::Identity(n, n));
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Eigen::MatrixXd l = llt.matrixL();
  return -0.5 * t.dot(llt.solve(t)) - l.diagonal().array().log().sum() -
         0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
}

void Regressor::prepare() {
  const Eigen::Index n = x_.rows();
  l_ = cholesky_with_jitter(kernel_.gram(x_) + noise_ * Eigen::MatrixXd::Identity(n, n));
  alpha_ = l_.transpose().triangularView<Eigen::Upper>().solve(l_.triangularView<Eigen::Lower>().solve(t_));
}

Regressor fit_regressor(const Eigen::MatrixXd& x, const Eigen::VectorXd& targets, const RegressorOptions& options) {
  const Eigen::Index n = x.rows();
  if (n < 1) fail(ErrorKind::kInvalidArgument, "width regression needs at least one labeled width");
  if (targets.size() != n) fail(ErrorKind::kInvalidArgument, "codes and widths differ in count");
  if (!x.allFinite() || !targets.allFinite()) fail(ErrorKind::kInvalidArgument, "inputs must be finite");
  Regressor r;
  r.mean_ = targets.mean();
  const double sd = n > 1 ? std::sqrt((targets.array() - r.mean_).square().sum() / static_cast<double>(n - 1)) : 0.0;
  r.scale_ = sd > 1e-12 ? sd : 1.0;
  r.t_ = (targets.array() - r.mean_) / r.scale_;
  r.x_ = x;

  const double floor = options.noise_floor;
  RbfKernel kernel = options.kernel.value_or(RbfKernel{median_pairwise_distance(x), 1.0});
  double noise = options.noise ? std::max(*options.noise, 0.0) : std::max(0.1, floor);
  const bool learn_kernel = !options.kernel && n > 1;
  const bool learn_noise = !options.noise && n > 1;
  if (learn_kernel || learn_noise) {
    // Log-space search; unknown pieces are the free coordinates.
    auto decode = [&](const Eigen::VectorXd& p, RbfKernel& k, double& s2) {
      Eigen::Index i = 0;
      k = kernel;
      s2 = noise;
      if (learn_kernel) {
        k.lengthscale = std::exp(p(i++));
        k.variance = std::exp(p(i++));
      }
      if (learn_noise) s2 = floor + std::exp(p(i++));
    };
    auto objective = [&](const Eigen::VectorXd& p) {
      if ((p.array().abs() > 12.0).any()) return std::numeric_limits<double>::infinity();
      RbfKernel k;
      double s2 = 0.0;
      decode(p, k, s2);
      return -regression_log_evidence(x, r.t_, k, s2);
    };
    Eigen::VectorXd start((learn_kernel ? 2 : 0) + (learn_noise ? 1 : 0));
    Eigen::Index i = 0;
    if (learn_kernel) {
      start(i++) = std::log(kernel.lengthscale);
      start(i++) = 0.0;
    }
    if (learn_noise) start(i++) = std::log(0.1);
    optim::NelderMeadOptions nm;
    nm.max_evaluations = 200;
    const auto res = optim::nelder_mead(objective, start, nm);
    decode(res.x, kernel, noise);
  }
  r.kernel_ = kernel;
  r.noise_ = std::max(noise, options.noise ? 0.0 : floor);
  r.fitted_ = true;
  r.prepare();
  return r;
}

std::vector<Regressor::Prediction> Regressor::predict(const Eigen::MatrixXd& codes) const {
  if (!fitted_) fail(ErrorKind::kInvalidArgument, "regressor is not fitted");
  if (codes.cols() != x_.cols()) fail(ErrorKind::kInvalidArgument, "code dimension mismatch");
  const Eigen::MatrixXd ks = kernel_.gram(codes, x_);
  const Eigen::VectorXd mean = ks * alpha_;
  const Eigen::MatrixXd v = l_.triangularView<Eigen::Lower>().solve(ks.transpose());
  std::vector<Prediction> out(codes.rows());
  for (Eigen::Index i = 0; i < codes.rows(); ++i) {
    const double var = std::max(0.0, kernel_.variance - v.col(i).squaredNorm());
    out[i] = {mean_ + scale_ * mean(i), scale_ * scale_ * var};
  }
  return out;
}

Regressor::Prediction Regressor::predict(const Eigen::VectorXd& code) const {
  return predict(Eigen::MatrixXd(code.transpose())).front();
}

}  // namespace lgps::gp
