#include <cmath>

#include "lgps/gp.hpp"

namespace lgps::gp {

double LogisticModel::objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) const {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) loss -= log_sigmoid(y(i) * (x.row(i).dot(w) + b));
  loss += 0.5 * lambda * w.squaredNorm();
  if (degenerate) loss += 0.5 * lambda * b * b;
  return loss;
}

Eigen::VectorXd LogisticModel::predict_proba(const Eigen::MatrixXd& codes) const {
  if (!fitted) return Eigen::VectorXd::Constant(codes.rows(), 0.5);
  if (codes.cols() != w.size()) fail(ErrorKind::kInvalidArgument, "code dimension mismatch");
  Eigen::VectorXd p(codes.rows());
  for (Eigen::Index i = 0; i < codes.rows(); ++i) p(i) = sigmoid(codes.row(i).dot(w) + b);
  return p;
}

LogisticModel fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
  if (x.rows() != y.size()) fail(ErrorKind::kInvalidArgument, "codes and labels differ in count");
  if (!(lambda > 0.0)) fail(ErrorKind::kInvalidArgument, "lambda must be positive");
  LogisticModel model;
  model.lambda = lambda;
  const Eigen::Index n = x.rows(), d = x.cols();
  model.w = Eigen::VectorXd::Zero(d);
  if (n == 0) return model;
  model.fitted = true;
  model.degenerate = (y.array() == y(0)).all();

  // Newton on theta = (w, b) with a backtracking line search.
  Eigen::MatrixXd xa(n, d + 1);
  xa << x, Eigen::VectorXd::Ones(n);
  Eigen::VectorXd reg = Eigen::VectorXd::Constant(d + 1, lambda);
  if (!model.degenerate) reg(d) = 0.0;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  auto loss_at = [&](const Eigen::VectorXd& th) {
    double l = 0.5 * th.dot(reg.cwiseProduct(th));
    for (Eigen::Index i = 0; i < n; ++i) l -= log_sigmoid(y(i) * xa.row(i).dot(th));
    return l;
  };
  double loss = loss_at(theta);
  for (model.iterations = 0; model.iterations < 200; ++model.iterations) {
    Eigen::VectorXd grad = reg.cwiseProduct(theta);
    Eigen::MatrixXd hess = Eigen::MatrixXd(reg.asDiagonal());
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = xa.row(i).dot(theta);
      const double s = sigmoid(-y(i) * z);
      grad -= y(i) * s * xa.row(i).transpose();
      hess += s * (1.0 - s) * xa.row(i).transpose() * xa.row(i);
    }
    if (grad.norm() <= 1e-8) break;
    // Tiny ridge keeps the unregularized bias direction solvable.
    hess.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    double t = 1.0;
    Eigen::VectorXd next = theta - step;
    double next_loss = loss_at(next);
    while (next_loss > loss - 1e-4 * t * grad.dot(step) && t > 1e-10) {
      t *= 0.5;
      next = theta - t * step;
      next_loss = loss_at(next);
    }
    if (next_loss > loss) break;
    theta = next;
    loss = next_loss;
  }
  model.w = theta.head(d);
  model.b = theta(d);
  return model;
}

}  // namespace lgps::gp
