#pragma once

#include <functional>

#include <Eigen/Dense>

namespace lgps::optim {

struct NelderMeadOptions {
  int max_evaluations = 200;
  double initial_step = 0.5;
  // Stop when the simplex function values span less than this.
  double f_tolerance = 1e-8;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
};

// Minimizes f. Non-finite values are treated as +infinity, which is how
// callers express box constraints.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& start, const NelderMeadOptions& options = {});

}  // namespace lgps::optim
