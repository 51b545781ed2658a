#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lgps/checkpoint.hpp"
#include "lgps/error.hpp"
#include "lgps/rng.hpp"

// Preference models on latent codes. Codes are passed as matrices with one
// row per point; labels are +1 (preferred) / -1 (rejected).
namespace lgps::gp {

struct RbfKernel {
  double lengthscale = 1.0;
  double variance = 1.0;  // sigma_f^2

  double operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
  Eigen::MatrixXd gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const;
  Eigen::MatrixXd gram(const Eigen::MatrixXd& a) const;
};

// Median of pairwise Euclidean distances; 1 when there are no non-zero pairs.
double median_pairwise_distance(const Eigen::MatrixXd& x);

// Lower Cholesky factor of k + jitter * I. Starts with no jitter and grows it
// up to max_jitter; throws kOptimization if that is not enough.
Eigen::MatrixXd cholesky_with_jitter(const Eigen::MatrixXd& k, double max_jitter = 1e-5,
                                     double* used_jitter = nullptr);

// Gauss-Hermite rule for the weight exp(-x^2): nodes and weights.
struct Quadrature {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};
const Quadrature& gauss_hermite(int n = 20);

// E[sigmoid(f)] for f ~ N(mean, var) by 20-node Gauss-Hermite.
double expected_sigmoid(double mean, double var);

// log sigmoid(z), stable for large |z|.
double log_sigmoid(double z);
double sigmoid(double z);

enum class Mode { kUnfitted, kExactLaplace, kSvgp };
std::string to_string(Mode mode);

struct LaplaceOptions {
  // Skip hyperparameter search and use this kernel.
  std::optional<RbfKernel> kernel;
  int max_newton = 100;
  double newton_tolerance = 1e-6;
  int refine_evaluations = 60;
};

struct SvgpOptions {
  int inducing = 64;
  // Z = X (requires inducing == n or 0 meaning n) and Z is not optimized.
  bool inducing_at_data = false;
  std::optional<RbfKernel> kernel;  // fixed hyperparameters
  int steps = 1500;
  double lr = 0.01;
  double max_jitter = 1e-5;
};

struct ClassifierConfig {
  // Exact Laplace below this many labels, SVGP at or above.
  int exact_threshold = 500;
  LaplaceOptions laplace;
  SvgpOptions svgp;
};

// Objective trace and chosen hyperparameters of the last fit.
struct FitDiagnostics {
  std::string method;
  std::vector<double> trace;  // Laplace: log evidence per candidate; SVGP: ELBO per step
  RbfKernel kernel;
  double objective = 0.0;     // final log evidence (Laplace) or ELBO (SVGP)
  int iterations = 0;         // Newton iterations of the final fit / Adam steps
};

class Classifier {
 public:
  // Predicts 0.5 everywhere.
  Classifier() = default;

  Mode mode() const { return mode_; }
  bool fitted() const { return mode_ != Mode::kUnfitted; }
  // True when trained on a single class.
  bool degenerate() const { return degenerate_; }
  const RbfKernel& kernel() const { return kernel_; }
  // 0 when unfitted.
  int input_dim() const;
  const FitDiagnostics& diagnostics() const { return diagnostics_; }

  // Predictive mean and variance of the latent function.
  void predict_latent(const Eigen::MatrixXd& codes, Eigen::VectorXd& mean, Eigen::VectorXd& var) const;
  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& codes) const;

  // SVGP state (empty for other modes).
  const Eigen::MatrixXd& inducing_inputs() const { return z_; }
  const Eigen::VectorXd& variational_mean() const { return m_; }
  const Eigen::MatrixXd& variational_chol() const { return ls_; }
  // Laplace state.
  const Eigen::VectorXd& latent_mode() const { return f_hat_; }

  // Tensors and metadata go under `prefix` so several models can share a file.
  void store(Checkpoint& ckpt, const std::string& prefix) const;
  static Classifier restore(const Checkpoint& ckpt, const std::string& prefix);
  void save(const std::filesystem::path& path) const;
  static Classifier load(const std::filesystem::path& path);

 private:
  friend Classifier fit_exact_laplace(const Eigen::MatrixXd&, const Eigen::VectorXd&, const LaplaceOptions&);
  friend Classifier fit_svgp(const Eigen::MatrixXd&, const Eigen::VectorXd&, const SvgpOptions&, Rng&);
  friend Classifier make_svgp(const Eigen::MatrixXd&, const RbfKernel&, const Eigen::VectorXd&,
                              const Eigen::MatrixXd&);

  void prepare_laplace();
  void prepare_svgp();

  Mode mode_ = Mode::kUnfitted;
  bool degenerate_ = false;
  RbfKernel kernel_;
  FitDiagnostics diagnostics_;
  // Laplace
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  Eigen::VectorXd f_hat_;
  Eigen::VectorXd dlogp_;   // gradient of log likelihood at the mode
  Eigen::VectorXd sqrt_w_;
  Eigen::MatrixXd l_b_;     // chol(I + W^1/2 K W^1/2)
  // SVGP
  Eigen::MatrixXd z_;
  Eigen::VectorXd m_;
  Eigen::MatrixXd ls_;
  Eigen::MatrixXd l_zz_;    // chol(Kzz + jitter)
  Eigen::VectorXd alpha_;   // Kzz^-1 m
  Eigen::MatrixXd c_;       // Kzz^-1 S Kzz^-1 - Kzz^-1
  double jitter_ = 0.0;
};

// Non-finite ELBO during SVGP optimization; carries the best finite state.
class SvgpDiverged : public Error {
 public:
  SvgpDiverged(const std::string& what, std::shared_ptr<const Classifier> last_finite)
      : Error(ErrorKind::kOptimization, what), last_finite_(std::move(last_finite)) {}
  const std::shared_ptr<const Classifier>& last_finite() const { return last_finite_; }

 private:
  std::shared_ptr<const Classifier> last_finite_;
};

// n = 0 gives an unfitted classifier. Labels must be +1 or -1.
Classifier fit_exact_laplace(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const LaplaceOptions& options = {});
Classifier fit_svgp(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const SvgpOptions& options,
                    Rng& rng);
// Builds an SVGP classifier from explicit variational parameters (no fitting).
Classifier make_svgp(const Eigen::MatrixXd& z, const RbfKernel& kernel, const Eigen::VectorXd& m,
                     const Eigen::MatrixXd& ls);
Classifier fit_classifier(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          const ClassifierConfig& config, Rng& rng);

// Laplace approximation to log p(y | X, kernel); also returns the mode.
double laplace_log_evidence(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const RbfKernel& kernel,
                            Eigen::VectorXd* mode = nullptr, int* iterations = nullptr,
                            int max_newton = 100, double tolerance = 1e-6);

// Pieces of the inducing-point bound, exposed for checks.
struct SvgpBound {
  double elbo = 0.0;
  double expected_loglik = 0.0;
  double kl = 0.0;
  // Gradients of the ELBO.
  Eigen::VectorXd d_m;
  Eigen::MatrixXd d_ls;  // lower-triangular
  Eigen::MatrixXd d_z;
  double d_log_lengthscale = 0.0;
  double d_log_variance = 0.0;
};
SvgpBound svgp_bound(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& z,
                     const RbfKernel& kernel, const Eigen::VectorXd& m, const Eigen::MatrixXd& ls,
                     double jitter = 0.0);
// KL(N(m, S) || N(0, K)).
double gaussian_kl(const Eigen::VectorXd& m, const Eigen::MatrixXd& s, const Eigen::MatrixXd& k);

// k-means++ seeded Lloyd iterations; returns k centers.
Eigen::MatrixXd kmeans(const Eigen::MatrixXd& x, int k, Rng& rng, int iterations = 50);

struct RegressorOptions {
  std::optional<RbfKernel> kernel;     // fixed; otherwise fitted with the noise
  std::optional<double> noise;         // fixed sigma_n^2 (standardized units)
  double noise_floor = 1e-6;
};

// Exact GP regression on standardized targets.
class Regressor {
 public:
  Regressor() = default;

  struct Prediction {
    double mean = 0.0;      // target units
    double variance = 0.0;  // target units squared
  };

  bool fitted() const { return fitted_; }
  Prediction predict(const Eigen::VectorXd& code) const;
  std::vector<Prediction> predict(const Eigen::MatrixXd& codes) const;

  const RbfKernel& kernel() const { return kernel_; }
  double noise() const { return noise_; }
  double target_mean() const { return mean_; }
  double target_scale() const { return scale_; }

  void store(Checkpoint& ckpt, const std::string& prefix) const;
  static Regressor restore(const Checkpoint& ckpt, const std::string& prefix);
  void save(const std::filesystem::path& path) const;
  static Regressor load(const std::filesystem::path& path);

 private:
  friend Regressor fit_regressor(const Eigen::MatrixXd&, const Eigen::VectorXd&, const RegressorOptions&);
  void prepare();

  bool fitted_ = false;
  RbfKernel kernel_;
  double noise_ = 1e-6;
  double mean_ = 0.0;
  double scale_ = 1.0;
  Eigen::MatrixXd x_;
  Eigen::VectorXd t_;  // standardized targets
  Eigen::MatrixXd l_;
  Eigen::VectorXd alpha_;
};

// Requires n >= 1.
Regressor fit_regressor(const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                        const RegressorOptions& options = {});
// Log marginal likelihood of standardized targets.
double regression_log_evidence(const Eigen::MatrixXd& x, const Eigen::VectorXd& t, const RbfKernel& kernel,
                               double noise);

// L2-regularized logistic regression: minimizes
//   sum_i log(1 + exp(-y_i (w.x_i + b))) + lambda/2 |w|^2
// The bias is unregularized unless the data has a single class, in which case
// it is regularized too and the model is flagged degenerate.
struct LogisticModel {
  Eigen::VectorXd w;
  double b = 0.0;
  double lambda = 1.0;
  bool fitted = false;
  bool degenerate = false;
  int iterations = 0;

  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& codes) const;
  double objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) const;
};
LogisticModel fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda = 1.0);
void store(Checkpoint& ckpt, const std::string& prefix, const LogisticModel& model);
LogisticModel restore_logistic(const Checkpoint& ckpt, const std::string& prefix);

void write_diagnostics_csv(const std::filesystem::path& path, const FitDiagnostics& diagnostics);

}  // namespace lgps::gp
