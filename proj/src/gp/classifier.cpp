#include <algorithm>
#include <cmath>
#include <limits>

#include "lgps/gp.hpp"
#include "lgps/optim.hpp"

namespace lgps::gp {
namespace {

constexpr double kMinLogVariance = -4.6;  // ~0.01
constexpr double kMaxLogVariance = 4.6;   // ~100
constexpr double kLengthscaleSpan = 20.0;

void check_training_data(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (x.rows() != y.size()) fail(ErrorKind::kInvalidArgument, "codes and labels differ in count");
  if (!x.allFinite()) fail(ErrorKind::kInvalidArgument, "codes must be finite");
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) != 1.0 && y(i) != -1.0) fail(ErrorKind::kInvalidArgument, "labels must be +1 or -1");
  }
}

bool single_class(const Eigen::VectorXd& y) {
  return y.size() > 0 && (y.array() == y(0)).all();
}

struct NewtonState {
  Eigen::VectorXd f, a, dlogp, sqrt_w;
  Eigen::MatrixXd l;
  double psi = 0.0;
  int iterations = 0;
};

void likelihood_terms(const Eigen::VectorXd& f, const Eigen::VectorXd& y, Eigen::VectorXd& dlogp,
                      Eigen::VectorXd& w, double& loglik) {
  const Eigen::Index n = f.size();
  dlogp.resize(n);
  w.resize(n);
  loglik = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pi = sigmoid(f(i));
    dlogp(i) = (y(i) + 1.0) / 2.0 - pi;
    w(i) = pi * (1.0 - pi);
    loglik += log_sigmoid(y(i) * f(i));
  }
}

// Newton iterations for the posterior mode with a logistic likelihood,
// parameterized by a = K^-1 f so that K is never inverted.
NewtonState newton_mode(const Eigen::MatrixXd& k, const Eigen::VectorXd& y, int max_iter, double tol) {
  const Eigen::Index n = y.size();
  NewtonState s;
  s.a = Eigen::VectorXd::Zero(n);
  s.f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd w;
  double loglik = 0.0;
  likelihood_terms(s.f, y, s.dlogp, w, loglik);
  s.psi = loglik;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  for (s.iterations = 0; s.iterations < max_iter; ++s.iterations) {
    if ((s.dlogp - s.a).norm() <= tol) break;
    s.sqrt_w = w.array().sqrt();
    const Eigen::MatrixXd b_mat = eye + s.sqrt_w.asDiagonal() * k * s.sqrt_w.asDiagonal();
    Eigen::LLT<Eigen::MatrixXd> llt(b_mat);
    const Eigen::VectorXd b = w.cwiseProduct(s.f) + s.dlogp;
    const Eigen::VectorXd rhs = s.sqrt_w.cwiseProduct(k * b);
    const Eigen::VectorXd a_new = b - s.sqrt_w.cwiseProduct(llt.solve(rhs));
    // Backtrack if the full Newton step does not increase the objective.
    double step = 1.0;
    for (int tries = 0; tries < 30; ++tries) {
      const Eigen::VectorXd a = s.a + step * (a_new - s.a);
      const Eigen::VectorXd f = k * a;
      Eigen::VectorXd dlogp, w_new;
      double ll = 0.0;
      likelihood_terms(f, y, dlogp, w_new, ll);
      const double psi = -0.5 * a.dot(f) + ll;
      if (psi >= s.psi - 1e-12 || tries == 29) {
        s.a = a;
        s.f = f;
        s.dlogp = dlogp;
        w = w_new;
        s.psi = psi;
        break;
      }
      step *= 0.5;
    }
  }
  s.sqrt_w = w.array().sqrt();
  s.l = Eigen::LLT<Eigen::MatrixXd>(eye + s.sqrt_w.asDiagonal() * k * s.sqrt_w.asDiagonal()).matrixL();
  return s;
}

double log_evidence_from(const NewtonState& s) {
  return s.psi - s.l.diagonal().array().log().sum();
}

}  // namespace

int Classifier::input_dim() const {
  switch (mode_) {
    case Mode::kExactLaplace: return static_cast<int>(x_.cols());
    case Mode::kSvgp: return static_cast<int>(z_.cols());
    default: return 0;
  }
}

double laplace_log_evidence(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const RbfKernel& kernel,
                            Eigen::VectorXd* mode, int* iterations, int max_newton, double tolerance) {
  check_training_data(x, y);
  const NewtonState s = newton_mode(kernel.gram(x), y, max_newton, tolerance);
  if (mode) *mode = s.f;
  if (iterations) *iterations = s.iterations;
  return log_evidence_from(s);
}

void Classifier::prepare_laplace() {
  const Eigen::MatrixXd k = kernel_.gram(x_);
  Eigen::VectorXd w;
  double ll = 0.0;
  likelihood_terms(f_hat_, y_, dlogp_, w, ll);
  sqrt_w_ = w.array().sqrt();
  const Eigen::Index n = y_.size();
  l_b_ = Eigen::LLT<Eigen::MatrixXd>(Eigen::MatrixXd::Identity(n, n) +
                                     sqrt_w_.asDiagonal() * k * sqrt_w_.asDiagonal())
             .matrixL();
}

Classifier fit_exact_laplace(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LaplaceOptions& options) {
  check_training_data(x, y);
  Classifier c;
  if (y.size() == 0) return c;
  c.diagnostics_.method = "exact_laplace";
  RbfKernel best;
  if (options.kernel) {
    best = *options.kernel;
  } else {
    // Coarse grid around the median heuristic, then Nelder-Mead in log space.
    const double med = median_pairwise_distance(x);
    const double lo_l = std::log(med / kLengthscaleSpan), hi_l = std::log(med * kLengthscaleSpan);
    auto objective = [&](const Eigen::VectorXd& p) {
      if (p(0) < lo_l || p(0) > hi_l || p(1) < kMinLogVariance || p(1) > kMaxLogVariance) {
        return std::numeric_limits<double>::infinity();
      }
      const RbfKernel k{std::exp(p(0)), std::exp(p(1))};
      const double ev = laplace_log_evidence(x, y, k, nullptr, nullptr, options.max_newton,
                                             options.newton_tolerance);
      c.diagnostics_.trace.push_back(ev);
      return -ev;
    };
    Eigen::VectorXd start(2);
    double best_value = std::numeric_limits<double>::infinity();
    for (double ls : {0.25, 0.5, 1.0, 2.0, 4.0}) {
      for (double var : {0.1, 1.0, 10.0, 100.0}) {
        Eigen::VectorXd p(2);
        p << std::log(med * ls), std::clamp(std::log(var), kMinLogVariance, kMaxLogVariance);
        const double v = objective(p);
        if (v < best_value) {
          best_value = v;
          start = p;
        }
      }
    }
    optim::NelderMeadOptions nm;
    nm.max_evaluations = options.refine_evaluations;
    nm.initial_step = 0.3;
    const auto r = optim::nelder_mead(objective, start, nm);
    const Eigen::VectorXd p = r.value <= best_value ? r.x : start;
    best = {std::exp(p(0)), std::exp(p(1))};
  }
  c.kernel_ = best;
  c.x_ = x;
  c.y_ = y;
  const NewtonState s = newton_mode(best.gram(x), y, options.max_newton, options.newton_tolerance);
  c.f_hat_ = s.f;
  c.mode_ = Mode::kExactLaplace;
  c.degenerate_ = single_class(y);
  c.diagnostics_.kernel = best;
  c.diagnostics_.objective = log_evidence_from(s);
  c.diagnostics_.iterations = s.iterations;
  c.prepare_laplace();
  return c;
}

double gaussian_kl(const Eigen::VectorXd& m, const Eigen::MatrixXd& s, const Eigen::MatrixXd& k) {
  const Eigen::Index n = m.size();
  Eigen::LLT<Eigen::MatrixXd> lk(k), ls(s);
  if (lk.info() != Eigen::Success || ls.info() != Eigen::Success) {
    fail(ErrorKind::kInvalidArgument, "KL needs positive definite covariances");
  }
  const Eigen::MatrixXd lkm = lk.matrixL(), lsm = ls.matrixL();
  const double logdet_k = 2.0 * lkm.diagonal().array().log().sum();
  const double logdet_s = 2.0 * lsm.diagonal().array().log().sum();
  return 0.5 * (lk.solve(s).trace() + m.dot(lk.solve(m)) - static_cast<double>(n) + logdet_k - logdet_s);
}

SvgpBound svgp_bound(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& z,
                     const RbfKernel& kernel, const Eigen::VectorXd& m, const Eigen::MatrixXd& ls,
                     double jitter) {
  const Eigen::Index n = x.rows(), mz = z.rows();
  const double ell2 = kernel.lengthscale * kernel.lengthscale;
  const Eigen::MatrixXd kzz_raw = kernel.gram(z);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(mz, mz);
  Eigen::LLT<Eigen::MatrixXd> llt(kzz_raw + jitter * eye);
  if (llt.info() != Eigen::Success) fail(ErrorKind::kOptimization, "inducing covariance is singular");
  const Eigen::MatrixXd lz = llt.matrixL();
  const Eigen::MatrixXd kinv = llt.solve(eye);
  const Eigen::MatrixXd kxz = kernel.gram(x, z);
  const Eigen::MatrixXd s = ls * ls.transpose();
  const Eigen::VectorXd a = kinv * m;
  const Eigen::MatrixXd ks = kinv * s;
  const Eigen::MatrixXd c = ks * kinv - kinv;
  const Eigen::MatrixXd kxz_c = kxz * c;
  const Eigen::VectorXd mu = kxz * a;
  const Eigen::VectorXd var =
      (kernel.variance + (kxz_c.array() * kxz.array()).rowwise().sum()).max(1e-12).matrix();

  const Quadrature& q = gauss_hermite(20);
  const double norm = 1.0 / std::sqrt(M_PI);
  SvgpBound out;
  Eigen::VectorXd g_mu(n), g_var(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sd = std::sqrt(var(i));
    double e = 0.0, dmu = 0.0, dsd = 0.0;
    for (Eigen::Index k = 0; k < q.nodes.size(); ++k) {
      const double f = mu(i) + std::sqrt(2.0) * sd * q.nodes(k);
      const double w = q.weights(k) * norm;
      const double d1 = y(i) * sigmoid(-y(i) * f);
      e += w * log_sigmoid(y(i) * f);
      dmu += w * d1;
      dsd += w * d1 * std::sqrt(2.0) * q.nodes(k);
    }
    out.expected_loglik += e;
    g_mu(i) = dmu;
    g_var(i) = dsd / (2.0 * sd);
  }
  const double logdet_k = 2.0 * lz.diagonal().array().log().sum();
  const double logdet_s = 2.0 * ls.diagonal().array().abs().log().sum();
  out.kl = 0.5 * (ks.trace() + m.dot(a) - static_cast<double>(mz) + logdet_k - logdet_s);
  out.elbo = out.expected_loglik - out.kl;

  // Gradients: first with respect to m and L_S, then through Kxz and Kzz.
  const Eigen::MatrixXd amat = kxz * kinv;
  out.d_m = amat.transpose() * g_mu - a;
  const Eigen::MatrixXd ls_inv_t =
      ls.triangularView<Eigen::Lower>().solve(eye).transpose();
  const Eigen::MatrixXd d_s_lik = amat.transpose() * g_var.asDiagonal() * amat;
  out.d_ls = (2.0 * d_s_lik * ls - kinv * ls + ls_inv_t).triangularView<Eigen::Lower>();

  const Eigen::MatrixXd g_xz = g_mu * a.transpose() + 2.0 * g_var.asDiagonal() * kxz_c;
  const Eigen::VectorXd b = kinv * (kxz.transpose() * g_mu);
  const Eigen::MatrixXd p = kinv * (kxz.transpose() * g_var.asDiagonal() * kxz) * kinv;
  const Eigen::MatrixXd g_zz = -b * a.transpose() - p * s * kinv - kinv * s * p + p +
                               0.5 * (ks * kinv + a * a.transpose() - kinv);

  const Eigen::ArrayXXd wxz = g_xz.array() * kxz.array();
  const Eigen::ArrayXXd wzz = g_zz.array() * kzz_raw.array();
  out.d_log_variance = wxz.sum() + wzz.sum() + kernel.variance * g_var.sum();
  double dl = 0.0;
  for (Eigen::Index j = 0; j < mz; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) dl += wxz(i, j) * (x.row(i) - z.row(j)).squaredNorm();
    for (Eigen::Index i = 0; i < mz; ++i) dl += wzz(i, j) * (z.row(i) - z.row(j)).squaredNorm();
  }
  out.d_log_lengthscale = dl / ell2;
  out.d_z = Eigen::MatrixXd::Zero(mz, z.cols());
  for (Eigen::Index j = 0; j < mz; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) out.d_z.row(j) += wxz(i, j) * (x.row(i) - z.row(j));
    for (Eigen::Index bidx = 0; bidx < mz; ++bidx) {
      out.d_z.row(j) += (wzz(j, bidx) + wzz(bidx, j)) * (z.row(bidx) - z.row(j));
    }
  }
  out.d_z /= ell2;
  return out;
}

void Classifier::prepare_svgp() {
  const Eigen::Index mz = z_.rows();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(mz, mz);
  const Eigen::MatrixXd kzz = kernel_.gram(z_) + jitter_ * eye;
  Eigen::LLT<Eigen::MatrixXd> llt(kzz);
  if (llt.info() != Eigen::Success) fail(ErrorKind::kOptimization, "inducing covariance is singular");
  l_zz_ = llt.matrixL();
  const Eigen::MatrixXd kinv = llt.solve(eye);
  alpha_ = kinv * m_;
  c_ = kinv * (ls_ * ls_.transpose()) * kinv - kinv;
}

Classifier make_svgp(const Eigen::MatrixXd& z, const RbfKernel& kernel, const Eigen::VectorXd& m,
                     const Eigen::MatrixXd& ls) {
  if (z.rows() != m.size() || ls.rows() != m.size() || ls.cols() != m.size()) {
    fail(ErrorKind::kInvalidArgument, "variational parameters do not match the inducing inputs");
  }
  Classifier c;
  c.mode_ = Mode::kSvgp;
  c.kernel_ = kernel;
  c.z_ = z;
  c.m_ = m;
  c.ls_ = ls.triangularView<Eigen::Lower>();
  cholesky_with_jitter(kernel.gram(z), 1e-5, &c.jitter_);
  c.prepare_svgp();
  return c;
}

Classifier fit_svgp(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const SvgpOptions& options, Rng& rng) {
  check_training_data(x, y);
  const Eigen::Index n = x.rows(), d = x.cols();
  if (n == 0) return Classifier{};
  const int mz = options.inducing_at_data && options.inducing == 0 ? static_cast<int>(n) : options.inducing;
  if (mz < 1 || mz > n) fail(ErrorKind::kInvalidArgument, "inducing count must be in [1, n]");
  if (options.inducing_at_data && mz != n) {
    fail(ErrorKind::kInvalidArgument, "inducing points at the data require M = n");
  }
  RbfKernel kernel = options.kernel.value_or(RbfKernel{median_pairwise_distance(x), 1.0});
  Eigen::MatrixXd z = options.inducing_at_data ? x : kmeans(x, mz, rng);
  const bool learn_z = !options.inducing_at_data;
  const bool learn_kernel = !options.kernel.has_value();

  double jitter = 0.0;
  Eigen::MatrixXd ls = cholesky_with_jitter(kernel.gram(z), options.max_jitter, &jitter);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(mz);

  // Flat parameter vector: m, lower(L_S) with log diagonal, Z, log ell, log sf2.
  const Eigen::Index n_tri = static_cast<Eigen::Index>(mz) * (mz + 1) / 2;
  const Eigen::Index n_params = mz + n_tri + (learn_z ? mz * d : 0) + (learn_kernel ? 2 : 0);
  auto pack = [&](Eigen::VectorXd& th) {
    th.resize(n_params);
    Eigen::Index k = 0;
    for (int i = 0; i < mz; ++i) th(k++) = m(i);
    for (int j = 0; j < mz; ++j) {
      for (int i = j; i < mz; ++i) th(k++) = i == j ? std::log(ls(i, i)) : ls(i, j);
    }
    if (learn_z) {
      for (int i = 0; i < mz; ++i) {
        for (Eigen::Index c = 0; c < d; ++c) th(k++) = z(i, c);
      }
    }
    if (learn_kernel) {
      th(k++) = std::log(kernel.lengthscale);
      th(k++) = std::log(kernel.variance);
    }
  };
  auto unpack = [&](const Eigen::VectorXd& th) {
    Eigen::Index k = 0;
    for (int i = 0; i < mz; ++i) m(i) = th(k++);
    ls.setZero();
    for (int j = 0; j < mz; ++j) {
      for (int i = j; i < mz; ++i) ls(i, j) = i == j ? std::exp(th(k++)) : th(k++);
    }
    if (learn_z) {
      for (int i = 0; i < mz; ++i) {
        for (Eigen::Index c = 0; c < d; ++c) z(i, c) = th(k++);
      }
    }
    if (learn_kernel) {
      kernel.lengthscale = std::exp(th(k++));
      kernel.variance = std::exp(std::clamp(th(k++), kMinLogVariance, kMaxLogVariance));
    }
  };
  auto gradient = [&](const SvgpBound& bnd) {
    Eigen::VectorXd g(n_params);
    Eigen::Index k = 0;
    for (int i = 0; i < mz; ++i) g(k++) = bnd.d_m(i);
    for (int j = 0; j < mz; ++j) {
      for (int i = j; i < mz; ++i) g(k++) = i == j ? bnd.d_ls(i, i) * ls(i, i) : bnd.d_ls(i, j);
    }
    if (learn_z) {
      for (int i = 0; i < mz; ++i) {
        for (Eigen::Index c = 0; c < d; ++c) g(k++) = bnd.d_z(i, c);
      }
    }
    if (learn_kernel) {
      g(k++) = bnd.d_log_lengthscale;
      g(k++) = bnd.d_log_variance;
    }
    return g;
  };

  Eigen::VectorXd theta;
  pack(theta);
  Eigen::VectorXd best_theta = theta;
  double best_elbo = -std::numeric_limits<double>::infinity();
  double best_jitter = jitter;
  Eigen::VectorXd adam_m = Eigen::VectorXd::Zero(n_params), adam_v = Eigen::VectorXd::Zero(n_params);
  FitDiagnostics diag;
  diag.method = "svgp";

  auto snapshot = [&](const Eigen::VectorXd& th, double jit) {
    unpack(th);
    Classifier c;
    c.mode_ = Mode::kSvgp;
    c.kernel_ = kernel;
    c.z_ = z;
    c.m_ = m;
    c.ls_ = ls;
    c.jitter_ = jit;
    c.degenerate_ = single_class(y);
    c.prepare_svgp();
    return c;
  };

  for (int step = 0; step <= options.steps; ++step) {
    unpack(theta);
    SvgpBound bnd;
    bool ok = true;
    try {
      cholesky_with_jitter(kernel.gram(z), options.max_jitter, &jitter);
      bnd = svgp_bound(x, y, z, kernel, m, ls, jitter);
      ok = std::isfinite(bnd.elbo);
    } catch (const Error&) {
      ok = false;
    }
    if (!ok) {
      std::shared_ptr<const Classifier> last;
      if (std::isfinite(best_elbo)) last = std::make_shared<const Classifier>(snapshot(best_theta, best_jitter));
      throw SvgpDiverged("non-finite ELBO at step " + std::to_string(step), last);
    }
    diag.trace.push_back(bnd.elbo);
    if (bnd.elbo > best_elbo) {
      best_elbo = bnd.elbo;
      best_theta = theta;
      best_jitter = jitter;
    }
    if (step == options.steps) break;
    // Adam ascent on the ELBO.
    const Eigen::VectorXd g = gradient(bnd);
    const double t = step + 1;
    adam_m = 0.9 * adam_m + 0.1 * g;
    adam_v = 0.999 * adam_v + 0.001 * g.cwiseProduct(g);
    const Eigen::VectorXd mhat = adam_m / (1.0 - std::pow(0.9, t));
    const Eigen::VectorXd vhat = adam_v / (1.0 - std::pow(0.999, t));
    theta += (options.lr * mhat.array() / (vhat.array().sqrt() + 1e-8)).matrix();
  }
  Classifier c = snapshot(best_theta, best_jitter);
  diag.kernel = c.kernel_;
  diag.objective = best_elbo;
  diag.iterations = options.steps;
  c.diagnostics_ = std::move(diag);
  return c;
}

Classifier fit_classifier(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ClassifierConfig& config,
                          Rng& rng) {
  if (x.rows() < config.exact_threshold) return fit_exact_laplace(x, y, config.laplace);
  SvgpOptions opts = config.svgp;
  opts.inducing = std::min<int>(opts.inducing, static_cast<int>(x.rows()));
  return fit_svgp(x, y, opts, rng);
}

void Classifier::predict_latent(const Eigen::MatrixXd& codes, Eigen::VectorXd& mean, Eigen::VectorXd& var) const {
  const Eigen::Index q = codes.rows();
  if (mode_ == Mode::kUnfitted) {
    mean = Eigen::VectorXd::Zero(q);
    var = Eigen::VectorXd::Constant(q, kernel_.variance);
    return;
  }
  if (codes.cols() != input_dim()) fail(ErrorKind::kInvalidArgument, "code dimension mismatch");
  if (mode_ == Mode::kExactLaplace) {
    const Eigen::MatrixXd ks = kernel_.gram(codes, x_);  // (q, n)
    mean = ks * dlogp_;
    const Eigen::MatrixXd v =
        l_b_.triangularView<Eigen::Lower>().solve(sqrt_w_.asDiagonal() * ks.transpose());
    var = (kernel_.variance - v.colwise().squaredNorm().transpose().array()).max(0.0).matrix();
  } else {
    const Eigen::MatrixXd ksz = kernel_.gram(codes, z_);
    mean = ksz * alpha_;
    var = (kernel_.variance + ((ksz * c_).array() * ksz.array()).rowwise().sum()).max(0.0).matrix();
  }
}

Eigen::VectorXd Classifier::predict_proba(const Eigen::MatrixXd& codes) const {
  if (mode_ == Mode::kUnfitted) return Eigen::VectorXd::Constant(codes.rows(), 0.5);
  Eigen::VectorXd mean, var;
  predict_latent(codes, mean, var);
  Eigen::VectorXd p(codes.rows());
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = expected_sigmoid(mean(i), var(i));
  return p;
}

}  // namespace lgps::gp
