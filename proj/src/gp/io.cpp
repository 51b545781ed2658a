#include <fstream>

#include "lgps/gp.hpp"

namespace lgps::gp {
namespace {

using DType = Checkpoint::DType;

nlohmann::json kernel_json(const RbfKernel& k) {
  return {{"lengthscale", k.lengthscale}, {"variance", k.variance}};
}

RbfKernel kernel_from(const nlohmann::json& j) {
  return {j.at("lengthscale").get<double>(), j.at("variance").get<double>()};
}

Eigen::VectorXd as_vector(const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

}  // namespace

void Classifier::store(Checkpoint& ckpt, const std::string& prefix) const {
  nlohmann::json meta = {{"mode", to_string(mode_)},
                         {"degenerate", degenerate_},
                         {"kernel", kernel_json(kernel_)},
                         {"objective", diagnostics_.objective},
                         {"jitter", jitter_}};
  ckpt.metadata[prefix] = meta;
  if (mode_ == Mode::kExactLaplace) {
    ckpt.put(prefix + ".x", x_, DType::kFloat64);
    ckpt.put(prefix + ".y", Eigen::MatrixXd(y_), DType::kFloat64);
    ckpt.put(prefix + ".f_hat", Eigen::MatrixXd(f_hat_), DType::kFloat64);
  } else if (mode_ == Mode::kSvgp) {
    ckpt.put(prefix + ".z", z_, DType::kFloat64);
    ckpt.put(prefix + ".m", Eigen::MatrixXd(m_), DType::kFloat64);
    ckpt.put(prefix + ".ls", ls_, DType::kFloat64);
  }
}

Classifier Classifier::restore(const Checkpoint& ckpt, const std::string& prefix) {
  if (!ckpt.metadata.contains(prefix)) fail(ErrorKind::kData, "model file has no '" + prefix + "' entry");
  const auto& meta = ckpt.metadata.at(prefix);
  Classifier c;
  const std::string mode = meta.at("mode").get<std::string>();
  c.kernel_ = kernel_from(meta.at("kernel"));
  c.degenerate_ = meta.value("degenerate", false);
  c.jitter_ = meta.value("jitter", 0.0);
  c.diagnostics_.kernel = c.kernel_;
  c.diagnostics_.objective = meta.value("objective", 0.0);
  if (mode == "exact_laplace") {
    c.mode_ = Mode::kExactLaplace;
    c.diagnostics_.method = mode;
    c.x_ = ckpt.get(prefix + ".x");
    c.y_ = as_vector(ckpt.get(prefix + ".y"));
    c.f_hat_ = as_vector(ckpt.get(prefix + ".f_hat"));
    if (c.y_.size() != c.x_.rows() || c.f_hat_.size() != c.x_.rows()) {
      fail(ErrorKind::kData, "inconsistent classifier tensors");
    }
    c.prepare_laplace();
  } else if (mode == "svgp") {
    c.mode_ = Mode::kSvgp;
    c.diagnostics_.method = mode;
    c.z_ = ckpt.get(prefix + ".z");
    c.m_ = as_vector(ckpt.get(prefix + ".m"));
    c.ls_ = ckpt.get(prefix + ".ls", c.z_.rows(), c.z_.rows());
    if (c.m_.size() != c.z_.rows()) fail(ErrorKind::kData, "inconsistent classifier tensors");
    c.prepare_svgp();
  } else if (mode != "unfitted") {
    fail(ErrorKind::kData, "unknown classifier mode '" + mode + "'");
  }
  return c;
}

void Classifier::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.kind = "gp_classifier";
  store(ckpt, "classifier");
  ckpt.save(path);
}

Classifier Classifier::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.kind != "gp_classifier") fail(ErrorKind::kData, path.string() + " is not a classifier file");
  return restore(ckpt, "classifier");
}

void Regressor::store(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.metadata[prefix] = {{"fitted", fitted_},
                           {"kernel", kernel_json(kernel_)},
                           {"noise", noise_},
                           {"mean", mean_},
                           {"scale", scale_}};
  if (fitted_) {
    ckpt.put(prefix + ".x", x_, DType::kFloat64);
    ckpt.put(prefix + ".t", Eigen::MatrixXd(t_), DType::kFloat64);
  }
}

Regressor Regressor::restore(const Checkpoint& ckpt, const std::string& prefix) {
  if (!ckpt.metadata.contains(prefix)) fail(ErrorKind::kData, "model file has no '" + prefix + "' entry");
  const auto& meta = ckpt.metadata.at(prefix);
  Regressor r;
  r.fitted_ = meta.at("fitted").get<bool>();
  r.kernel_ = kernel_from(meta.at("kernel"));
  r.noise_ = meta.at("noise").get<double>();
  r.mean_ = meta.at("mean").get<double>();
  r.scale_ = meta.at("scale").get<double>();
  if (r.fitted_) {
    r.x_ = ckpt.get(prefix + ".x");
    r.t_ = as_vector(ckpt.get(prefix + ".t"));
    if (r.t_.size() != r.x_.rows()) fail(ErrorKind::kData, "inconsistent regressor tensors");
    r.prepare();
  }
  return r;
}

void Regressor::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.kind = "gp_regressor";
  store(ckpt, "regressor");
  ckpt.save(path);
}

Regressor Regressor::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.kind != "gp_regressor") fail(ErrorKind::kData, path.string() + " is not a regressor file");
  return restore(ckpt, "regressor");
}

void store(Checkpoint& ckpt, const std::string& prefix, const LogisticModel& model) {
  ckpt.metadata[prefix] = {{"fitted", model.fitted},
                           {"degenerate", model.degenerate},
                           {"lambda", model.lambda},
                           {"b", model.b}};
  ckpt.put(prefix + ".w", Eigen::MatrixXd(model.w), DType::kFloat64);
}

LogisticModel restore_logistic(const Checkpoint& ckpt, const std::string& prefix) {
  if (!ckpt.metadata.contains(prefix)) fail(ErrorKind::kData, "model file has no '" + prefix + "' entry");
  const auto& meta = ckpt.metadata.at(prefix);
  LogisticModel m;
  m.fitted = meta.at("fitted").get<bool>();
  m.degenerate = meta.at("degenerate").get<bool>();
  m.lambda = meta.at("lambda").get<double>();
  m.b = meta.at("b").get<double>();
  m.w = as_vector(ckpt.get(prefix + ".w"));
  return m;
}

void write_diagnostics_csv(const std::filesystem::path& path, const FitDiagnostics& d) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.precision(17);
  out << "# method=" << d.method << " lengthscale=" << d.kernel.lengthscale
      << " variance=" << d.kernel.variance << " objective=" << d.objective
      << " iterations=" << d.iterations << '\n';
  out << "step,objective\n";
  for (std::size_t i = 0; i < d.trace.size(); ++i) out << i << ',' << d.trace[i] << '\n';
}

}  // namespace lgps::gp
