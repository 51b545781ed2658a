#include "lgps/encoder.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "lgps/checkpoint.hpp"

namespace lgps {
namespace {

constexpr int kEncodeChunk = 256;
constexpr Eigen::Index kExactPcaMaxDim = 2048;

void check_patch(const patch::Patch& p, int size) {
  if (p.size != size ||
      p.data.size() != static_cast<std::size_t>(patch::kChannels) * size * size) {
    fail(ErrorKind::kInvalidArgument, "patch shape does not match the encoder");
  }
}

}  // namespace

Eigen::VectorXd Encoder::encode(const patch::Patch& p) const {
  return encode(std::vector<patch::Patch>{p}).row(0).transpose();
}

Eigen::MatrixXd VaeEncoder::encode(const std::vector<patch::Patch>& patches) const {
  Eigen::MatrixXd codes(patches.size(), latent_dim());
  for (const auto& p : patches) check_patch(p, patch_size());
  for (std::size_t start = 0; start < patches.size(); start += kEncodeChunk) {
    const std::size_t end = std::min(patches.size(), start + kEncodeChunk);
    const std::vector<patch::Patch> chunk(patches.begin() + start, patches.begin() + end);
    const auto post = model_.encode(vae::to_columns<float>(chunk), static_cast<int>(chunk.size()));
    codes.middleRows(start, end - start) = post.mu.transpose().cast<double>();
  }
  return codes;
}

void VaeEncoder::save(const std::filesystem::path& path) const { vae::save_vae(path, model_); }

PcaEncoder::PcaEncoder(int patch_size, Eigen::VectorXd mean, Eigen::MatrixXd components)
    : patch_size_(patch_size), mean_(std::move(mean)), components_(std::move(components)) {
  if (components_.rows() != mean_.size()) {
    fail(ErrorKind::kInvalidArgument, "PCA components do not match the mean");
  }
}

PcaEncoder PcaEncoder::fit(const Eigen::MatrixXd& rows, int m, int patch_size, Rng& rng) {
  const Eigen::Index n = rows.rows(), d = rows.cols();
  if (m < 1) fail(ErrorKind::kInvalidArgument, "m must be >= 1");
  if (n <= m) fail(ErrorKind::kInvalidArgument, "PCA needs more samples than components");
  const Eigen::VectorXd mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd xc = rows.rowwise() - mean.transpose();

  Eigen::MatrixXd basis;
  Eigen::VectorXd spectrum;  // descending variances
  if (d <= kExactPcaMaxDim) {
    const Eigen::MatrixXd cov = xc.transpose() * xc / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    basis = eig.eigenvectors().rowwise().reverse();
    spectrum = eig.eigenvalues().reverse();
  } else {
    const Eigen::Index l = std::min<Eigen::Index>(d, std::min<Eigen::Index>(n, m + 10));
    Eigen::MatrixXd omega(d, l);
    for (Eigen::Index j = 0; j < l; ++j) {
      for (Eigen::Index i = 0; i < d; ++i) omega(i, j) = rng.normal();
    }
    Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(xc * omega)
                            .householderQ() * Eigen::MatrixXd::Identity(n, l);
    for (int it = 0; it < 4; ++it) {
      const Eigen::MatrixXd z = Eigen::HouseholderQR<Eigen::MatrixXd>(xc.transpose() * q)
                                    .householderQ() * Eigen::MatrixXd::Identity(d, l);
      q = Eigen::HouseholderQR<Eigen::MatrixXd>(xc * z).householderQ() *
          Eigen::MatrixXd::Identity(n, l);
    }
    const Eigen::MatrixXd b = q.transpose() * xc;  // (l, d)
    Eigen::BDCSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinV);
    basis = svd.matrixV();
    spectrum = svd.singularValues().array().square() / static_cast<double>(n - 1);
  }
  const double top = spectrum.size() > 0 ? std::max(spectrum(0), 0.0) : 0.0;
  int rank = 0;
  while (rank < spectrum.size() && spectrum(rank) > 1e-12 * top && spectrum(rank) > 0.0) ++rank;
  int k = m;
  if (rank < m) {
    spdlog::warn("PCA: data rank {} is below the requested {} components; keeping {}", rank, m,
                 std::max(rank, 1));
    k = std::max(rank, 1);
  }
  return PcaEncoder(patch_size, mean, basis.leftCols(k));
}

PcaEncoder PcaEncoder::fit(const patch::PatchCorpus& corpus, int m, Rng& rng) {
  const Eigen::Index n = static_cast<Eigen::Index>(corpus.count());
  const Eigen::Index d = static_cast<Eigen::Index>(corpus.stride());
  Eigen::MatrixXd rows(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto s = corpus.sample(static_cast<std::size_t>(i));
    for (Eigen::Index j = 0; j < d; ++j) rows(i, j) = s[j];
  }
  return fit(rows, m, corpus.size, rng);
}

Eigen::MatrixXd PcaEncoder::project(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != mean_.size()) fail(ErrorKind::kInvalidArgument, "sample dimension mismatch");
  return (rows.rowwise() - mean_.transpose()) * components_;
}

Eigen::MatrixXd PcaEncoder::reconstruct(const Eigen::MatrixXd& codes) const {
  return (codes * components_.transpose()).rowwise() + mean_.transpose();
}

Eigen::MatrixXd PcaEncoder::encode(const std::vector<patch::Patch>& patches) const {
  Eigen::MatrixXd rows(patches.size(), mean_.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    check_patch(patches[i], patch_size_);
    if (static_cast<Eigen::Index>(patches[i].data.size()) != mean_.size()) {
      fail(ErrorKind::kInvalidArgument, "patch shape does not match the encoder");
    }
    rows.row(i) = Eigen::Map<const Eigen::RowVectorXd>(patches[i].data.data(), mean_.size());
  }
  return project(rows);
}

void PcaEncoder::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.kind = "pca";
  ckpt.metadata = {{"patch_size", patch_size_}, {"components", components_.cols()}};
  ckpt.put("mean", Eigen::MatrixXd(mean_), Checkpoint::DType::kFloat64);
  ckpt.put("components", components_, Checkpoint::DType::kFloat64);
  ckpt.save(path);
}

std::shared_ptr<const Encoder> load_encoder(const std::filesystem::path& path) {
  const Checkpoint header = Checkpoint::peek(path);
  if (header.kind == "vae") return std::make_shared<VaeEncoder>(vae::load_vae(path));
  if (header.kind == "pca") {
    const Checkpoint ckpt = Checkpoint::load(path);
    Eigen::MatrixXd mean = ckpt.get("mean");
    return std::make_shared<PcaEncoder>(ckpt.metadata.at("patch_size").get<int>(),
                                        Eigen::VectorXd(mean.col(0)), ckpt.get("components"));
  }
  fail(ErrorKind::kData, path.string() + " holds a '" + header.kind + "' model, not an encoder");
}

}  // namespace lgps
