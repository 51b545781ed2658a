#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lgps/patch.hpp"
#include "lgps/rng.hpp"
#include "lgps/vae/model.hpp"

namespace lgps {

// Maps patches to latent codes, one row per patch.
class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual std::string kind() const = 0;
  virtual int latent_dim() const = 0;
  virtual int patch_size() const = 0;
  // Throws kInvalidArgument when a patch does not match patch_size().
  virtual Eigen::MatrixXd encode(const std::vector<patch::Patch>& patches) const = 0;
  virtual void save(const std::filesystem::path& path) const = 0;

  Eigen::VectorXd encode(const patch::Patch& p) const;
};

// Posterior mean of a trained VAE.
class VaeEncoder : public Encoder {
 public:
  explicit VaeEncoder(vae::Vae<float> model) : model_(std::move(model)) {}

  std::string kind() const override { return "vae"; }
  int latent_dim() const override { return model_.latent_dim(); }
  int patch_size() const override { return model_.config().patch_size; }
  using Encoder::encode;
  Eigen::MatrixXd encode(const std::vector<patch::Patch>& patches) const override;
  void save(const std::filesystem::path& path) const override;

  const vae::Vae<float>& model() const { return model_; }

 private:
  vae::Vae<float> model_;
};

// Linear encoder: centered projection onto the top principal components of
// the flattened patches.
class PcaEncoder : public Encoder {
 public:
  PcaEncoder(int patch_size, Eigen::VectorXd mean, Eigen::MatrixXd components);

  // rows: one flattened sample per row. Uses an exact covariance
  // eigendecomposition up to 2048 dims, randomized subspace iteration above.
  // Keeps fewer than m components (with a warning) when the data rank is lower.
  static PcaEncoder fit(const Eigen::MatrixXd& rows, int m, int patch_size, Rng& rng);
  static PcaEncoder fit(const patch::PatchCorpus& corpus, int m, Rng& rng);

  std::string kind() const override { return "pca"; }
  int latent_dim() const override { return static_cast<int>(components_.cols()); }
  int patch_size() const override { return patch_size_; }
  using Encoder::encode;
  Eigen::MatrixXd encode(const std::vector<patch::Patch>& patches) const override;
  void save(const std::filesystem::path& path) const override;

  Eigen::MatrixXd project(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& codes) const;
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& components() const { return components_; }  // (D, k), orthonormal

 private:
  int patch_size_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd components_;
};

// Dispatches on the checkpoint kind ("vae" or "pca").
std::shared_ptr<const Encoder> load_encoder(const std::filesystem::path& path);

}  // namespace lgps
