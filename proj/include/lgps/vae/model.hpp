#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgps/error.hpp"
#include "lgps/patch.hpp"
#include "lgps/rng.hpp"
#include "lgps/vae/layers.hpp"

namespace lgps::vae {

struct VaeConfig {
  int patch_size = 32;
  int channels = patch::kChannels;
  int latent_dim = 32;
  double beta = 1.0;
  int batch = 64;
  double lr = 1e-3;
  int epochs = 20;
  std::uint64_t seed = 0;
  std::vector<int> widths{16, 32, 64};
  double leaky_slope = 0.2;
  double validation_fraction = 0.3;
  // Stop after the epoch that crosses this wall-clock budget; 0 = no limit.
  double max_seconds = 0.0;

  // P = 32, widths (16, 32, 64).
  static VaeConfig desk();
  // P = 128, widths (32, 64, 128, 256).
  static VaeConfig full();
};

void validate(const VaeConfig& config);
nlohmann::json to_json(const VaeConfig& config);
VaeConfig vae_config_from_json(const nlohmann::json& j);

// Per-sample KL(N(mu, exp(logvar)) || N(0, I)), one entry per column.
template <typename T>
Vector<T> kl_divergence(const Matrix<T>& mu, const Matrix<T>& logvar);

struct LossTerms {
  double loss = 0.0;   // recon + beta * kl
  double recon = 0.0;  // batch mean of per-sample sum of squared errors
  double kl = 0.0;     // batch mean
};

template <typename T>
class Vae {
 public:
  struct Posterior {
    Matrix<T> mu;      // (m, n)
    Matrix<T> logvar;  // (m, n)
  };

  Vae(const VaeConfig& config, Rng& rng);

  const VaeConfig& config() const { return config_; }
  int latent_dim() const { return config_.latent_dim; }

  // x: (channels, n * P * P) in HWC column order, see to_columns().
  Posterior encode(const Matrix<T>& x, int n) const;
  // z: (m, n) -> (channels, n * P * P), values in (-1, 1).
  Matrix<T> decode(const Matrix<T>& z) const;

  // Negative ELBO with one reparameterized sample per datum; eps is drawn
  // from rng column by column. Gradients are written (not accumulated) into
  // every parameter.
  LossTerms loss_and_gradients(const Matrix<T>& x, int n, Rng& rng);
  // Same loss without gradients.
  LossTerms loss(const Matrix<T>& x, int n, Rng& rng) const;

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;

  template <typename U>
  Vae<U> cast() const;

 private:
  template <typename U>
  friend class Vae;

  int final_side() const;

  VaeConfig config_;
  std::vector<Conv2d<T>> enc_convs_;
  std::vector<LeakyRelu<T>> enc_acts_;
  Linear<T> enc_fc_;
  Linear<T> dec_fc_;
  LeakyRelu<T> dec_fc_act_;
  std::vector<ConvTranspose2d<T>> dec_convs_;
  std::vector<LeakyRelu<T>> dec_acts_;
  Tanh<T> out_;
};

// Channel-major patches (c, v, u) -> HWC columns (channels, n * P * P).
template <typename T>
Matrix<T> to_columns(std::span<const float> patches, int n, int size, int channels);
template <typename T>
Matrix<T> to_columns(const std::vector<patch::Patch>& patches);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  template <typename T>
  void step(const std::vector<Parameter<T>*>& params);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  LossTerms train;
  LossTerms validation;
  double seconds = 0.0;
};

struct TrainResult {
  Vae<float> model;
  std::vector<EpochRecord> history;
  bool hit_time_budget = false;
};

// Thrown when a batch loss becomes non-finite. Carries the model as it was at
// the end of the last completed epoch (or the initial model).
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::shared_ptr<const Vae<float>> last_finite,
                   std::vector<EpochRecord> history)
      : Error(ErrorKind::kTrainingDiverged, what),
        last_finite_(std::move(last_finite)),
        history_(std::move(history)) {}

  const std::shared_ptr<const Vae<float>>& last_finite() const { return last_finite_; }
  const std::vector<EpochRecord>& history() const { return history_; }

 private:
  std::shared_ptr<const Vae<float>> last_finite_;
  std::vector<EpochRecord> history_;
};

// Shuffled 70/30 split (per config), Adam, mini-batches of config.batch.
// Requires at least 2 * batch patches.
TrainResult train(const patch::PatchCorpus& corpus, const VaeConfig& config, Rng& rng);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

void save_vae(const std::filesystem::path& path, const Vae<float>& model);
Vae<float> load_vae(const std::filesystem::path& path);

}  // namespace lgps::vae
