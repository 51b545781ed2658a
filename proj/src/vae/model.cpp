#include "lgps/vae/model.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "lgps/checkpoint.hpp"

namespace lgps::vae {
namespace {

template <typename T>
Matrix<T> reshaped(const Matrix<T>& m, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix<T>>(m.data(), rows, cols);
}

template <typename T>
Matrix<T> draw_eps(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix<T> eps(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) eps(i, j) = static_cast<T>(rng.normal());
  }
  return eps;
}

int conv_depth(const VaeConfig& c) { return static_cast<int>(c.widths.size()); }

}  // namespace

VaeConfig VaeConfig::desk() { return VaeConfig{}; }

VaeConfig VaeConfig::full() {
  VaeConfig c;
  c.patch_size = 128;
  c.widths = {32, 64, 128, 256};
  return c;
}

void validate(const VaeConfig& c) {
  if (c.latent_dim < 1) fail(ErrorKind::kInvalidArgument, "latent_dim must be >= 1");
  if (!(c.beta >= 0.0)) fail(ErrorKind::kInvalidArgument, "beta must be >= 0");
  if (c.batch < 1) fail(ErrorKind::kInvalidArgument, "batch must be >= 1");
  if (!(c.lr > 0.0)) fail(ErrorKind::kInvalidArgument, "lr must be positive");
  if (c.epochs < 0) fail(ErrorKind::kInvalidArgument, "epochs must be >= 0");
  if (c.channels < 1) fail(ErrorKind::kInvalidArgument, "channels must be >= 1");
  if (c.widths.empty()) fail(ErrorKind::kInvalidArgument, "at least one conv layer is required");
  for (int w : c.widths) {
    if (w < 1) fail(ErrorKind::kInvalidArgument, "layer widths must be positive");
  }
  const int step = 1 << conv_depth(c);
  if (c.patch_size < step || c.patch_size % step != 0) {
    fail(ErrorKind::kInvalidArgument, "patch size must be a multiple of 2^(conv depth)");
  }
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    fail(ErrorKind::kInvalidArgument, "validation_fraction must be in [0, 1)");
  }
}

nlohmann::json to_json(const VaeConfig& c) {
  return {{"patch_size", c.patch_size}, {"channels", c.channels},
          {"latent_dim", c.latent_dim}, {"beta", c.beta},
          {"batch", c.batch},           {"lr", c.lr},
          {"epochs", c.epochs},         {"seed", c.seed},
          {"widths", c.widths},         {"leaky_slope", c.leaky_slope},
          {"validation_fraction", c.validation_fraction},
          {"max_seconds", c.max_seconds}};
}

VaeConfig vae_config_from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.patch_size = j.value("patch_size", c.patch_size);
  c.channels = j.value("channels", c.channels);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.beta = j.value("beta", c.beta);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.widths = j.value("widths", c.widths);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.max_seconds = j.value("max_seconds", c.max_seconds);
  validate(c);
  return c;
}

template <typename T>
Vector<T> kl_divergence(const Matrix<T>& mu, const Matrix<T>& logvar) {
  return (0.5 * (mu.array().square() + logvar.array().exp() - logvar.array() - T(1)))
      .matrix()
      .colwise()
      .sum()
      .transpose();
}

template <typename T>
Vae<T>::Vae(const VaeConfig& config, Rng& rng)
    : config_((validate(config), config)),
      enc_fc_("encoder.fc", config.widths.back() * final_side() * final_side(),
              2 * config.latent_dim, rng),
      dec_fc_("decoder.fc", config.latent_dim,
              config.widths.back() * final_side() * final_side(), rng),
      dec_fc_act_(static_cast<T>(config.leaky_slope)) {
  int in = config.channels;
  for (std::size_t i = 0; i < config.widths.size(); ++i) {
    enc_convs_.emplace_back("encoder.conv" + std::to_string(i), in, config.widths[i], rng);
    enc_acts_.emplace_back(static_cast<T>(config.leaky_slope));
    in = config.widths[i];
  }
  for (std::size_t i = config.widths.size(); i-- > 0;) {
    const int out = i == 0 ? config.channels : config.widths[i - 1];
    dec_convs_.emplace_back("decoder.tconv" + std::to_string(config.widths.size() - 1 - i),
                            config.widths[i], out, rng);
    if (i != 0) dec_acts_.emplace_back(static_cast<T>(config.leaky_slope));
  }
}

template <typename T>
int Vae<T>::final_side() const {
  return config_.patch_size >> conv_depth(config_);
}

template <typename T>
typename Vae<T>::Posterior Vae<T>::encode(const Matrix<T>& x, int n) const {
  const int p = config_.patch_size;
  if (n < 1 || x.rows() != config_.channels || x.cols() != static_cast<Eigen::Index>(n) * p * p) {
    fail(ErrorKind::kInvalidArgument, "patch batch does not match the encoder input shape");
  }
  Matrix<T> h = x;
  int side = p;
  for (std::size_t i = 0; i < enc_convs_.size(); ++i) {
    h = enc_acts_[i].apply(enc_convs_[i].apply(h, n, side, side));
    side /= 2;
  }
  const Matrix<T> stats = enc_fc_.apply(reshaped(h, h.rows() * side * side, n));
  const int m = config_.latent_dim;
  return {stats.topRows(m), stats.bottomRows(m)};
}

template <typename T>
Matrix<T> Vae<T>::decode(const Matrix<T>& z) const {
  if (z.rows() != config_.latent_dim) {
    fail(ErrorKind::kInvalidArgument, "latent code has the wrong dimension");
  }
  const int n = static_cast<int>(z.cols());
  int side = final_side();
  Matrix<T> h = dec_fc_act_.apply(dec_fc_.apply(z));
  h = reshaped(h, config_.widths.back(), static_cast<Eigen::Index>(n) * side * side);
  for (std::size_t i = 0; i < dec_convs_.size(); ++i) {
    h = dec_convs_[i].apply(h, n, side, side);
    side *= 2;
    if (i < dec_acts_.size()) h = dec_acts_[i].apply(h);
  }
  return Tanh<T>::apply(h);
}

template <typename T>
LossTerms Vae<T>::loss(const Matrix<T>& x, int n, Rng& rng) const {
  const Posterior post = encode(x, n);
  const Matrix<T> eps = draw_eps<T>(post.mu.rows(), post.mu.cols(), rng);
  const Matrix<T> z = post.mu + ((T(0.5) * post.logvar.array()).exp() * eps.array()).matrix();
  const Matrix<T> y = decode(z);
  LossTerms out;
  out.recon = static_cast<double>((y - x).squaredNorm()) / n;
  out.kl = static_cast<double>(kl_divergence<T>(post.mu, post.logvar).sum()) / n;
  out.loss = out.recon + config_.beta * out.kl;
  return out;
}

template <typename T>
LossTerms Vae<T>::loss_and_gradients(const Matrix<T>& x, int n, Rng& rng) {
  const int p = config_.patch_size;
  if (n < 1 || x.rows() != config_.channels || x.cols() != static_cast<Eigen::Index>(n) * p * p) {
    fail(ErrorKind::kInvalidArgument, "patch batch does not match the encoder input shape");
  }
  for (Parameter<T>* param : parameters()) param->zero_grad();
  const int m = config_.latent_dim;
  const int s = final_side();
  const int c_last = config_.widths.back();

  Matrix<T> h = x;
  int side = p;
  for (std::size_t i = 0; i < enc_convs_.size(); ++i) {
    h = enc_acts_[i].forward(enc_convs_[i].forward(h, n, side, side));
    side /= 2;
  }
  const Matrix<T> stats = enc_fc_.forward(reshaped(h, static_cast<Eigen::Index>(c_last) * s * s, n));
  const Matrix<T> mu = stats.topRows(m);
  const Matrix<T> logvar = stats.bottomRows(m);
  const Matrix<T> eps = draw_eps<T>(m, n, rng);
  const Matrix<T> sigma = (T(0.5) * logvar.array()).exp().matrix();
  const Matrix<T> z = mu + (sigma.array() * eps.array()).matrix();

  Matrix<T> d = dec_fc_act_.forward(dec_fc_.forward(z));
  d = reshaped(d, c_last, static_cast<Eigen::Index>(n) * s * s);
  side = s;
  for (std::size_t i = 0; i < dec_convs_.size(); ++i) {
    d = dec_convs_[i].forward(d, n, side, side);
    side *= 2;
    if (i < dec_acts_.size()) d = dec_acts_[i].forward(d);
  }
  const Matrix<T> y = out_.forward(d);

  LossTerms out;
  out.recon = static_cast<double>((y - x).squaredNorm()) / n;
  out.kl = static_cast<double>(kl_divergence<T>(mu, logvar).sum()) / n;
  out.loss = out.recon + config_.beta * out.kl;

  const T inv_n = T(1) / static_cast<T>(n);
  const T beta = static_cast<T>(config_.beta);
  Matrix<T> g = out_.backward(T(2) * inv_n * (y - x));
  for (std::size_t i = dec_convs_.size(); i-- > 0;) {
    if (i < dec_acts_.size()) g = dec_acts_[i].backward(g);
    g = dec_convs_[i].backward(g);
  }
  g = reshaped(g, static_cast<Eigen::Index>(c_last) * s * s, n);
  const Matrix<T> dz = dec_fc_.backward(dec_fc_act_.backward(g));

  Matrix<T> dstats(2 * m, n);
  dstats.topRows(m) = dz + beta * inv_n * mu;
  dstats.bottomRows(m) =
      (dz.array() * eps.array() * T(0.5) * sigma.array() +
       beta * inv_n * T(0.5) * (logvar.array().exp() - T(1)))
          .matrix();
  g = enc_fc_.backward(dstats);
  g = reshaped(g, c_last, static_cast<Eigen::Index>(n) * s * s);
  for (std::size_t i = enc_convs_.size(); i-- > 0;) {
    g = enc_convs_[i].backward(enc_acts_[i].backward(g));
  }
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Vae<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& c : enc_convs_) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  }
  out.push_back(&enc_fc_.weight);
  out.push_back(&enc_fc_.bias);
  out.push_back(&dec_fc_.weight);
  out.push_back(&dec_fc_.bias);
  for (auto& c : dec_convs_) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  }
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> Vae<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  for (Parameter<T>* p : const_cast<Vae<T>*>(this)->parameters()) out.push_back(p);
  return out;
}

template <typename T>
template <typename U>
Vae<U> Vae<T>::cast() const {
  Rng rng(0);
  Vae<U> out(config_, rng);
  auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i]->value = src[i]->value.template cast<U>();
    dst[i]->zero_grad();
  }
  return out;
}

template <typename T>
Matrix<T> to_columns(std::span<const float> patches, int n, int size, int channels) {
  const std::size_t pixels = static_cast<std::size_t>(size) * size;
  if (patches.size() != pixels * channels * n) {
    fail(ErrorKind::kInvalidArgument, "patch buffer does not match n x channels x P x P");
  }
  Matrix<T> x(channels, static_cast<Eigen::Index>(n * pixels));
  for (int s = 0; s < n; ++s) {
    const float* src = patches.data() + s * pixels * channels;
    for (int c = 0; c < channels; ++c) {
      for (std::size_t px = 0; px < pixels; ++px) {
        x(c, static_cast<Eigen::Index>(s * pixels + px)) = static_cast<T>(src[c * pixels + px]);
      }
    }
  }
  return x;
}

template <typename T>
Matrix<T> to_columns(const std::vector<patch::Patch>& patches) {
  if (patches.empty()) fail(ErrorKind::kInvalidArgument, "no patches");
  const int size = patches.front().size;
  const std::size_t pixels = static_cast<std::size_t>(size) * size;
  Matrix<T> x(patch::kChannels, static_cast<Eigen::Index>(patches.size() * pixels));
  for (std::size_t s = 0; s < patches.size(); ++s) {
    const auto& data = patches[s].data;
    if (patches[s].size != size || data.size() != pixels * patch::kChannels) {
      fail(ErrorKind::kInvalidArgument, "patches in a batch must share one size");
    }
    for (int c = 0; c < patch::kChannels; ++c) {
      for (std::size_t px = 0; px < pixels; ++px) {
        x(c, static_cast<Eigen::Index>(s * pixels + px)) = static_cast<T>(data[c * pixels + px]);
      }
    }
  }
  return x;
}

template <typename T>
void Adam::step(const std::vector<Parameter<T>*>& params) {
  if (m_.empty()) {
    for (const Parameter<T>* p : params) {
      m_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::MatrixXd g = params[i]->grad.template cast<double>();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const Eigen::MatrixXd update =
        (lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_)).matrix();
    params[i]->value -= update.cast<T>();
  }
}

namespace {

LossTerms evaluate(const Vae<float>& model, const patch::PatchCorpus& corpus,
                   const std::vector<std::size_t>& idx, int batch, Rng rng) {
  LossTerms total;
  std::size_t seen = 0;
  std::vector<float> buf;
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    const std::size_t end = std::min(idx.size(), start + batch);
    buf.clear();
    for (std::size_t k = start; k < end; ++k) {
      auto s = corpus.sample(idx[k]);
      buf.insert(buf.end(), s.begin(), s.end());
    }
    const int n = static_cast<int>(end - start);
    const LossTerms t = model.loss(to_columns<float>(buf, n, corpus.size, corpus.channels), n, rng);
    total.loss += t.loss * n;
    total.recon += t.recon * n;
    total.kl += t.kl * n;
    seen += n;
  }
  if (seen > 0) {
    total.loss /= seen;
    total.recon /= seen;
    total.kl /= seen;
  }
  return total;
}

}  // namespace

TrainResult train(const patch::PatchCorpus& corpus, const VaeConfig& config, Rng& rng) {
  validate(config);
  if (corpus.size != config.patch_size || corpus.channels != config.channels) {
    fail(ErrorKind::kInvalidArgument, "corpus patch shape does not match the VAE config");
  }
  const std::size_t count = corpus.count();
  if (count < 2 * static_cast<std::size_t>(config.batch)) {
    fail(ErrorKind::kInvalidArgument, "corpus must hold at least 2 * batch patches");
  }
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();

  TrainResult result{Vae<float>(config, rng), {}, false};
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * count));
  std::vector<std::size_t> val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> trn(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));

  // Epoch 0 records the untrained model.
  EpochRecord initial;
  initial.train = evaluate(result.model, corpus, trn, config.batch, rng.split(0));
  if (!val.empty()) initial.validation = evaluate(result.model, corpus, val, config.batch, rng.split(1));
  result.history.push_back(initial);

  auto snapshot = std::make_shared<const Vae<float>>(result.model);
  Adam adam(config.lr);
  std::vector<float> buf;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(trn);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < trn.size(); start += config.batch) {
      const std::size_t end = std::min(trn.size(), start + config.batch);
      buf.clear();
      for (std::size_t k = start; k < end; ++k) {
        auto s = corpus.sample(trn[k]);
        buf.insert(buf.end(), s.begin(), s.end());
      }
      const int n = static_cast<int>(end - start);
      const LossTerms t = result.model.loss_and_gradients(
          to_columns<float>(buf, n, corpus.size, corpus.channels), n, rng);
      if (!std::isfinite(t.loss)) {
        throw TrainingDiverged("non-finite loss in epoch " + std::to_string(epoch), snapshot,
                               result.history);
      }
      adam.step(result.model.parameters());
      rec.train.loss += t.loss * n;
      rec.train.recon += t.recon * n;
      rec.train.kl += t.kl * n;
      seen += n;
    }
    rec.train.loss /= seen;
    rec.train.recon /= seen;
    rec.train.kl /= seen;
    if (!val.empty()) {
      rec.validation = evaluate(result.model, corpus, val, config.batch,
                                rng.split(static_cast<std::uint64_t>(epoch) + 1));
    }
    rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    result.history.push_back(rec);
    snapshot = std::make_shared<const Vae<float>>(result.model);
    if (config.max_seconds > 0.0 && rec.seconds >= config.max_seconds) {
      result.hit_time_budget = epoch < config.epochs;
      break;
    }
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "epoch,train_loss,train_recon,train_kl,val_loss,val_recon,val_kl,seconds\n";
  for (const EpochRecord& r : history) {
    out << r.epoch << ',' << r.train.loss << ',' << r.train.recon << ',' << r.train.kl << ','
        << r.validation.loss << ',' << r.validation.recon << ',' << r.validation.kl << ','
        << r.seconds << '\n';
  }
}

void save_vae(const std::filesystem::path& path, const Vae<float>& model) {
  Checkpoint ckpt;
  ckpt.kind = "vae";
  ckpt.metadata = {{"config", to_json(model.config())}};
  for (const Parameter<float>* p : model.parameters()) ckpt.put(p->name, Eigen::MatrixXf(p->value));
  ckpt.save(path);
}

Vae<float> load_vae(const std::filesystem::path& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.kind != "vae") fail(ErrorKind::kData, path.string() + " is not a VAE checkpoint");
  Rng rng(0);
  Vae<float> model(vae_config_from_json(ckpt.metadata.at("config")), rng);
  for (Parameter<float>* p : model.parameters()) {
    p->value = ckpt.get(p->name, p->value.rows(), p->value.cols()).cast<float>();
    p->zero_grad();
  }
  return model;
}

template Vector<float> kl_divergence<float>(const Matrix<float>&, const Matrix<float>&);
template Vector<double> kl_divergence<double>(const Matrix<double>&, const Matrix<double>&);
template class Vae<float>;
template class Vae<double>;
template Vae<double> Vae<float>::cast<double>() const;
template Vae<float> Vae<double>::cast<float>() const;
template Matrix<float> to_columns<float>(std::span<const float>, int, int, int);
template Matrix<double> to_columns<double>(std::span<const float>, int, int, int);
template Matrix<float> to_columns<float>(const std::vector<patch::Patch>&);
template Matrix<double> to_columns<double>(const std::vector<patch::Patch>&);
template void Adam::step<float>(const std::vector<Parameter<float>*>&);
template void Adam::step<double>(const std::vector<Parameter<double>*>&);

}  // namespace lgps::vae
