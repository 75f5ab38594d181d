#include "nplab/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nplab/errors.hpp"

namespace nplab {

namespace {

constexpr double kNoiseFloor = 1e-6;

// Row i of a [C, N] tensor as [N].
Tensor row(const Tensor& t, std::size_t i) { return reshape(slice(t, 0, i, i + 1), {t.dim(1)}); }

std::vector<double> concat_inputs(std::span<const double> a, std::span<const double> b) {
  std::vector<double> v(a.begin(), a.end());
  v.insert(v.end(), b.begin(), b.end());
  return v;
}

Tensor positive(const Tensor& raw) { return softplus(raw); }

Tensor noise_head(const Tensor& pre) { return add_scalar(softplus(pre), kNoiseFloor); }

}  // namespace

ModelKind parse_model_kind(const std::string& name) {
  if (name == "cnp") return ModelKind::CNP;
  if (name == "gnp") return ModelKind::GNP;
  if (name == "convcnp") return ModelKind::ConvCNP;
  if (name == "convgnp") return ModelKind::ConvGNP;
  if (name == "fullconvgnp") return ModelKind::FullConvGNP;
  throw ParameterError("unknown model '" + name + "' (valid: cnp, gnp, convcnp, convgnp, fullconvgnp)");
}

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::CNP: return "cnp";
    case ModelKind::GNP: return "gnp";
    case ModelKind::ConvCNP: return "convcnp";
    case ModelKind::ConvGNP: return "convgnp";
    case ModelKind::FullConvGNP: return "fullconvgnp";
  }
  return "?";
}

bool is_convolutional(ModelKind kind) {
  return kind == ModelKind::ConvCNP || kind == ModelKind::ConvGNP || kind == ModelKind::FullConvGNP;
}

bool is_mean_field(ModelKind kind) { return kind == ModelKind::CNP || kind == ModelKind::ConvCNP; }

double shift_quantum(const ModelConfig& cfg) {
  if (!is_convolutional(cfg.kind)) return 0.0;
  double ppu = cfg.disc.points_per_unit;
  if (cfg.kind == ModelKind::FullConvGNP) ppu = std::min(ppu, cfg.kernel_points_per_unit);
  return static_cast<double>(std::size_t{1} << cfg.unet_levels) / ppu;
}

ModelConfig ModelConfig::defaults(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  return c;
}

ModelConfig ModelConfig::tiny(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.width = 4;
  c.encoder_depth = 2;
  c.decoder_depth = 2;
  c.encoding_dim = 4;
  c.unet_channels = 4;
  c.unet_levels = 2;
  c.kernel_size = 3;
  c.disc = {8.0, 0.1};
  c.rank = 3;
  c.kernel_points_per_unit = 4.0;
  c.kernel_channels = 4;
  return c;
}

std::map<std::string, std::string> ModelConfig::to_metadata() const {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {
      {"model", model_kind_name(kind)},
      {"width", std::to_string(width)},
      {"encoder_depth", std::to_string(encoder_depth)},
      {"decoder_depth", std::to_string(decoder_depth)},
      {"encoding_dim", std::to_string(encoding_dim)},
      {"unet_channels", std::to_string(unet_channels)},
      {"unet_levels", std::to_string(unet_levels)},
      {"kernel_size", std::to_string(kernel_size)},
      {"points_per_unit", num(disc.points_per_unit)},
      {"margin", num(disc.margin)},
      {"rank", std::to_string(rank)},
      {"kernel_points_per_unit", num(kernel_points_per_unit)},
      {"kernel_channels", std::to_string(kernel_channels)},
      {"max_kernel_grid", std::to_string(max_kernel_grid)},
      {"seed", std::to_string(seed)},
  };
}

ModelConfig ModelConfig::from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw ParameterError(std::string("checkpoint: missing metadata key '") + key + "'");
    return it->second;
  };
  auto size = [&](const char* key) { return static_cast<std::size_t>(std::stoull(get(key))); };
  ModelConfig c;
  c.kind = parse_model_kind(get("model"));
  c.width = size("width");
  c.encoder_depth = size("encoder_depth");
  c.decoder_depth = size("decoder_depth");
  c.encoding_dim = size("encoding_dim");
  c.unet_channels = size("unet_channels");
  c.unet_levels = size("unet_levels");
  c.kernel_size = size("kernel_size");
  c.disc.points_per_unit = std::stod(get("points_per_unit"));
  c.disc.margin = std::stod(get("margin"));
  c.rank = size("rank");
  c.kernel_points_per_unit = std::stod(get("kernel_points_per_unit"));
  c.kernel_channels = size("kernel_channels");
  c.max_kernel_grid = size("max_kernel_grid");
  c.seed = std::stoull(get("seed"));
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ParameterError("model config: " + m); };
  if (width == 0 || encoding_dim == 0 || unet_channels == 0 || kernel_channels == 0) fail("widths must be positive");
  if (encoder_depth == 0 || decoder_depth == 0) fail("depths must be at least 1");
  if (kernel_size % 2 == 0) fail("kernel_size must be odd");
  if ((kind == ModelKind::GNP || kind == ModelKind::ConvGNP) && rank == 0) fail("rank must be at least 1");
  if (!(disc.points_per_unit > 0) || !(disc.margin >= 0)) fail("invalid discretisation");
  if (!(kernel_points_per_unit > 0)) fail("kernel_points_per_unit must be positive");
}

Tensor Prediction::covariance() const {
  switch (kind) {
    case Kind::MeanField: return diag(var);
    case Kind::LowRank: return matmul(factor, transpose(factor));
    case Kind::FullCov: return cov;
  }
  return {};
}

Tensor Prediction::noise_diagonal() const {
  if (kind == Kind::MeanField) return mul(Tensor::full({size()}, 1.0), noise);
  return noise;
}

GaussianJoint to_joint(const Prediction& pred, bool with_noise) {
  const auto n = static_cast<Eigen::Index>(pred.size());
  GaussianJoint g;
  g.mean = Eigen::Map<const VectorXd>(pred.mean.values().data(), n);
  Tensor c = pred.covariance().detach();
  g.cov = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      c.values().data(), n, n);
  if (!with_noise) return g;
  if (pred.kind == Prediction::Kind::MeanField) {
    g.noise_var = pred.noise.item();
  } else {
    for (Eigen::Index i = 0; i < n; ++i) g.cov(i, i) += pred.noise[static_cast<std::size_t>(i)];
  }
  return g;
}

MeanFieldPrediction to_mean_field(const Prediction& pred) {
  const auto n = static_cast<Eigen::Index>(pred.size());
  MeanFieldPrediction m;
  m.mean = Eigen::Map<const VectorXd>(pred.mean.values().data(), n);
  if (pred.kind == Prediction::Kind::MeanField) {
    m.var = Eigen::Map<const VectorXd>(pred.var.values().data(), n);
    m.noise_var = pred.noise.item();
    return m;
  }
  auto g = to_joint(pred, true);
  m.var = g.cov.diagonal();
  return m;
}

Tensor predict_loglik(const Prediction& pred, std::span<const double> y_t, double jitter) {
  const std::size_t n = pred.size();
  if (y_t.size() != n) {
    throw ShapeError("predict_loglik: " + std::to_string(y_t.size()) + " observations for " +
                     std::to_string(n) + " targets");
  }
  Tensor y = Tensor::vector({y_t.begin(), y_t.end()});
  if (n == 0) return Tensor::scalar(0.0);
  if (pred.kind == Prediction::Kind::MeanField) {
    auto v = add(pred.var, pred.noise);
    if (jitter > 0) v = add_scalar(v, jitter);
    auto r = sub(y, pred.mean);
    auto terms = add(log(scale(v, 2 * std::numbers::pi)), div(square(r), v));
    return scale(sum(terms), -0.5);
  }
  auto cov = add(pred.covariance(), diag(add_scalar(pred.noise, jitter)));
  return mvn_logpdf(y, pred.mean, cov);
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

Prediction Model::forward(const Task& task) const {
  return forward(as_span(task.x_c), as_span(task.y_c), as_span(task.x_t));
}

Checkpoint Model::to_checkpoint() const {
  Checkpoint ck;
  ck.metadata = cfg_.to_metadata();
  for (const auto& [name, t] : params_.items()) ck.tensors.emplace_back(name, t.detach());
  return ck;
}

void Model::load(const Checkpoint& ck) {
  auto it = ck.metadata.find("model");
  if (it == ck.metadata.end() || it->second != model_kind_name(cfg_.kind)) {
    throw ParameterError("checkpoint holds model '" + (it == ck.metadata.end() ? std::string("?") : it->second) +
                         "', expected '" + model_kind_name(cfg_.kind) + "'");
  }
  params_.assign(ck.tensors);
}

namespace {

// Rows 2..2+R of the network output as an [N, R] factor. Dividing by sqrt(R)
// makes the covariance an average over features, so it starts at O(1) for
// any rank instead of O(R).
Tensor low_rank_factor(const Tensor& out, std::size_t rank) {
  return scale(transpose(slice(out, 0, 2, 2 + rank)), 1.0 / std::sqrt(static_cast<double>(rank)));
}

// The decoder of the CNP and GNP: its first layer acts on [z, x] and is split
// so the encoding's contribution is computed once per task.
struct PointDecoder {
  Tensor w_z, w_x, b;
  MLP rest;

  PointDecoder(ParameterSet& ps, const ModelConfig& c, std::size_t out, Rng& rng) {
    double s = std::sqrt(2.0 / static_cast<double>(c.encoding_dim + 1));
    w_z = ps.create("decoder.0.weight_z", {c.encoding_dim, c.width}, s, rng);
    w_x = ps.create("decoder.0.weight_x", {1, c.width}, s, rng);
    b = ps.create("decoder.0.bias", {c.width}, 0.05, rng);
    if (c.decoder_depth > 1) {
      rest = MLP(ps, "decoder.rest", c.width, c.width, out, c.decoder_depth - 1, rng);
    } else if (out != c.width) {
      throw ParameterError("model config: decoder_depth 1 needs width == output size");
    }
  }

  // z: [dim], x_t: targets -> [N, out]
  Tensor operator()(const Tensor& z, std::span<const double> x_t) const {
    const std::size_t n = x_t.size();
    auto zw = matmul(reshape(z, {1, z.size()}), w_z);  // [1, width]
    auto xw = matmul(Tensor({n, 1}, {x_t.begin(), x_t.end()}), w_x);
    auto h = relu(add(add(xw, reshape(zw, {zw.size()})), b));
    return rest.layers.empty() ? h : rest(h);
  }
};

class DeepSetModel : public Model {
 public:
  explicit DeepSetModel(const ModelConfig& cfg) : Model(cfg) {
    Rng rng(derive_seed(cfg.seed, 1));
    encoder_ = MLP(params_, "encoder", 2, cfg.width, cfg.encoding_dim, cfg.encoder_depth, rng);
    std::size_t out = cfg.kind == ModelKind::CNP ? 2 : 2 + cfg.rank;
    decoder_ = std::make_unique<PointDecoder>(params_, cfg, out, rng);
    if (cfg.kind == ModelKind::CNP) noise_raw_ = params_.create_constant("noise", {}, inverse_softplus(0.1));
  }

  Prediction forward(std::span<const double> x_c, std::span<const double> y_c,
                     std::span<const double> x_t) const override {
    auto z = deepset_encode(x_c, y_c, [this](const Tensor& xy) { return encoder_(xy); }, cfg_.encoding_dim);
    auto out = transpose(decoder_->operator()(z, x_t));  // [out, N]
    Prediction p;
    p.mean = row(out, 0);
    if (cfg_.kind == ModelKind::CNP) {
      p.kind = Prediction::Kind::MeanField;
      p.var = positive(row(out, 1));
      p.noise = noise_head(noise_raw_);
    } else {
      p.kind = Prediction::Kind::LowRank;
      p.noise = noise_head(row(out, 1));
      p.factor = low_rank_factor(out, cfg_.rank);
    }
    return p;
  }

 private:
  MLP encoder_;
  std::unique_ptr<PointDecoder> decoder_;
  Tensor noise_raw_;
};

Discretisation aligned(const ModelConfig& c, double ppu) {
  return {ppu, c.disc.margin, std::size_t{1} << c.unet_levels};
}

class ConvModel : public Model {
 public:
  explicit ConvModel(const ModelConfig& cfg) : Model(cfg) {
    Rng rng(derive_seed(cfg.seed, 1));
    std::size_t out = 2;
    if (cfg.kind == ModelKind::ConvGNP) out = 2 + cfg.rank;
    double ls = 2.0 / cfg.disc.points_per_unit;
    enc_ls_ = params_.create_constant("encoder.length_scale", {}, inverse_softplus(ls));
    dec_ls_ = params_.create_constant("decoder.length_scale", {}, inverse_softplus(ls));
    unet_ = UNet1d(params_, "unet", 2, cfg.unet_channels, out, cfg.unet_levels, cfg.kernel_size, rng);
    if (cfg.kind == ModelKind::ConvCNP) noise_raw_ = params_.create_constant("noise", {}, inverse_softplus(0.1));
    if (cfg.kind == ModelKind::FullConvGNP) {
      double kls = 2.0 / cfg.kernel_points_per_unit;
      kenc_ls_ = params_.create_constant("kernel.encoder.length_scale", {}, inverse_softplus(kls));
      kdec_ls_ = params_.create_constant("kernel.decoder.length_scale", {}, inverse_softplus(kls));
      kunet_ = UNet2d(params_, "kernel.unet", 3, cfg.kernel_channels, 1, cfg.unet_levels, cfg.kernel_size, rng);
    }
  }

  Prediction forward(std::span<const double> x_c, std::span<const double> y_c,
                     std::span<const double> x_t) const override {
    auto x_all = concat_inputs(x_c, x_t);
    auto grid = make_grid(aligned(cfg_, cfg_.disc.points_per_unit), x_all);
    auto enc = setconv_encode(x_c, y_c, grid, positive(enc_ls_), true);
    auto h = unet_(enc.channels);
    auto out = setconv_decode(h, grid, x_t, positive(dec_ls_));  // [C, N]
    Prediction p;
    p.mean = row(out, 0);
    switch (cfg_.kind) {
      case ModelKind::ConvCNP:
        p.kind = Prediction::Kind::MeanField;
        p.var = positive(row(out, 1));
        p.noise = noise_head(noise_raw_);
        break;
      case ModelKind::ConvGNP:
        p.kind = Prediction::Kind::LowRank;
        p.noise = noise_head(row(out, 1));
        p.factor = low_rank_factor(out, cfg_.rank);
        break;
      default:
        p.kind = Prediction::Kind::FullCov;
        p.noise = noise_head(row(out, 1));
        p.cov = kernel_path(x_c, y_c, x_t, x_all);
    }
    return p;
  }

 private:
  Tensor kernel_path(std::span<const double> x_c, std::span<const double> y_c,
                     std::span<const double> x_t, const std::vector<double>& x_all) const {
    auto grid = make_grid(aligned(cfg_, cfg_.kernel_points_per_unit), x_all);
    const std::size_t k = grid.size;
    if (k > cfg_.max_kernel_grid) {
      throw ResourceError("fullconvgnp: covariance grid of " + std::to_string(k) + " x " + std::to_string(k) +
                          " points exceeds the cap of " + std::to_string(cfg_.max_kernel_grid) + " x " +
                          std::to_string(cfg_.max_kernel_grid));
    }
    auto u = grid.points();
    auto order = canonical_order(x_c, y_c);
    Tensor data = Tensor::zeros({k, k}), density = Tensor::zeros({k, k});
    if (!order.empty()) {
      std::vector<double> xs, ys;
      for (auto i : order) {
        xs.push_back(x_c[i]);
        ys.push_back(y_c[i]);
      }
      // Gaussian bumps centred on the diagonal points (x_n, x_n).
      auto e = gaussian_weights(u, xs, positive(kenc_ls_));  // [K, N]
      auto et = transpose(e);
      density = matmul(e, et);
      data = div(matmul(mul(e, Tensor::vector(ys)), et), add_scalar(density, 1e-8));
    }
    std::vector<double> eye(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i) eye[i * k + i] = 1.0;
    std::vector<Tensor> parts{reshape(data, {1, k, k}), reshape(density, {1, k, k}),
                              Tensor({1, k, k}, std::move(eye))};
    auto z = reshape(kunet_(concat(parts, 0)), {k, k});
    // cov = (W Z)(W Z)^T / ppu, the grid sum approximating an integral.
    auto wz = matmul(gaussian_weights(x_t, u, positive(kdec_ls_)), z);  // [N, K]
    return scale(matmul(wz, transpose(wz)), 1.0 / cfg_.kernel_points_per_unit);
  }

  Tensor enc_ls_, dec_ls_, noise_raw_;
  UNet1d unet_;
  Tensor kenc_ls_, kdec_ls_;
  UNet2d kunet_;
};

}  // namespace

std::unique_ptr<Model> make_model(const ModelConfig& cfg) {
  if (is_convolutional(cfg.kind)) return std::make_unique<ConvModel>(cfg);
  return std::make_unique<DeepSetModel>(cfg);
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck) {
  auto model = make_model(ModelConfig::from_metadata(ck.metadata));
  model->load(ck);
  return model;
}

}  // namespace nplab
