#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>

#include "nplab/checkpoint.hpp"
#include "nplab/datagen.hpp"
#include "nplab/encoders.hpp"
#include "nplab/gp_oracle.hpp"
#include "nplab/nn.hpp"

namespace nplab {

enum class ModelKind { CNP, GNP, ConvCNP, ConvGNP, FullConvGNP };

ModelKind parse_model_kind(const std::string& name);  // cnp, gnp, convcnp, convgnp, fullconvgnp
std::string model_kind_name(ModelKind kind);
bool is_convolutional(ModelKind kind);
bool is_mean_field(ModelKind kind);

struct ModelConfig;

/// Smallest input shift under which a convolutional model is exactly
/// equivariant: its grids start on multiples of 2^levels points. Zero for the
/// deep-set models.
double shift_quantum(const ModelConfig& cfg);

struct ModelConfig {
  ModelKind kind = ModelKind::ConvCNP;
  // CNP / GNP
  std::size_t width = 128;
  std::size_t encoder_depth = 3;
  std::size_t decoder_depth = 6;
  std::size_t encoding_dim = 256;
  // Convolutional models
  std::size_t unet_channels = 32;
  std::size_t unet_levels = 4;
  std::size_t kernel_size = 5;
  Discretisation disc{64.0, 0.1};
  // GNP family
  std::size_t rank = 64;
  // FullConvGNP covariance path on a 2-D grid
  double kernel_points_per_unit = 16.0;
  std::size_t kernel_channels = 16;
  std::size_t max_kernel_grid = 128;
  std::uint64_t seed = 0;

  static ModelConfig defaults(ModelKind kind);
  /// Width 4 everywhere, for gradient checks.
  static ModelConfig tiny(ModelKind kind);

  std::map<std::string, std::string> to_metadata() const;
  static ModelConfig from_metadata(const std::map<std::string, std::string>& meta);
  /// Throws ParameterError on inconsistent settings.
  void validate() const;
};

/// Differentiable prediction at N targets.
struct Prediction {
  enum class Kind { MeanField, LowRank, FullCov };
  Kind kind = Kind::MeanField;
  Tensor mean;    // [N]
  Tensor var;     // [N] (mean field)
  Tensor noise;   // [] shared (mean field) or [N] per target (Gaussian family)
  Tensor factor;  // [N, R] (low rank)
  Tensor cov;     // [N, N] (full)

  std::size_t size() const { return mean.size(); }
  /// Covariance of the noiseless function values, [N, N].
  Tensor covariance() const;
  /// Observation noise per target, [N].
  Tensor noise_diagonal() const;
};

/// Values-only views used by the oracle-side code. With `with_noise`, the
/// Gaussian family's per-target noise is added to the covariance diagonal;
/// mean-field noise is carried in noise_var.
GaussianJoint to_joint(const Prediction& pred, bool with_noise = true);
/// Marginals; per-target noise is folded into var for the Gaussian family.
MeanFieldPrediction to_mean_field(const Prediction& pred);

/// log N(y; mean, covariance + diag(noise) + jitter I). Mean-field predictions
/// use the product of univariate densities; low-rank covariances are formed
/// densely.
Tensor predict_loglik(const Prediction& pred, std::span<const double> y_t, double jitter = 0.0);

inline std::span<const double> as_span(const VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  virtual Prediction forward(std::span<const double> x_c, std::span<const double> y_c,
                             std::span<const double> x_t) const = 0;
  Prediction forward(const Task& task) const;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  Checkpoint to_checkpoint() const;
  /// Overwrites the parameters from a checkpoint of the same variant and shape.
  void load(const Checkpoint& ck);

 protected:
  ModelConfig cfg_;
  ParameterSet params_;
};

std::unique_ptr<Model> make_model(const ModelConfig& cfg);
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck);

}  // namespace nplab
