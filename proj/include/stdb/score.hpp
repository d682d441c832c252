#pragma once

#include "stdb/bridge.hpp"
#include "stdb/datasets.hpp"
#include "stdb/linalg.hpp"
#include "stdb/sde.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace stdb {

enum class Activation { SiLU, Tanh };
enum class Objective { FT, RT };
enum class Weighting { Unit, Variance };

std::string to_string(Activation a);
std::string to_string(Objective o);
std::string to_string(Weighting w);
Activation activation_from_string(const std::string& s);
Objective objective_from_string(const std::string& s);
Weighting weighting_from_string(const std::string& s);

/// Fully connected network with a flat parameter vector. Layer l stores its
/// weight matrix (out x in, column-major) followed by its bias; there is no
/// activation after the last layer.
class Mlp {
 public:
  Mlp(std::vector<std::size_t> sizes, Activation activation);

  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
  Activation activation() const noexcept { return activation_; }
  std::size_t n_params() const noexcept { return static_cast<std::size_t>(params_.size()); }
  std::size_t input_dim() const noexcept { return sizes_.front(); }
  std::size_t output_dim() const noexcept { return sizes_.back(); }
  Vec& params() noexcept { return params_; }
  const Vec& params() const noexcept { return params_; }

  // Weights ~ N(0, 1/fan_in), biases zero; the last layer is scaled by `last_scale`.
  void initialize(std::uint64_t seed, double last_scale = 1.0);

  struct Tape {
    std::vector<Mat> inputs;  // input of each layer
    std::vector<Mat> pre;     // pre-activation of each hidden layer
  };
  Mat forward(const Mat& input) const;
  Mat forward(const Mat& input, Tape& tape) const;
  // Adds d(loss)/d(params) for d(loss)/d(output) = grad_output to `grad`.
  void backward(const Tape& tape, const Mat& grad_output, Vec& grad) const;

 private:
  std::vector<std::size_t> sizes_;
  Activation activation_;
  Vec params_;
};

/// Piecewise-linear function of time, constant beyond its end knots.
struct TimeProfile {
  std::vector<double> times;
  std::vector<double> values;

  double at(double t) const;
  bool empty() const noexcept { return times.empty(); }
};

/// Anything that maps (t, states, pins) to k x S scores.
class ScoreFunction {
 public:
  virtual ~ScoreFunction() = default;
  virtual std::size_t dim() const = 0;
  virtual Mat operator()(double t, const Mat& states, const Mat& pins) const = 0;
};

class LambdaScore final : public ScoreFunction {
 public:
  using Fn = std::function<Mat(double, const Mat&, const Mat&)>;
  LambdaScore(std::size_t dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}
  std::size_t dim() const override { return dim_; }
  Mat operator()(double t, const Mat& x, const Mat& p) const override { return fn_(t, x, p); }

 private:
  std::size_t dim_;
  Fn fn_;
};

inline constexpr std::size_t kTimeFrequencies = 8;

/// s(t, x, pin) = g(t) * net([x, t, sin(2^i pi t) for i < 8, pin]).
/// g is the output preconditioning profile (1 when empty).
class ScoreModel final : public ScoreFunction {
 public:
  ScoreModel(std::size_t dim, std::vector<std::size_t> hidden, Activation activation, Objective objective);

  std::size_t dim() const override { return dim_; }
  Objective objective() const noexcept { return objective_; }
  const std::vector<std::size_t>& hidden() const noexcept { return hidden_; }
  Mlp& net() noexcept { return net_; }
  const Mlp& net() const noexcept { return net_; }
  const TimeProfile& output_scale() const noexcept { return scale_; }
  void set_output_scale(TimeProfile scale) { scale_ = std::move(scale); }
  double scale_at(double t) const { return scale_.empty() ? 1.0 : scale_.at(t); }
  std::uint64_t seed() const noexcept { return seed_; }
  void initialize(std::uint64_t seed);

  static std::size_t input_dim(std::size_t dim) { return 2 * dim + 1 + kTimeFrequencies; }
  Mat embed(const Vec& t, const Mat& states, const Mat& pins) const;
  Mat operator()(double t, const Mat& states, const Mat& pins) const override;
  Mat evaluate(const Vec& t, const Mat& states, const Mat& pins) const;

  // Arbitrary metadata stored with the checkpoint (run configuration).
  nlohmann::json metadata;

 private:
  std::size_t dim_;
  std::vector<std::size_t> hidden_;
  Objective objective_;
  Mlp net_;
  TimeProfile scale_;
  std::uint64_t seed_ = 0;
};

/// Regression batch: loss = mean_i w_i |s(t_i, x_i, pin_i) - y_i|^2.
struct ScoreBatch {
  Vec t;
  Mat x;
  Mat pin;
  Mat target;
  Vec weight;
  std::size_t size() const noexcept { return static_cast<std::size_t>(t.size()); }
};

struct LossAndGrad {
  double loss = 0.0;
  Vec grad;
};
LossAndGrad loss_and_grad(const ScoreModel& model, const ScoreBatch& batch);
double batch_loss(const ScoreFunction& model, const ScoreBatch& batch);

/// grad_{x_t} log p(x1 | x_t) of the basic process (the FT target).
Vec analytic_ft_target(const DriftSchedule& base, const Propagator& prop, double t, const Vec& x_t, const Vec& x1);
/// -Sigma(t)^{-1} (x_t - mu(t)) of the bridge marginal (the RT target).
Vec analytic_rt_target(const BridgeSpec& spec, double t, const Vec& x_t);

/// Draws FT/RT regression batches from a bridge marginal table.
///   FT: x(0) ~ p0, x(1) ~ data, pin = x(0), target grad log p(x1 | x_t).
///   RT: x(0) ~ data, x(1) ~ p0, pin = x(1), target grad log p(x_t | x0, x1).
/// t is uniform over the table nodes in [eps, 1 - eps].
class BridgeBatchSource {
 public:
  BridgeBatchSource(std::shared_ptr<const BridgeMarginalTable> table, Objective objective, Mat data,
                    InitialDistribution p0, Weighting weighting);

  Objective objective() const noexcept { return objective_; }
  const BridgeMarginalTable& table() const noexcept { return *table_; }
  const Mat& data() const noexcept { return data_; }
  const InitialDistribution& p0() const noexcept { return p0_; }
  Weighting weighting() const noexcept { return weighting_; }
  const std::vector<std::size_t>& nodes() const noexcept { return nodes_; }

  // Output preconditioning g(t): 1/sqrt(tr Sigma / k) for RT,
  // sqrt(|tr F_x| / k) for FT. The Variance weighting is 1/g^2.
  const TimeProfile& scale_profile() const noexcept { return scale_; }
  ScoreBatch draw(std::size_t batch_size, std::uint64_t seed, std::uint64_t index) const;

 private:
  std::shared_ptr<const BridgeMarginalTable> table_;
  Objective objective_;
  Mat data_;
  InitialDistribution p0_;
  Weighting weighting_;
  std::vector<std::size_t> nodes_;
  std::vector<double> node_scale_;
  TimeProfile scale_;
};

struct TrainConfig {
  std::size_t batch_size = 256;
  double learning_rate = 1e-4;
  std::size_t epochs = 20;
  std::size_t steps_per_epoch = 100;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Learning rate decays linearly to this fraction over training.
  double final_lr_fraction = 1.0;

  void validate() const;
};

class Adam {
 public:
  Adam(std::size_t n, double beta1, double beta2, double epsilon);
  void step(Vec& params, const Vec& grad, double lr);

 private:
  double beta1_, beta2_, epsilon_;
  Vec m_, v_;
  std::size_t t_ = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;
  double initial_loss = 0.0;
};

/// Adam on the batch regression; throws TrainingDiverged on a non-finite loss.
TrainResult train(ScoreModel& model, const BridgeBatchSource& source, const TrainConfig& config);

/// Drift of the generative SDE driven by a score:
///   forward: A(t) x + c(t) + kappa(t) s(t, x, pin)          (pin = x(0))
///   reverse: -Abar x + B x1 + varsigma - kappa(t) s(t, x, x1) (pin = x(1))
/// The reverse field is stepped with simulate_reverse.
class ScoreDriftField final : public DriftField {
 public:
  ScoreDriftField(std::shared_ptr<const ScoreFunction> score, std::shared_ptr<const BridgeDrift> bridge,
                  Direction direction);
  std::size_t dim() const override { return bridge_->dim(); }
  Mat diffusion(double t) const override;
  void evaluate(double t, const Mat& states, const Mat& pins, Mat& out) const override;

 private:
  std::shared_ptr<const ScoreFunction> score_;
  std::shared_ptr<const BridgeDrift> bridge_;
  Direction direction_;
};

/// Checkpoint: one JSON header line, then the parameters as little-endian f64.
void save_checkpoint(const ScoreModel& model, const std::string& path);
ScoreModel load_checkpoint(const std::string& path);

}  // namespace stdb
