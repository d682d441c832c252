#include "stdb/score.hpp"

#include "stdb/binary_io.hpp"
#include "stdb/errors.hpp"
#include "stdb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace stdb {

namespace {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  fail(ErrorCode::InvalidArgument, std::string("unknown ") + what + " '" + s + "'");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void activate(Activation a, const Mat& pre, Mat& out) {
  if (a == Activation::Tanh) {
    out = pre.array().tanh().matrix();
  } else {
    out = pre.unaryExpr([](double x) { return x * sigmoid(x); });
  }
}

Mat activation_slope(Activation a, const Mat& pre) {
  if (a == Activation::Tanh) return (1.0 - pre.array().tanh().square()).matrix();
  return pre.unaryExpr([](double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
  });
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "silu"; }
std::string to_string(Objective o) { return o == Objective::FT ? "ft" : "rt"; }
std::string to_string(Weighting w) { return w == Weighting::Unit ? "unit" : "variance"; }

Activation activation_from_string(const std::string& s) {
  return parse_enum<Activation>(s, {{"silu", Activation::SiLU}, {"tanh", Activation::Tanh}}, "activation");
}
Objective objective_from_string(const std::string& s) {
  return parse_enum<Objective>(s, {{"ft", Objective::FT}, {"rt", Objective::RT}}, "objective");
}
Weighting weighting_from_string(const std::string& s) {
  return parse_enum<Weighting>(s, {{"unit", Weighting::Unit}, {"variance", Weighting::Variance}}, "weighting");
}

// ---------------------------------------------------------------------------

Mlp::Mlp(std::vector<std::size_t> sizes, Activation activation) : sizes_(std::move(sizes)), activation_(activation) {
  require(sizes_.size() >= 2, ErrorCode::InvalidArgument, "network needs at least input and output sizes");
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    require(sizes_[l] > 0 && sizes_[l + 1] > 0, ErrorCode::InvalidArgument, "layer sizes must be positive");
    n += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
  params_ = Vec::Zero(static_cast<Eigen::Index>(n));
}

void Mlp::initialize(std::uint64_t seed, double last_scale) {
  std::size_t offset = 0;
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    CounterRng rng(seed, RngDomain::Init, l);
    double scale = 1.0 / std::sqrt(static_cast<double>(in));
    if (l + 1 == layers) scale *= last_scale;
    for (std::size_t i = 0; i < in * out; ++i) params_[static_cast<Eigen::Index>(offset + i)] = scale * rng.normal();
    offset += in * out;
    for (std::size_t i = 0; i < out; ++i) params_[static_cast<Eigen::Index>(offset + i)] = 0.0;
    offset += out;
  }
}

Mat Mlp::forward(const Mat& input) const {
  Tape tape;
  return forward(input, tape);
}

Mat Mlp::forward(const Mat& input, Tape& tape) const {
  require(static_cast<std::size_t>(input.rows()) == input_dim(), ErrorCode::DimensionMismatch,
          "network input has " + std::to_string(input.rows()) + " rows, expected " + std::to_string(input_dim()));
  const std::size_t layers = sizes_.size() - 1;
  tape.inputs.assign(layers, Mat());
  tape.pre.assign(layers - 1, Mat());
  Mat h = input;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]), out = static_cast<Eigen::Index>(sizes_[l + 1]);
    Eigen::Map<const Mat> w(params_.data() + offset, out, in);
    Eigen::Map<const Vec> b(params_.data() + offset + out * in, out);
    offset += static_cast<std::size_t>(out * in + out);
    Mat z = w * h;
    z.colwise() += b;
    tape.inputs[l] = std::move(h);
    if (l + 1 == layers) return z;
    activate(activation_, z, h);
    tape.pre[l] = std::move(z);
  }
  return h;  // unreachable
}

void Mlp::backward(const Tape& tape, const Mat& grad_output, Vec& grad) const {
  if (grad.size() != params_.size()) grad = Vec::Zero(params_.size());
  const std::size_t layers = sizes_.size() - 1;
  std::vector<std::size_t> offsets(layers);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = offset;
    offset += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
  Mat delta = grad_output;
  for (std::size_t l = layers; l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]), out = static_cast<Eigen::Index>(sizes_[l + 1]);
    Eigen::Map<Mat> gw(grad.data() + offsets[l], out, in);
    Eigen::Map<Vec> gb(grad.data() + offsets[l] + out * in, out);
    gw.noalias() += delta * tape.inputs[l].transpose();
    gb += delta.rowwise().sum();
    if (l == 0) break;
    Eigen::Map<const Mat> w(params_.data() + offsets[l], out, in);
    Mat back = w.transpose() * delta;
    delta = back.cwiseProduct(activation_slope(activation_, tape.pre[l - 1]));
  }
}

// ---------------------------------------------------------------------------

double TimeProfile::at(double t) const {
  require(!times.empty() && times.size() == values.size(), ErrorCode::InvalidArgument, "empty time profile");
  if (t <= times.front()) return values.front();
  if (t >= times.back()) return values.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t j = static_cast<std::size_t>(it - times.begin());
  const double w = (t - times[j - 1]) / (times[j] - times[j - 1]);
  return (1.0 - w) * values[j - 1] + w * values[j];
}

ScoreModel::ScoreModel(std::size_t dim, std::vector<std::size_t> hidden, Activation activation, Objective objective)
    : dim_(dim), hidden_(hidden), objective_(objective), net_([&] {
        require(dim > 0, ErrorCode::InvalidArgument, "score dimension must be positive");
        std::vector<std::size_t> sizes{input_dim(dim)};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(dim);
        return sizes;
      }(), activation) {}

void ScoreModel::initialize(std::uint64_t seed) {
  seed_ = seed;
  net_.initialize(seed);
}

Mat ScoreModel::embed(const Vec& t, const Mat& states, const Mat& pins) const {
  const auto k = static_cast<Eigen::Index>(dim_);
  const Eigen::Index n = states.cols();
  require(states.rows() == k && pins.rows() == k && pins.cols() == n && t.size() == n,
          ErrorCode::DimensionMismatch, "score input shapes disagree");
  Mat in(static_cast<Eigen::Index>(input_dim(dim_)), n);
  in.topRows(k) = states;
  in.row(k) = t.transpose();
  for (std::size_t i = 0; i < kTimeFrequencies; ++i) {
    const double freq = std::ldexp(std::numbers::pi, static_cast<int>(i));
    in.row(k + 1 + static_cast<Eigen::Index>(i)) = (freq * t.array()).sin().matrix().transpose();
  }
  in.bottomRows(k) = pins;
  return in;
}

Mat ScoreModel::evaluate(const Vec& t, const Mat& states, const Mat& pins) const {
  Mat out = net_.forward(embed(t, states, pins));
  if (!scale_.empty())
    for (Eigen::Index i = 0; i < out.cols(); ++i) out.col(i) *= scale_.at(t[i]);
  return out;
}

Mat ScoreModel::operator()(double t, const Mat& states, const Mat& pins) const {
  return evaluate(Vec::Constant(states.cols(), t), states, pins);
}

// ---------------------------------------------------------------------------

LossAndGrad loss_and_grad(const ScoreModel& model, const ScoreBatch& batch) {
  const std::size_t n = batch.size();
  require(n > 0, ErrorCode::InvalidArgument, "empty batch");
  Mlp::Tape tape;
  const Mat out = model.net().forward(model.embed(batch.t, batch.x, batch.pin), tape);
  Mat grad_out(out.rows(), out.cols());
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < out.cols(); ++i) {
    const double g = model.scale_at(batch.t[i]);
    const Vec r = g * out.col(i) - batch.target.col(i);
    loss += batch.weight[i] * r.squaredNorm();
    grad_out.col(i) = (2.0 * batch.weight[i] * g * inv_n) * r;
  }
  LossAndGrad result;
  result.loss = loss * inv_n;
  result.grad = Vec::Zero(static_cast<Eigen::Index>(model.net().n_params()));
  model.net().backward(tape, grad_out, result.grad);
  return result;
}

double batch_loss(const ScoreFunction& model, const ScoreBatch& batch) {
  require(batch.size() > 0, ErrorCode::InvalidArgument, "empty batch");
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const Mat s = model(batch.t[c], batch.x.col(c), batch.pin.col(c));
    loss += batch.weight[c] * (s.col(0) - batch.target.col(c)).squaredNorm();
  }
  return loss / static_cast<double>(batch.size());
}

Vec analytic_ft_target(const DriftSchedule& base, const Propagator& prop, double t, const Vec& x_t, const Vec& x1) {
  return doob_score(base, prop, t, x_t, x1);
}

Vec analytic_rt_target(const BridgeSpec& spec, double t, const Vec& x_t) {
  const double eps = spec.grid.epsilon_clip();
  require(t > 0.0 && t < 1.0 - eps + 1e-12, ErrorCode::DomainError,
          "reverse-time target needs t in (0, 1 - eps), got " + std::to_string(t));
  const GaussianMarginal m = bridge_marginal(spec, t);
  require(!m.degenerate, ErrorCode::NotPSD, "bridge marginal is a point mass at t = " + std::to_string(t));
  return gaussian_score(m, x_t);
}

// ---------------------------------------------------------------------------

BridgeBatchSource::BridgeBatchSource(std::shared_ptr<const BridgeMarginalTable> table, Objective objective, Mat data,
                                     InitialDistribution p0, Weighting weighting)
    : table_(std::move(table)),
      objective_(objective),
      data_(std::move(data)),
      p0_(std::move(p0)),
      weighting_(weighting) {
  require(table_ != nullptr, ErrorCode::InvalidArgument, "missing marginal table");
  const auto k = static_cast<Eigen::Index>(table_->dim());
  require(data_.rows() == k && data_.cols() > 0, ErrorCode::DimensionMismatch, "data set does not match bridge dimension");
  require(static_cast<Eigen::Index>(p0_.dim()) == k, ErrorCode::DimensionMismatch, "p0 does not match bridge dimension");
  p0_.validate();
  const TimeGrid& grid = table_->grid();
  const double eps = grid.epsilon_clip();
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double t = grid.time(j);
    if (t < eps - 1e-12 || t > 1.0 - eps + 1e-12) continue;
    if (table_->factor(j).degenerate) continue;
    double g = 1.0;
    if (objective_ == Objective::RT) {
      g = 1.0 / std::sqrt(table_->mean_variance(j));
    } else {
      const double tr = std::abs(table_->ft_map(j).state.trace()) / static_cast<double>(k);
      if (tr > 0.0) g = std::sqrt(tr);
    }
    nodes_.push_back(j);
    node_scale_.push_back(g);
    scale_.times.push_back(t);
    scale_.values.push_back(g);
  }
  require(!nodes_.empty(), ErrorCode::InvalidArgument, "no training nodes in [eps, 1 - eps]");
}

ScoreBatch BridgeBatchSource::draw(std::size_t batch_size, std::uint64_t seed, std::uint64_t index) const {
  require(batch_size > 0, ErrorCode::InvalidArgument, "batch size must be positive");
  const auto k = static_cast<Eigen::Index>(table_->dim());
  const auto n = static_cast<Eigen::Index>(batch_size);
  ScoreBatch batch;
  batch.t.resize(n);
  batch.x.resize(k, n);
  batch.pin.resize(k, n);
  batch.target.resize(k, n);
  batch.weight.resize(n);
  Vec z(k), draw(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    CounterRng rng(seed, RngDomain::Training, index, static_cast<std::uint32_t>(i));
    const std::size_t pick = rng.below(nodes_.size());
    const std::size_t node = nodes_[pick];
    const Vec& data = data_.col(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(data_.cols()))));
    rng.normals(draw.data(), static_cast<std::size_t>(k));
    const Vec initial = p0_.mean + p0_.scale.cwiseProduct(draw);
    rng.normals(z.data(), static_cast<std::size_t>(k));
    batch.t[i] = table_->grid().time(node);
    if (objective_ == Objective::RT) {
      const Vec x = table_->sample(node, data, initial, z);
      batch.x.col(i) = x;
      batch.pin.col(i) = initial;
      batch.target.col(i) = table_->rt_target(node, x, data, initial);
    } else {
      const Vec x = table_->sample(node, initial, data, z);
      batch.x.col(i) = x;
      batch.pin.col(i) = initial;
      batch.target.col(i) = table_->ft_target(node, x, data);
    }
    const double g = node_scale_[pick];
    batch.weight[i] = weighting_ == Weighting::Unit ? 1.0 : 1.0 / (g * g);
  }
  return batch;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  require(batch_size > 0, ErrorCode::InvalidArgument, "batch_size must be positive");
  require(std::isfinite(learning_rate) && learning_rate >= 0.0, ErrorCode::InvalidArgument,
          "learning_rate must be finite and non-negative");
  require(steps_per_epoch > 0, ErrorCode::InvalidArgument, "steps_per_epoch must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::InvalidArgument,
          "Adam betas must lie in [0, 1)");
  require(adam_epsilon > 0.0, ErrorCode::InvalidArgument, "adam_epsilon must be positive");
  require(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0, ErrorCode::InvalidArgument,
          "final_lr_fraction must lie in [0, 1]");
}

Adam::Adam(std::size_t n, double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon),
      m_(Vec::Zero(static_cast<Eigen::Index>(n))), v_(Vec::Zero(static_cast<Eigen::Index>(n))) {}

void Adam::step(Vec& params, const Vec& grad, double lr) {
  require(grad.size() == params.size() && grad.size() == m_.size(), ErrorCode::DimensionMismatch,
          "Adam state does not match parameter count");
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  if (lr == 0.0) return;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + epsilon_);
}

TrainResult train(ScoreModel& model, const BridgeBatchSource& source, const TrainConfig& config) {
  config.validate();
  require(model.dim() == source.table().dim(), ErrorCode::DimensionMismatch, "model and data dimension differ");
  require(model.objective() == source.objective(), ErrorCode::InvalidArgument,
          "model objective " + to_string(model.objective()) + " does not match batch source");
  model.set_output_scale(source.scale_profile());
  Adam adam(model.net().n_params(), config.beta1, config.beta2, config.adam_epsilon);
  TrainResult result;
  const std::size_t total = config.epochs * config.steps_per_epoch;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double sum = 0.0;
    for (std::size_t s = 0; s < config.steps_per_epoch; ++s, ++step) {
      const ScoreBatch batch = source.draw(config.batch_size, config.seed, step);
      const LossAndGrad lg = loss_and_grad(model, batch);
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
        fail(ErrorCode::TrainingDiverged,
             "loss became non-finite at epoch " + std::to_string(epoch) + ", step " + std::to_string(s));
      if (step == 0) result.initial_loss = lg.loss;
      const double progress = total > 1 ? static_cast<double>(step) / static_cast<double>(total - 1) : 0.0;
      const double lr = config.learning_rate * (1.0 - (1.0 - config.final_lr_fraction) * progress);
      adam.step(model.net().params(), lg.grad, lr);
      sum += lg.loss;
    }
    result.epoch_loss.push_back(sum / static_cast<double>(config.steps_per_epoch));
  }
  if (!model.net().params().allFinite()) fail(ErrorCode::TrainingDiverged, "parameters became non-finite");
  return result;
}

// ---------------------------------------------------------------------------

ScoreDriftField::ScoreDriftField(std::shared_ptr<const ScoreFunction> score, std::shared_ptr<const BridgeDrift> bridge,
                                 Direction direction)
    : score_(std::move(score)), bridge_(std::move(bridge)), direction_(direction) {
  require(score_ && bridge_, ErrorCode::InvalidArgument, "score drift needs a score and a bridge");
  require(score_->dim() == bridge_->dim(), ErrorCode::DimensionMismatch, "score and bridge dimension differ");
}

Mat ScoreDriftField::diffusion(double t) const { return bridge_->at(t).diffusion; }

void ScoreDriftField::evaluate(double t, const Mat& states, const Mat& pins, Mat& out) const {
  const BridgeCoefficients c = bridge_->at(t);
  if (direction_ == Direction::Forward) {
    out = bridge_->base_drift(t) * states;
    out.colwise() += bridge_->base_offset(t);
  } else {
    out = -c.restoring * states + c.pin_gain * pins;
    out.colwise() += c.offset;
  }
  if (c.diffusion.isZero(0.0)) return;
  const Mat kappa_s = c.diffusion * (*score_)(t, states, pins);
  if (direction_ == Direction::Forward)
    out += kappa_s;
  else
    out -= kappa_s;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const ScoreModel& model, const std::string& path) {
  nlohmann::json header{
      {"format", "stdb-score-1"},
      {"dim", model.dim()},
      {"pin_dim", model.dim()},
      {"hidden", model.hidden()},
      {"layer_sizes", model.net().sizes()},
      {"activation", to_string(model.net().activation())},
      {"objective", to_string(model.objective())},
      {"seed", model.seed()},
      {"n_params", model.net().n_params()},
      {"scale_times", model.output_scale().times},
      {"scale_values", model.output_scale().values},
      {"metadata", model.metadata.is_null() ? nlohmann::json::object() : model.metadata},
  };
  BinaryWriter out(path);
  const std::string line = header.dump() + "\n";
  out.bytes(line.data(), line.size());
  for (Eigen::Index i = 0; i < model.net().params().size(); ++i) out.f64(model.net().params()[i]);
}

ScoreModel load_checkpoint(const std::string& path) {
  BinaryReader in(path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.line());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, "checkpoint '" + path + "' has a malformed header: " + e.what());
  }
  require(header.value("format", "") == "stdb-score-1", ErrorCode::Io, "'" + path + "' is not a score checkpoint");
  try {
    ScoreModel model(header.at("dim").get<std::size_t>(), header.at("hidden").get<std::vector<std::size_t>>(),
                     activation_from_string(header.at("activation").get<std::string>()),
                     objective_from_string(header.at("objective").get<std::string>()));
    require(header.at("n_params").get<std::size_t>() == model.net().n_params(), ErrorCode::Io,
            "checkpoint parameter count does not match its layer sizes");
    TimeProfile scale{header.at("scale_times").get<std::vector<double>>(),
                      header.at("scale_values").get<std::vector<double>>()};
    require(scale.times.size() == scale.values.size(), ErrorCode::Io, "checkpoint scale profile is inconsistent");
    model.set_output_scale(std::move(scale));
    model.initialize(header.at("seed").get<std::uint64_t>());
    for (Eigen::Index i = 0; i < model.net().params().size(); ++i) model.net().params()[i] = in.f64();
    model.metadata = header.at("metadata");
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, "checkpoint '" + path + "' header: " + e.what());
  }
}

}  // namespace stdb
