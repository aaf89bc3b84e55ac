#include "nlmot/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "nlmot/error.hpp"

namespace nlmot {

DiffusionTime DiffusionTime::make(double t) {
  if (!(t >= kMinDiffusionTime && t <= 1.0)) {
    throw Error(ErrorKind::invalid_input,
                "diffusion time " + std::to_string(t) + " outside [0.001, 1]");
  }
  return DiffusionTime{t};
}

std::pair<NoisyMotion, ForwardDecomposition> forward_diffuse(const Eigen::Vector4d& m0,
                                                            DiffusionTime t,
                                                            const Eigen::Vector4d& z) {
  DiffusionTime::make(t.t);
  if (!z.allFinite()) throw Error(ErrorKind::invalid_input, "noise draw is not finite");
  ForwardDecomposition parts;
  parts.data_term = m0 + t.t * attenuation_constant(m0);
  parts.noise_term = std::sqrt(t.t) * z;
  NoisyMotion mt{parts.data_term + parts.noise_term, t.t};
  return {mt, parts};
}

Eigen::Vector4d derive_noise(const NoisyMotion& mt, const Eigen::Vector4d& c) {
  return (mt.values - (mt.t - 1.0) * c) / std::sqrt(mt.t);
}

ReverseStepParams reverse_step_params(const NoisyMotion& mt, double dt,
                                      const Eigen::Vector4d& c_in,
                                      const std::optional<Eigen::Vector4d>& z_in) {
  const double t = mt.t;
  if (!(dt > 0.0) || dt > t) {
    throw Error(ErrorKind::invalid_input, "reverse step needs 0 < dt <= t");
  }
  ReverseStepParams p;
  if (z_in) {
    p.mean = mt.values - dt * c_in - (dt / std::sqrt(t)) * *z_in;
  } else {
    p.mean = ((t - dt) / t) * mt.values - (dt / t) * c_in;
  }
  p.variance = dt * (t - dt) / t;
  return p;
}

NoisyMotion reverse_step(const NoisyMotion& mt, double dt, const Eigen::Vector4d& c_in,
                         const std::optional<Eigen::Vector4d>& z_in,
                         const Eigen::Vector4d& noise_draw) {
  const ReverseStepParams p = reverse_step_params(mt, dt, c_in, z_in);
  NoisyMotion out{p.mean, mt.t - dt};
  if (p.variance > 0.0) out.values += std::sqrt(p.variance) * noise_draw;
  return out;
}

Eigen::Vector4d standard_normal4(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector4d z;
  for (int i = 0; i < 4; ++i) z[i] = normal(rng);
  return z;
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<Motion> sample_k_steps(TargetModel& model, int steps,
                                   std::span<const ConditionWindow> windows, std::span<Rng> rngs,
                                   bool deterministic) {
  if (steps < 1) throw Error(ErrorKind::invalid_input, "sampling needs at least one step");
  if (rngs.size() != windows.size()) {
    throw Error(ErrorKind::invalid_input, "one RNG per condition window is required");
  }
  const Index batch = static_cast<Index>(windows.size());
  Eigen::MatrixX4d state(batch, 4);
  for (Index b = 0; b < batch; ++b) state.row(b) = standard_normal4(rngs[b]).transpose();

  for (int k = 0; k < steps; ++k) {
    const double t = static_cast<double>(steps - k) / steps;
    const double t_next = static_cast<double>(steps - k - 1) / steps;
    const double dt = t - t_next;
    const Eigen::VectorXd query_t = Eigen::VectorXd::Constant(batch, std::max(t, kMinDiffusionTime));
    const TargetBatch target = model.predict(windows, state, query_t);
    for (Index b = 0; b < batch; ++b) {
      std::optional<Eigen::Vector4d> z_in;
      if (model.variant() == BranchVariant::two_branch && target.z_hat) {
        z_in = target.z_hat->row(b).transpose();
      }
      Eigen::Vector4d draw = Eigen::Vector4d::Zero();
      if (!deterministic && k + 1 < steps) draw = standard_normal4(rngs[b]);
      const NoisyMotion mt{state.row(b).transpose(), t};
      state.row(b) = reverse_step(mt, dt, target.c_hat.row(b).transpose(), z_in, draw)
                         .values.transpose();
    }
  }

  std::vector<Motion> out;
  out.reserve(batch);
  const double inv_scale = 1.0 / model.motion_scale();
  for (Index b = 0; b < batch; ++b) out.emplace_back(Eigen::Vector4d(state.row(b).transpose() * inv_scale));
  return out;
}

std::vector<Motion> sample_one_step(TargetModel& model, std::span<const ConditionWindow> windows,
                                    std::span<Rng> rngs) {
  return sample_k_steps(model, 1, windows, rngs, true);
}

Motion sample_one_step(TargetModel& model, const ConditionWindow& window, Rng& rng) {
  return sample_one_step(model, std::span(&window, 1), std::span(&rng, 1)).front();
}

Motion sample_k_steps(TargetModel& model, int steps, const ConditionWindow& window, Rng& rng,
                      bool deterministic) {
  return sample_k_steps(model, steps, std::span(&window, 1), std::span(&rng, 1), deterministic)
      .front();
}

// ---------------------------------------------------------------------------
// Loss

double smooth_l1(double d) {
  const double ad = std::abs(d);
  return ad < 1.0 ? 0.5 * d * d : ad - 0.5;
}

double training_loss(const Eigen::Vector4d& c_hat, const Eigen::Vector4d& c) {
  return (c_hat - c).unaryExpr([](double d) { return smooth_l1(d); }).mean();
}

double training_loss(const Eigen::Vector4d& c_hat, const Eigen::Vector4d& c,
                     const Eigen::Vector4d& z_hat, const Eigen::Vector4d& z,
                     bool z_squared_error) {
  const double lz = z_squared_error ? (z_hat - z).squaredNorm() / 4.0 : training_loss(z_hat, z);
  return training_loss(c_hat, c) + lz;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorKind::invalid_config, "train." + field + ": " + why);
  };
  if (steps < 1) fail("steps", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
}

TrainResult train(std::span<const TrainingSample> dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config, ModelParameters init) {
  model_config.validate();
  train_config.validate();
  if (dataset.empty()) throw Error(ErrorKind::invalid_input, "training set is empty");

  const Index batch = train_config.batch_size;
  const Index n = model_config.history_length;
  const double scale = model_config.motion_scale;
  const bool two_branch = model_config.variant == BranchVariant::two_branch;

  HmiNetGraph net(model_config, batch);
  net.attach_loss(train_config.z_squared_error);

  Rng rng(train_config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_real_distribution<double> uniform_t(kMinDiffusionTime, 1.0);

  TrainResult result;
  result.params = std::move(init);
  result.loss_history.reserve(train_config.steps);
  AdamState adam;

  TensorMap inputs;
  inputs["condition"] = Tensor(batch * n, 8);
  inputs["noisy_motion"] = Tensor(batch, 4);
  inputs["target"] = Tensor(batch, two_branch ? 8 : 4);
  Eigen::VectorXd times(batch);

  for (int step = 0; step < train_config.steps; ++step) {
    Tensor& condition = inputs["condition"];
    Tensor& noisy = inputs["noisy_motion"];
    Tensor& target = inputs["target"];
    for (Index b = 0; b < batch; ++b) {
      const TrainingSample& s = dataset[pick(rng)];
      if (s.condition.length() != n) {
        throw Error(ErrorKind::invalid_input, "training sample window length differs from config");
      }
      condition.middleRows(b * n, n) = condition_input_rows(s.condition, model_config);
      const Eigen::Vector4d m0 = scale * s.target.delta;
      const double t = uniform_t(rng);
      const Eigen::Vector4d z = standard_normal4(rng);
      const auto [mt, parts] = forward_diffuse(m0, DiffusionTime{t}, z);
      noisy.row(b) = mt.values.transpose();
      target.row(b).head<4>() = attenuation_constant(m0).transpose();
      if (two_branch) target.row(b).tail<4>() = z.transpose();
      times[b] = t;
    }
    inputs["time"] = time_embedding(times, model_config.token_dim);

    double loss = 0.0;
    try {
      net.forward(result.params, inputs);
      loss = net.graph().value(net.loss())(0, 0);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      throw Error(ErrorKind::numeric, "training diverged at step " + std::to_string(step) + ": " +
                                          e.what());
    }
    result.loss_history.push_back(loss);
    net.graph().backward(net.loss());

    double lr = train_config.learning_rate;
    if (train_config.cosine_decay) {
      const double progress = static_cast<double>(step) / train_config.steps;
      lr *= 0.01 + 0.99 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    adam_step(result.params, net.parameter_gradients(), adam, lr);
  }
  return result;
}

}  // namespace nlmot
