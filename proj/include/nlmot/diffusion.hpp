#pragma once

// Decoupled diffusion over per-frame motion.
//
// Forward:  M_t = M_0 + t c + sqrt(t) z,  with c = -M_0 and z ~ N(0, I).
// Reverse:  M_{t-dt} ~ N(mu, dt (t - dt) / t I), where the one-branch mean is
//           (t - dt)/t M_t - dt/t c and the two-branch mean is
//           M_t - dt c - dt/sqrt(t) z.
// With dt = t = 1 the variance vanishes, so one network call turns a noise
// draw into a motion.
//
// All functions here work in diffusion space; sampling converts back to
// normalized motion by dividing by the model's motion scale.

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "nlmot/hminet.hpp"

namespace nlmot {

using Rng = std::mt19937_64;

struct DiffusionTime {
  double t = 1.0;

  /// Throws invalid_input outside [kMinDiffusionTime, 1].
  static DiffusionTime make(double t);
};

struct NoisyMotion {
  Eigen::Vector4d values = Eigen::Vector4d::Zero();
  double t = 1.0;
};

struct ForwardDecomposition {
  Eigen::Vector4d data_term = Eigen::Vector4d::Zero();   // (1 - t) M_0
  Eigen::Vector4d noise_term = Eigen::Vector4d::Zero();  // sqrt(t) z
};

struct ReverseStepParams {
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  double variance = 0.0;  // isotropic: dt (t - dt) / t
};

struct TrainingSample {
  ConditionWindow condition;
  Motion target;  // normalized units
};

inline Eigen::Vector4d attenuation_constant(const Eigen::Vector4d& m0) { return -m0; }

/// Returns the noisy motion and its data/noise split.
std::pair<NoisyMotion, ForwardDecomposition> forward_diffuse(const Eigen::Vector4d& m0,
                                                            DiffusionTime t,
                                                            const Eigen::Vector4d& z);

/// Inverts the forward process for z given c: z = (M_t - (t - 1) c) / sqrt(t).
Eigen::Vector4d derive_noise(const NoisyMotion& mt, const Eigen::Vector4d& c);

/// Mean and variance of the reverse transition. `z_in` selects the two-branch
/// form; without it the one-branch form is used. Throws invalid_input unless
/// 0 < dt <= t.
ReverseStepParams reverse_step_params(const NoisyMotion& mt, double dt,
                                      const Eigen::Vector4d& c_in,
                                      const std::optional<Eigen::Vector4d>& z_in);

/// One reverse transition: mean + sqrt(variance) * noise_draw.
NoisyMotion reverse_step(const NoisyMotion& mt, double dt, const Eigen::Vector4d& c_in,
                         const std::optional<Eigen::Vector4d>& z_in,
                         const Eigen::Vector4d& noise_draw);

Eigen::Vector4d standard_normal4(Rng& rng);

/// Batched sampling, one RNG per window. Returns normalized motions.
std::vector<Motion> sample_one_step(TargetModel& model, std::span<const ConditionWindow> windows,
                                    std::span<Rng> rngs);
std::vector<Motion> sample_k_steps(TargetModel& model, int steps,
                                   std::span<const ConditionWindow> windows, std::span<Rng> rngs,
                                   bool deterministic);

Motion sample_one_step(TargetModel& model, const ConditionWindow& window, Rng& rng);
Motion sample_k_steps(TargetModel& model, int steps, const ConditionWindow& window, Rng& rng,
                      bool deterministic);

double smooth_l1(double d);

/// Mean smooth-L1 over the four components; the two-branch form adds the
/// same term for z (or mean squared error when `z_squared_error`).
double training_loss(const Eigen::Vector4d& c_hat, const Eigen::Vector4d& c);
double training_loss(const Eigen::Vector4d& c_hat, const Eigen::Vector4d& c,
                     const Eigen::Vector4d& z_hat, const Eigen::Vector4d& z,
                     bool z_squared_error = false);

struct TrainConfig {
  int steps = 5000;
  int batch_size = 256;
  double learning_rate = 1e-4;
  /// Cosine decay of the learning rate to 1% of its start over `steps`.
  bool cosine_decay = false;
  bool z_squared_error = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  ModelParameters params;
  std::vector<double> loss_history;
};

/// Minibatch Adam on the diffusion objective. Deterministic for a fixed
/// seed. Throws numeric naming the step if the loss stops being finite.
TrainResult train(std::span<const TrainingSample> dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config, ModelParameters init);

}  // namespace nlmot
