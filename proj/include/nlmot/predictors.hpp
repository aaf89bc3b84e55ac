#pragma once

// Motion predictors behind one contract: given a track's history, return the
// box expected in the next frame.

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "nlmot/core.hpp"
#include "nlmot/diffusion.hpp"
#include "nlmot/hminet.hpp"

namespace nlmot {

using Vector8d = Eigen::Matrix<double, 8, 1>;
using Matrix8d = Eigen::Matrix<double, 8, 8>;

struct KalmanState {
  Vector8d mean = Vector8d::Zero();  // cx, cy, w, h, then per-frame velocities
  Matrix8d covariance = Matrix8d::Identity();
};

/// Noise scales are fractions of the box extent (SORT/ByteTrack convention).
struct KalmanConfig {
  double std_weight_position = 1.0 / 20.0;
  double std_weight_velocity = 1.0 / 160.0;
};

KalmanState kf_initiate(const BoundingBox& box, const KalmanConfig& config = {});
/// Constant-velocity transition; throws numeric if the covariance stops
/// being positive semi-definite.
std::pair<BoundingBox, KalmanState> kf_predict(const KalmanState& state,
                                               const KalmanConfig& config = {});
/// Throws numeric if the innovation covariance is singular.
KalmanState kf_update(const KalmanState& state, const BoundingBox& measurement,
                      const KalmanConfig& config = {});

struct HistoryEntry {
  int frame = 0;
  BoundingBox box;
  MotionInfo info = MotionInfo::Zero();
};

/// Per-track data visible to predictors.
struct TrackState {
  std::uint64_t id = 0;
  std::deque<HistoryEntry> history;
  std::optional<KalmanState> kalman;
  Rng rng;
  std::size_t capacity = 64;

  /// Appends a box; the motion half of the info row is the delta from the
  /// previous entry (zero for the first). Frames must strictly increase.
  void append(int frame, const BoundingBox& box);
  const BoundingBox& last_box() const { return history.back().box; }
};

/// Seeds the per-track stream from (master seed, track id).
Rng track_rng(std::uint64_t master_seed, std::uint64_t track_id);

/// Last n info rows, most recent first. Short histories repeat their oldest
/// row; a one-entry history therefore conditions on zero motion.
ConditionWindow condition_window(const std::deque<HistoryEntry>& history, int n);

BoundingBox cv_predict(std::span<const BoundingBox> history);

enum class PredictorKind { kalman, constant_velocity, d2mp };
std::string to_string(PredictorKind kind);
PredictorKind parse_predictor_kind(const std::string& s);

class MotionPredictor {
 public:
  virtual ~MotionPredictor() = default;
  virtual PredictorKind kind() const = 0;
  /// Predicts the next box of every track. May advance per-track state.
  virtual std::vector<BoundingBox> predict(std::span<TrackState* const> tracks) = 0;
  /// Called after a new box has been appended to the track's history.
  virtual void observe(TrackState& /*track*/) {}

  BoundingBox predict_one(TrackState& track);
};

class KalmanPredictor final : public MotionPredictor {
 public:
  explicit KalmanPredictor(KalmanConfig config = {}) : config_(config) {}
  PredictorKind kind() const override { return PredictorKind::kalman; }
  std::vector<BoundingBox> predict(std::span<TrackState* const> tracks) override;
  void observe(TrackState& track) override;

 private:
  KalmanConfig config_;
};

class ConstantVelocityPredictor final : public MotionPredictor {
 public:
  PredictorKind kind() const override { return PredictorKind::constant_velocity; }
  std::vector<BoundingBox> predict(std::span<TrackState* const> tracks) override;
};

struct D2mpConfig {
  int sampling_steps = 1;
  bool deterministic = false;
  /// Minimum extent substituted for degenerate predicted widths/heights.
  double min_box_extent = 1e-4;
};

class D2mpPredictor final : public MotionPredictor {
 public:
  D2mpPredictor(std::shared_ptr<TargetModel> model, D2mpConfig config = {});
  PredictorKind kind() const override { return PredictorKind::d2mp; }
  std::vector<BoundingBox> predict(std::span<TrackState* const> tracks) override;

  std::size_t clamped_boxes() const { return clamped_; }

 private:
  std::shared_ptr<TargetModel> model_;
  D2mpConfig config_;
  std::size_t clamped_ = 0;
};

/// Single-track convenience mirroring the batched predictor.
BoundingBox d2mp_predict(TrackState& track, TargetModel& model, const D2mpConfig& config);

}  // namespace nlmot
