#pragma once

// Two-stage matching cascade and track lifecycle.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <vector>

#include "nlmot/core.hpp"
#include "nlmot/predictors.hpp"

namespace nlmot {

/// Rows are tracks, columns detections. Gated pairs hold +infinity.
struct CostMatrix {
  Eigen::MatrixXd cost;

  static constexpr double infeasible = std::numeric_limits<double>::infinity();
  bool feasible(Index r, Index c) const { return std::isfinite(cost(r, c)); }
  Index rows() const { return cost.rows(); }
  Index cols() const { return cost.cols(); }
};

struct Assignment {
  std::vector<std::pair<Index, Index>> matches;  // (row, col), sorted by row
  std::vector<Index> unmatched_rows;
  std::vector<Index> unmatched_cols;
};

/// Optional appearance distance in [0, 1] between track `row` and detection
/// `col`.
using AppearanceCost = std::function<double(Index row, Index col)>;

/// cost = lambda (1 - IoU) + (1 - lambda) appearance; pairs with IoU below
/// `gate` are infeasible.
CostMatrix build_cost_matrix(std::span<const BoundingBox> predicted,
                             std::span<const BoundingBox> detections, double gate,
                             const AppearanceCost& appearance = {}, double lambda = 1.0);

/// Minimum-cost assignment that first maximizes the number of feasible
/// matches. Deterministic: among equal-cost optima the scan order prefers
/// lower indices.
Assignment hungarian(const CostMatrix& cost);

/// Sum of matched costs in row order.
double assignment_cost(const CostMatrix& cost, const Assignment& a);

struct TrackerConfig {
  double tau_high = 0.6;
  double tau_low = 0.4;
  double new_track_threshold = 0.7;
  double iou_gate_first = 0.3;
  double iou_gate_second = 0.4;
  /// Frames an unmatched track survives; 0 deletes unmatched tracks at once.
  int max_age = 30;
  /// Weight of the IoU term in the first-stage cost.
  double iou_weight = 1.0;

  void validate() const;
};

enum class TrackStatus { active, lost };

struct Track {
  TrackState state;
  TrackStatus status = TrackStatus::active;
  int frames_since_update = 0;
};

enum class DetectionTier { first, second, discarded };
DetectionTier classify_detection(double confidence, const TrackerConfig& config);

struct TrackRecord {
  int frame = 0;
  std::uint64_t id = 0;
  BoundingBox box;
};

struct FrameResult {
  std::vector<std::pair<std::uint64_t, std::size_t>> matches;  // (track id, detection index)
  std::vector<std::uint64_t> new_tracks;
  std::vector<std::uint64_t> removed_tracks;
  std::vector<TrackRecord> records;
};

/// Frame-by-frame tracker. Owns its tracks; strictly sequential.
class Tracker {
 public:
  Tracker(MotionPredictor& predictor, TrackerConfig config, std::uint64_t seed = 0);

  /// Processes one frame. Every detection must carry `frame`, and frames
  /// must strictly increase across calls.
  FrameResult step(int frame, std::span<const Detection> detections);

  void set_appearance(AppearanceCost appearance) { appearance_ = std::move(appearance); }
  const std::vector<Track>& tracks() const { return tracks_; }

 private:
  MotionPredictor& predictor_;
  TrackerConfig config_;
  std::uint64_t seed_;
  std::uint64_t next_id_ = 1;
  int last_frame_ = 0;
  std::vector<Track> tracks_;
  AppearanceCost appearance_;
};

/// Runs frames 1..frame_count (or up to the last detection frame when
/// frame_count is 0) and returns the records of tracks matched each frame.
std::vector<TrackRecord> run_sequence(const std::map<int, std::vector<Detection>>& detections,
                                      int frame_count, MotionPredictor& predictor,
                                      const TrackerConfig& config, std::uint64_t seed);

}  // namespace nlmot
