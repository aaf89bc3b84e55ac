#pragma once

// CLEAR MOTA, IDF1 and the one-frame-ahead predictor IoU diagnostic.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlmot/association.hpp"
#include "nlmot/data_io.hpp"
#include "nlmot/predictors.hpp"

namespace nlmot {

struct MotaReport {
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t idsw = 0;
  std::int64_t gt = 0;
  std::int64_t matches = 0;

  /// 1 - (FP + FN + IDSW) / GT; 1 for an empty ground truth with no results.
  double mota() const;
};

struct Idf1Report {
  std::int64_t idtp = 0;
  std::int64_t idfp = 0;
  std::int64_t idfn = 0;

  double idf1() const;
};

/// Boxes of both arguments must share units. Frames are matched by number.
MotaReport mota(const std::vector<MotRecord>& gt, const std::vector<MotRecord>& results,
                double iou_threshold = 0.5);
Idf1Report idf1(const std::vector<MotRecord>& gt, const std::vector<MotRecord>& results,
                double iou_threshold = 0.5);

std::vector<MotRecord> to_mot_records(const std::vector<TrackRecord>& records);

struct DiagConfig {
  /// Predictions for frames 2..burn_in+1 of each trajectory are made but not
  /// scored.
  int burn_in = 0;
  std::uint64_t seed = 0;
};

struct DiagReport {
  std::vector<double> per_sequence;  // mean IoU per sequence
  std::vector<std::size_t> counts;   // scored predictions per sequence
  double mean = 0.0;                 // over every scored prediction
  std::size_t count = 0;
};

/// For each trajectory and frame index i >= 1: the predictor sees the ground
/// truth up to i-1 and predicts i. Trajectories are advanced in lockstep so
/// batched predictors see whole corpora at once. Each trajectory draws from
/// its own stream seeded by (seed, sequence index, trajectory id).
DiagReport predictor_iou_diagnostic(const std::vector<std::vector<Trajectory>>& sequences,
                                    MotionPredictor& predictor, const DiagConfig& config = {});

nlohmann::json to_json(const MotaReport& r);
nlohmann::json to_json(const Idf1Report& r);
nlohmann::json to_json(const DiagReport& r);

/// Aligned plain-text table: a header row then one row per entry.
std::string format_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows);

}  // namespace nlmot
