#include "nlmot/association.hpp"

#include <algorithm>
#include <cmath>

#include "nlmot/error.hpp"

namespace nlmot {

CostMatrix build_cost_matrix(std::span<const BoundingBox> predicted,
                             std::span<const BoundingBox> detections, double gate,
                             const AppearanceCost& appearance, double lambda) {
  CostMatrix m;
  m.cost.resize(static_cast<Index>(predicted.size()), static_cast<Index>(detections.size()));
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      const double overlap = iou(predicted[r], detections[c]);
      if (overlap < gate || overlap <= 0.0) {
        m.cost(r, c) = CostMatrix::infeasible;
        continue;
      }
      double cost = 1.0 - overlap;
      if (appearance && lambda < 1.0) cost = lambda * cost + (1.0 - lambda) * appearance(r, c);
      m.cost(r, c) = cost;
    }
  }
  return m;
}

namespace {

// Shortest augmenting path Hungarian on a rows <= cols matrix.
// Returns the column assigned to each row.
std::vector<Index> solve_rows_le_cols(const Eigen::MatrixXd& a) {
  const Index n = a.rows();
  const Index m = a.cols();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<Index> p(m + 1, 0), way(m + 1, 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const Index i0 = p[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> row_to_col(n, -1);
  for (Index j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  Assignment out;
  const Index rows = cost.rows();
  const Index cols = cost.cols();
  if (cost.cost.hasNaN() || (cost.cost.array() == -CostMatrix::infeasible).any()) {
    throw Error(ErrorKind::invalid_input, "cost matrix holds NaN or -inf");
  }
  if (rows == 0 || cols == 0) {
    for (Index r = 0; r < rows; ++r) out.unmatched_rows.push_back(r);
    for (Index c = 0; c < cols; ++c) out.unmatched_cols.push_back(c);
    return out;
  }

  // Infeasible pairs get a penalty larger than any feasible total, so the
  // optimum maximizes feasible matches before minimizing cost.
  double total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      if (cost.feasible(r, c)) total += std::abs(cost.cost(r, c));
    }
  }
  const double penalty = 2.0 * total + 1.0;
  Eigen::MatrixXd a = cost.cost.unaryExpr([&](double x) { return std::isfinite(x) ? x : penalty; });

  const bool transposed = rows > cols;
  if (transposed) a.transposeInPlace();
  const std::vector<Index> assigned = solve_rows_le_cols(a);

  std::vector<char> row_used(rows, 0), col_used(cols, 0);
  for (Index i = 0; i < static_cast<Index>(assigned.size()); ++i) {
    if (assigned[i] < 0) continue;
    const Index r = transposed ? assigned[i] : i;
    const Index c = transposed ? i : assigned[i];
    if (!cost.feasible(r, c)) continue;
    out.matches.emplace_back(r, c);
    row_used[r] = 1;
    col_used[c] = 1;
  }
  std::sort(out.matches.begin(), out.matches.end());
  for (Index r = 0; r < rows; ++r) {
    if (!row_used[r]) out.unmatched_rows.push_back(r);
  }
  for (Index c = 0; c < cols; ++c) {
    if (!col_used[c]) out.unmatched_cols.push_back(c);
  }
  return out;
}

double assignment_cost(const CostMatrix& cost, const Assignment& a) {
  double total = 0.0;
  for (const auto& [r, c] : a.matches) total += cost.cost(r, c);
  return total;
}

// ---------------------------------------------------------------------------

void TrackerConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorKind::invalid_config, "tracker." + field + ": " + why);
  };
  if (!(tau_low >= 0.0 && tau_low < tau_high && tau_high <= 1.0)) {
    fail("tau_low", "need 0 <= tau_low < tau_high <= 1");
  }
  if (!(new_track_threshold >= tau_high)) fail("new_track_threshold", "must be >= tau_high");
  if (!(iou_gate_first >= 0.0 && iou_gate_first <= 1.0)) fail("iou_gate_first", "must be in [0, 1]");
  if (!(iou_gate_second >= 0.0 && iou_gate_second <= 1.0)) {
    fail("iou_gate_second", "must be in [0, 1]");
  }
  if (max_age < 0) fail("max_age", "must be >= 0");
  if (!(iou_weight >= 0.0 && iou_weight <= 1.0)) fail("iou_weight", "must be in [0, 1]");
}

DetectionTier classify_detection(double confidence, const TrackerConfig& config) {
  if (confidence > config.tau_high) return DetectionTier::first;
  if (confidence > config.tau_low) return DetectionTier::second;
  return DetectionTier::discarded;
}

Tracker::Tracker(MotionPredictor& predictor, TrackerConfig config, std::uint64_t seed)
    : predictor_(predictor), config_(config), seed_(seed) {
  config_.validate();
}

FrameResult Tracker::step(int frame, std::span<const Detection> detections) {
  if (frame <= last_frame_) {
    throw Error(ErrorKind::invalid_input,
                "frame " + std::to_string(frame) + " already processed or out of order");
  }
  for (const Detection& d : detections) {
    if (d.frame != frame) {
      throw Error(ErrorKind::invalid_input, "detection from frame " + std::to_string(d.frame) +
                                                " passed to frame " + std::to_string(frame));
    }
  }
  last_frame_ = frame;

  std::vector<std::size_t> first, second;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    switch (classify_detection(detections[i].confidence, config_)) {
      case DetectionTier::first: first.push_back(i); break;
      case DetectionTier::second: second.push_back(i); break;
      case DetectionTier::discarded: break;
    }
  }

  std::vector<TrackState*> states;
  states.reserve(tracks_.size());
  for (Track& t : tracks_) states.push_back(&t.state);
  const std::vector<BoundingBox> predicted = predictor_.predict(states);

  FrameResult result;
  std::vector<char> track_matched(tracks_.size(), 0);
  std::vector<char> first_matched(first.size(), 0);

  auto commit = [&](std::size_t track_index, std::size_t det_index) {
    Track& t = tracks_[track_index];
    t.state.append(frame, detections[det_index].box);
    predictor_.observe(t.state);
    t.status = TrackStatus::active;
    t.frames_since_update = 0;
    track_matched[track_index] = 1;
    result.matches.emplace_back(t.state.id, det_index);
    result.records.push_back({frame, t.state.id, detections[det_index].box});
  };

  // Stage 1: all tracks against high-confidence detections.
  {
    std::vector<BoundingBox> dets;
    for (std::size_t i : first) dets.push_back(detections[i].box);
    AppearanceCost appearance;
    if (appearance_) {
      appearance = [&](Index r, Index c) { return appearance_(r, static_cast<Index>(first[c])); };
    }
    const CostMatrix cost = build_cost_matrix(predicted, dets, config_.iou_gate_first, appearance,
                                              config_.iou_weight);
    for (const auto& [r, c] : hungarian(cost).matches) {
      commit(static_cast<std::size_t>(r), first[c]);
      first_matched[c] = 1;
    }
  }

  // Stage 2: remaining tracks against low-confidence detections, IoU only.
  {
    std::vector<std::size_t> remaining;
    std::vector<BoundingBox> boxes;
    for (std::size_t i = 0; i < tracks_.size(); ++i) {
      if (!track_matched[i]) {
        remaining.push_back(i);
        boxes.push_back(predicted[i]);
      }
    }
    std::vector<BoundingBox> dets;
    for (std::size_t i : second) dets.push_back(detections[i].box);
    const CostMatrix cost = build_cost_matrix(boxes, dets, config_.iou_gate_second);
    for (const auto& [r, c] : hungarian(cost).matches) commit(remaining[r], second[c]);
  }

  // Age or delete unmatched tracks.
  std::vector<Track> kept;
  kept.reserve(tracks_.size());
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    Track& t = tracks_[i];
    if (!track_matched[i]) {
      ++t.frames_since_update;
      t.status = TrackStatus::lost;
      if (t.frames_since_update > config_.max_age) {
        result.removed_tracks.push_back(t.state.id);
        continue;
      }
    }
    kept.push_back(std::move(t));
  }
  tracks_ = std::move(kept);

  // Spawn tracks from confident leftovers of stage 1.
  for (std::size_t c = 0; c < first.size(); ++c) {
    const Detection& d = detections[first[c]];
    if (first_matched[c] || !(d.confidence > config_.new_track_threshold)) continue;
    Track t;
    t.state.id = next_id_++;
    t.state.rng = track_rng(seed_, t.state.id);
    t.state.append(frame, d.box);
    predictor_.observe(t.state);
    result.new_tracks.push_back(t.state.id);
    result.records.push_back({frame, t.state.id, d.box});
    tracks_.push_back(std::move(t));
  }
  return result;
}

std::vector<TrackRecord> run_sequence(const std::map<int, std::vector<Detection>>& detections,
                                      int frame_count, MotionPredictor& predictor,
                                      const TrackerConfig& config, std::uint64_t seed) {
  std::vector<TrackRecord> out;
  if (frame_count <= 0) {
    if (detections.empty()) return out;
    frame_count = detections.rbegin()->first;
  }
  Tracker tracker(predictor, config, seed);
  static const std::vector<Detection> none;
  for (int f = 1; f <= frame_count; ++f) {
    auto it = detections.find(f);
    FrameResult r = tracker.step(f, it == detections.end() ? none : it->second);
    std::sort(r.records.begin(), r.records.end(),
              [](const TrackRecord& a, const TrackRecord& b) { return a.id < b.id; });
    out.insert(out.end(), r.records.begin(), r.records.end());
  }
  return out;
}

}  // namespace nlmot
