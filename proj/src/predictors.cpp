#include "nlmot/predictors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>

#include "nlmot/error.hpp"

namespace nlmot {

namespace {

Matrix8d transition() {
  Matrix8d f = Matrix8d::Identity();
  f.topRightCorner<4, 4>().setIdentity();
  return f;
}

Eigen::Vector4d extent_scaled(const Vector8d& mean, double weight) {
  const double w = mean[2];
  const double h = mean[3];
  return Eigen::Vector4d(weight * w, weight * h, weight * w, weight * h);
}

void check_covariance(const Matrix8d& p) {
  if (!p.allFinite() || (p.diagonal().array() < 0.0).any()) {
    throw Error(ErrorKind::numeric, "Kalman covariance is not positive semi-definite");
  }
}

BoundingBox box_from_state(const Vector8d& mean, double min_extent = 1e-6) {
  return BoundingBox(mean[0], mean[1], std::max(mean[2], min_extent),
                     std::max(mean[3], min_extent));
}

}  // namespace

KalmanState kf_initiate(const BoundingBox& box, const KalmanConfig& config) {
  KalmanState s;
  s.mean.head<4>() = box.vector();
  s.mean.tail<4>().setZero();
  Vector8d std_dev;
  std_dev << 2.0 * extent_scaled(s.mean, config.std_weight_position),
      10.0 * extent_scaled(s.mean, config.std_weight_velocity);
  s.covariance = std_dev.array().square().matrix().asDiagonal();
  return s;
}

std::pair<BoundingBox, KalmanState> kf_predict(const KalmanState& state,
                                               const KalmanConfig& config) {
  Vector8d std_dev;
  std_dev << extent_scaled(state.mean, config.std_weight_position),
      extent_scaled(state.mean, config.std_weight_velocity);
  const Matrix8d q = std_dev.array().square().matrix().asDiagonal();
  const Matrix8d f = transition();
  KalmanState next;
  next.mean = f * state.mean;
  next.covariance = f * state.covariance * f.transpose() + q;
  next.covariance = 0.5 * (next.covariance + next.covariance.transpose());
  check_covariance(next.covariance);
  return {box_from_state(next.mean), next};
}

KalmanState kf_update(const KalmanState& state, const BoundingBox& measurement,
                      const KalmanConfig& config) {
  const Eigen::Vector4d std_dev = extent_scaled(state.mean, config.std_weight_position);
  const Eigen::Matrix4d r = std_dev.array().square().matrix().asDiagonal();
  const Eigen::Matrix4d s = state.covariance.topLeftCorner<4, 4>() + r;
  const Eigen::LLT<Eigen::Matrix4d> llt(s);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::numeric, "Kalman innovation covariance is singular");
  }
  // K = P H^T S^-1, with H selecting the first four state components.
  const Eigen::Matrix<double, 8, 4> pht = state.covariance.leftCols<4>();
  const Eigen::Matrix<double, 8, 4> gain = llt.solve(pht.transpose()).transpose();
  KalmanState next;
  next.mean = state.mean + gain * (measurement.vector() - state.mean.head<4>());
  next.covariance = state.covariance - gain * s * gain.transpose();
  next.covariance = 0.5 * (next.covariance + next.covariance.transpose());
  check_covariance(next.covariance);
  return next;
}

// ---------------------------------------------------------------------------

void TrackState::append(int frame, const BoundingBox& box) {
  HistoryEntry e;
  e.frame = frame;
  e.box = box;
  Motion m;
  if (!history.empty()) {
    if (frame <= history.back().frame) {
      throw Error(ErrorKind::invalid_input, "track history frames must strictly increase");
    }
    m = motion_from_boxes(history.back().box, box);
  }
  e.info = make_motion_info(box, m);
  history.push_back(e);
  while (history.size() > std::max<std::size_t>(capacity, 2)) history.pop_front();
}

Rng track_rng(std::uint64_t master_seed, std::uint64_t track_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                    static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(track_id),
                    static_cast<std::uint32_t>(track_id >> 32)};
  return Rng(seq);
}

ConditionWindow condition_window(const std::deque<HistoryEntry>& history, int n) {
  if (history.empty()) {
    throw Error(ErrorKind::invalid_input, "cannot condition on an empty history");
  }
  ConditionWindow w;
  w.rows.resize(n, 8);
  const int available = static_cast<int>(history.size());
  for (int i = 0; i < n; ++i) {
    const int back = std::min(i, available - 1);
    w.rows.row(i) = history[available - 1 - back].info.transpose();
  }
  return w;
}

BoundingBox cv_predict(std::span<const BoundingBox> history) {
  if (history.empty()) throw Error(ErrorKind::invalid_input, "cv_predict needs a box");
  if (history.size() == 1) return history.back();
  const BoundingBox& last = history[history.size() - 1];
  const BoundingBox& prev = history[history.size() - 2];
  return apply_motion(last, motion_from_boxes(prev, last));
}

std::string to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::kalman: return "kf";
    case PredictorKind::constant_velocity: return "cv";
    case PredictorKind::d2mp: return "d2mp";
  }
  return "?";
}

PredictorKind parse_predictor_kind(const std::string& s) {
  if (s == "kf") return PredictorKind::kalman;
  if (s == "cv") return PredictorKind::constant_velocity;
  if (s == "d2mp") return PredictorKind::d2mp;
  throw Error(ErrorKind::invalid_config, "predictor must be one of d2mp, kf, cv; got '" + s + "'");
}

BoundingBox MotionPredictor::predict_one(TrackState& track) {
  TrackState* ptr = &track;
  return predict(std::span(&ptr, 1)).front();
}

// ---------------------------------------------------------------------------

std::vector<BoundingBox> KalmanPredictor::predict(std::span<TrackState* const> tracks) {
  std::vector<BoundingBox> out;
  out.reserve(tracks.size());
  for (TrackState* t : tracks) {
    if (t->history.empty()) throw Error(ErrorKind::invalid_input, "track has no history");
    if (!t->kalman) t->kalman = kf_initiate(t->last_box(), config_);
    auto [box, next] = kf_predict(*t->kalman, config_);
    t->kalman = next;
    out.push_back(BoundingBox(box.cx(), box.cy(), box.w(), box.h(), t->last_box().units()));
  }
  return out;
}

void KalmanPredictor::observe(TrackState& track) {
  if (!track.kalman) {
    track.kalman = kf_initiate(track.last_box(), config_);
  } else {
    track.kalman = kf_update(*track.kalman, track.last_box(), config_);
  }
}

std::vector<BoundingBox> ConstantVelocityPredictor::predict(std::span<TrackState* const> tracks) {
  std::vector<BoundingBox> out;
  out.reserve(tracks.size());
  for (TrackState* t : tracks) {
    if (t->history.empty()) throw Error(ErrorKind::invalid_input, "track has no history");
    const std::size_t k = t->history.size();
    if (k == 1) {
      out.push_back(t->last_box());
      continue;
    }
    const BoundingBox pair[2] = {t->history[k - 2].box, t->history[k - 1].box};
    try {
      out.push_back(cv_predict(pair));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate_box) throw;
      out.push_back(t->last_box());
    }
  }
  return out;
}

D2mpPredictor::D2mpPredictor(std::shared_ptr<TargetModel> model, D2mpConfig config)
    : model_(std::move(model)), config_(config) {
  if (!model_) throw Error(ErrorKind::invalid_config, "d2mp predictor needs a model");
  if (config_.sampling_steps < 1) {
    throw Error(ErrorKind::invalid_config, "predictor.sampling_steps must be >= 1");
  }
}

std::vector<BoundingBox> D2mpPredictor::predict(std::span<TrackState* const> tracks) {
  const int n = model_->history_length();
  std::vector<ConditionWindow> windows;
  std::vector<Rng> rngs;
  windows.reserve(tracks.size());
  rngs.reserve(tracks.size());
  for (TrackState* t : tracks) {
    windows.push_back(condition_window(t->history, n));
    rngs.push_back(t->rng);
  }
  const std::vector<Motion> motions =
      config_.sampling_steps == 1
          ? sample_one_step(*model_, windows, rngs)
          : sample_k_steps(*model_, config_.sampling_steps, windows, rngs, config_.deterministic);

  std::vector<BoundingBox> out;
  out.reserve(tracks.size());
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    tracks[i]->rng = rngs[i];
    const BoundingBox& last = tracks[i]->last_box();
    Eigen::Vector4d v = last.vector() + motions[i].delta;
    if (v[2] <= config_.min_box_extent || v[3] <= config_.min_box_extent) {
      ++clamped_;
      v[2] = std::max(v[2], config_.min_box_extent);
      v[3] = std::max(v[3], config_.min_box_extent);
    }
    out.push_back(BoundingBox::from_vector(v, last.units()));
  }
  return out;
}

BoundingBox d2mp_predict(TrackState& track, TargetModel& model, const D2mpConfig& config) {
  // Non-owning alias; the predictor does not outlive this call.
  D2mpPredictor predictor(std::shared_ptr<TargetModel>(&model, [](TargetModel*) {}), config);
  return predictor.predict_one(track);
}

}  // namespace nlmot
