#include "nlmot/data_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "nlmot/error.hpp"
#include "nlmot/predictors.hpp"

namespace nlmot {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Sequence metadata

void SequenceMeta::validate() const {
  if (frame_count < 1) throw Error(ErrorKind::invalid_config, "meta.frame_count must be positive");
  if (width < 1) throw Error(ErrorKind::invalid_config, "meta.width must be positive");
  if (height < 1) throw Error(ErrorKind::invalid_config, "meta.height must be positive");
  if (!(frame_rate > 0.0)) throw Error(ErrorKind::invalid_config, "meta.frame_rate must be positive");
}

json to_json(const SequenceMeta& meta) {
  return json{{"frame_count", meta.frame_count},
              {"width", meta.width},
              {"height", meta.height},
              {"frame_rate", meta.frame_rate}};
}

SequenceMeta sequence_meta_from_json(const json& j) {
  SequenceMeta m;
  try {
    m.frame_count = j.at("frame_count").get<int>();
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.frame_rate = j.value("frame_rate", 30.0);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("sequence metadata: ") + e.what());
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// MOT text

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view field, std::size_t line_no) {
  field = trim(field);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value)) {
    throw Error(ErrorKind::format, "line " + std::to_string(line_no) + ": bad number '" +
                                       std::string(field) + "'");
  }
  return value;
}

std::string format_fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

BoundingBox to_pixels(const BoundingBox& b, const SequenceMeta& meta) {
  return b.units() == Units::pixel ? b
                                   : denormalize_box(b, static_cast<double>(meta.width),
                                                     static_cast<double>(meta.height));
}

std::string write_lines(const std::vector<MotRecord>& records, const SequenceMeta& meta,
                        bool detections) {
  std::string out;
  for (const MotRecord& r : records) {
    const Tlwh t = center_to_tlwh(to_pixels(r.box, meta));
    out += std::to_string(r.frame);
    out += ',';
    out += detections ? std::string("-1") : std::to_string(r.id);
    for (double v : {t.left, t.top, t.w, t.h}) {
      out += ',';
      out += format_fixed2(v);
    }
    out += ',';
    out += detections ? format_fixed2(r.confidence) : std::string("1.00");
    out += ",-1,-1,-1\n";
  }
  return out;
}

}  // namespace

MotParseResult parse_mot(std::istream& in, const SequenceMeta& meta, bool normalized) {
  MotParseResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = text.find(',', start);
      fields.push_back(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() < 6) {
      throw Error(ErrorKind::format, "line " + std::to_string(line_no) + ": expected at least 6 fields");
    }
    const double frame = parse_number(fields[0], line_no);
    const double id = parse_number(fields[1], line_no);
    if (frame < 1 || frame != std::floor(frame) || id != std::floor(id)) {
      throw Error(ErrorKind::format, "line " + std::to_string(line_no) + ": frame/id must be integers, frame >= 1");
    }
    const Tlwh t{parse_number(fields[2], line_no), parse_number(fields[3], line_no),
                 parse_number(fields[4], line_no), parse_number(fields[5], line_no)};
    const double conf = fields.size() > 6 ? parse_number(fields[6], line_no) : 1.0;
    if (!(t.w > 0.0) || !(t.h > 0.0)) {
      ++result.skipped;
      continue;
    }
    MotRecord r;
    r.frame = static_cast<int>(frame);
    r.id = static_cast<std::int64_t>(id);
    r.confidence = conf;
    r.box = tlwh_to_center(t, Units::pixel);
    if (normalized) {
      const BoundingBox n = normalize_box(r.box, static_cast<double>(meta.width),
                                          static_cast<double>(meta.height));
      r.box = BoundingBox(std::clamp(n.cx(), 0.0, 1.0), std::clamp(n.cy(), 0.0, 1.0), n.w(), n.h(),
                          Units::normalized);
    }
    result.records.push_back(r);
  }
  std::stable_sort(result.records.begin(), result.records.end(),
                   [](const MotRecord& a, const MotRecord& b) { return a.frame < b.frame; });
  return result;
}

MotParseResult parse_mot(const std::string& text, const SequenceMeta& meta, bool normalized) {
  std::istringstream in(text);
  return parse_mot(in, meta, normalized);
}

std::string write_mot(const std::vector<MotRecord>& records, const SequenceMeta& meta) {
  return write_lines(records, meta, false);
}

std::string write_detections(const std::vector<MotRecord>& records, const SequenceMeta& meta) {
  return write_lines(records, meta, true);
}

std::vector<Trajectory> group_trajectories(const std::vector<MotRecord>& records) {
  std::map<std::int64_t, std::vector<const MotRecord*>> by_id;
  for (const MotRecord& r : records) by_id[r.id].push_back(&r);
  std::vector<Trajectory> out;
  for (auto& [id, rs] : by_id) {
    std::stable_sort(rs.begin(), rs.end(),
                     [](const MotRecord* a, const MotRecord* b) { return a->frame < b->frame; });
    Trajectory t;
    t.id = id;
    for (const MotRecord* r : rs) {
      if (!t.frames.empty() && t.frames.back() == r->frame) {
        throw Error(ErrorKind::format, "id " + std::to_string(id) + " appears twice in frame " +
                                           std::to_string(r->frame));
      }
      t.frames.push_back(r->frame);
      t.boxes.push_back(r->box);
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::map<int, std::vector<Detection>> group_detections(const std::vector<MotRecord>& records) {
  std::map<int, std::vector<Detection>> out;
  for (const MotRecord& r : records) out[r.frame].push_back(Detection{r.frame, r.box, r.confidence});
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

std::string to_string(MotionProgram p) {
  switch (p) {
    case MotionProgram::linear: return "linear";
    case MotionProgram::sinusoidal: return "sinusoidal";
    case MotionProgram::circular: return "circular";
    case MotionProgram::accelerate: return "accelerate";
    case MotionProgram::direction_flip: return "direction_flip";
  }
  return "?";
}

MotionProgram parse_motion_program(const std::string& s) {
  for (MotionProgram p : {MotionProgram::linear, MotionProgram::sinusoidal, MotionProgram::circular,
                          MotionProgram::accelerate, MotionProgram::direction_flip}) {
    if (to_string(p) == s) return p;
  }
  throw Error(ErrorKind::invalid_config, "spec.programs: unknown motion program '" + s + "'");
}

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorKind::invalid_config, "spec." + field + ": " + why);
  };
  auto prob = [&](double p, const std::string& field) {
    if (!(p >= 0.0 && p <= 1.0)) fail(field, "must be in [0, 1]");
  };
  if (objects < 1) fail("objects", "must be >= 1");
  if (frame_count < 1) fail("frame_count", "must be >= 1");
  if (width < 1) fail("width", "must be >= 1");
  if (height < 1) fail("height", "must be >= 1");
  if (!(frame_rate > 0.0)) fail("frame_rate", "must be positive");
  if (programs.empty()) fail("programs", "must list at least one program");
  if (!(speed >= 0.0)) fail("speed", "must be >= 0");
  if (!(amplitude >= 0.0)) fail("amplitude", "must be >= 0");
  if (!(period > 0.0)) fail("period", "must be positive");
  if (!(param_jitter >= 0.0 && param_jitter < 1.0)) fail("param_jitter", "must be in [0, 1)");
  if (!(box_width_min > 0.0 && box_width_min <= box_width_max)) fail("box_width_min", "need 0 < min <= max");
  if (!(box_height_min > 0.0 && box_height_min <= box_height_max)) {
    fail("box_height_min", "need 0 < min <= max");
  }
  if (box_width_max >= width) fail("box_width_max", "must be smaller than the image width");
  const double band = lanes ? static_cast<double>(height) / objects : height;
  if (box_height_max >= band) fail("box_height_max", "must fit inside the object's band");
  if (!(noise.jitter >= 0.0)) fail("noise.jitter", "must be >= 0");
  prob(noise.drop_probability, "noise.drop_probability");
  if (!(noise.false_positive_rate >= 0.0)) fail("noise.false_positive_rate", "must be >= 0");
  prob(noise.confidence_min, "noise.confidence_min");
  prob(noise.confidence_max, "noise.confidence_max");
  prob(noise.fp_confidence_min, "noise.fp_confidence_min");
  prob(noise.fp_confidence_max, "noise.fp_confidence_max");
  if (noise.confidence_min > noise.confidence_max) fail("noise.confidence_min", "must be <= confidence_max");
  if (noise.fp_confidence_min > noise.fp_confidence_max) {
    fail("noise.fp_confidence_min", "must be <= fp_confidence_max");
  }
}

json to_json(const SyntheticSpec& s) {
  json programs = json::array();
  for (MotionProgram p : s.programs) programs.push_back(to_string(p));
  return json{
      {"objects", s.objects},
      {"frame_count", s.frame_count},
      {"width", s.width},
      {"height", s.height},
      {"frame_rate", s.frame_rate},
      {"programs", programs},
      {"layout", s.lanes ? "lanes" : "free"},
      {"speed", s.speed},
      {"amplitude", s.amplitude},
      {"period", s.period},
      {"param_jitter", s.param_jitter},
      {"box_width", {s.box_width_min, s.box_width_max}},
      {"box_height", {s.box_height_min, s.box_height_max}},
      {"noise",
       {{"jitter", s.noise.jitter},
        {"drop_probability", s.noise.drop_probability},
        {"false_positive_rate", s.noise.false_positive_rate},
        {"confidence", {s.noise.confidence_min, s.noise.confidence_max}},
        {"fp_confidence", {s.noise.fp_confidence_min, s.noise.fp_confidence_max}}}},
  };
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  static const std::vector<std::string> known = {
      "objects", "frame_count", "width", "height", "frame_rate", "programs", "layout", "speed",
      "amplitude", "period", "param_jitter", "box_width", "box_height", "noise"};
  std::string field;
  try {
    if (!j.is_object()) throw Error(ErrorKind::invalid_config, "spec: expected a JSON object");
    for (const auto& [k, v] : j.items()) {
      if (std::find(known.begin(), known.end(), k) == known.end()) {
        throw Error(ErrorKind::invalid_config, "spec." + k + ": unknown field");
      }
    }
    auto get = [&](const char* key, auto& target) {
      field = key;
      if (j.contains(key)) target = j.at(key).get<std::decay_t<decltype(target)>>();
    };
    auto get_range = [&](const json& obj, const char* key, double& lo, double& hi,
                         const std::string& prefix) {
      field = prefix + key;
      if (!obj.contains(key)) return;
      const json& r = obj.at(key);
      if (!r.is_array() || r.size() != 2) {
        throw Error(ErrorKind::invalid_config, "spec." + field + ": expected [min, max]");
      }
      lo = r[0].get<double>();
      hi = r[1].get<double>();
    };
    get("objects", s.objects);
    get("frame_count", s.frame_count);
    get("width", s.width);
    get("height", s.height);
    get("frame_rate", s.frame_rate);
    get("speed", s.speed);
    get("amplitude", s.amplitude);
    get("period", s.period);
    get("param_jitter", s.param_jitter);
    if (j.contains("programs")) {
      field = "programs";
      s.programs.clear();
      for (const auto& p : j.at("programs")) s.programs.push_back(parse_motion_program(p.get<std::string>()));
    }
    if (j.contains("layout")) {
      field = "layout";
      const std::string layout = j.at("layout").get<std::string>();
      if (layout != "lanes" && layout != "free") {
        throw Error(ErrorKind::invalid_config, "spec.layout: must be 'lanes' or 'free'");
      }
      s.lanes = layout == "lanes";
    }
    get_range(j, "box_width", s.box_width_min, s.box_width_max, "");
    get_range(j, "box_height", s.box_height_min, s.box_height_max, "");
    if (j.contains("noise")) {
      const json& n = j.at("noise");
      auto nget = [&](const char* key, double& target) {
        field = std::string("noise.") + key;
        if (n.contains(key)) target = n.at(key).get<double>();
      };
      nget("jitter", s.noise.jitter);
      nget("drop_probability", s.noise.drop_probability);
      nget("false_positive_rate", s.noise.false_positive_rate);
      get_range(n, "confidence", s.noise.confidence_min, s.noise.confidence_max, "noise.");
      get_range(n, "fp_confidence", s.noise.fp_confidence_min, s.noise.fp_confidence_max, "noise.");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_config, "spec." + field + ": " + e.what());
  }
  s.validate();
  return s;
}

namespace {

struct ObjectPath {
  std::vector<double> x, y;  // relative displacement per frame
};

ObjectPath program_path(MotionProgram program, const SyntheticSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto jittered = [&](double v) {
    return v * (1.0 + spec.param_jitter * (2.0 * unit(rng) - 1.0));
  };
  const double speed = jittered(spec.speed);
  const double amplitude = jittered(spec.amplitude);
  const double period = jittered(spec.period);
  const double two_pi = 2.0 * std::numbers::pi;
  // Heading of the drift axis; lanes keep drift horizontal.
  const double heading = spec.lanes ? (unit(rng) < 0.5 ? 0.0 : std::numbers::pi) : two_pi * unit(rng);
  const double ux = std::cos(heading);
  const double uy = spec.lanes ? 0.0 : std::sin(heading);

  const int frames = spec.frame_count;
  ObjectPath p;
  p.x.resize(frames);
  p.y.resize(frames);
  double along = 0.0;
  double velocity = speed;
  int next_flip = static_cast<int>(std::lround(period * (0.5 + unit(rng))));
  for (int k = 0; k < frames; ++k) {
    const int f = k + 1;
    switch (program) {
      case MotionProgram::linear:
        p.x[k] = speed * k * ux;
        p.y[k] = speed * k * uy;
        break;
      case MotionProgram::sinusoidal: {
        const double osc = amplitude * std::sin(two_pi * f / period);
        // Oscillation perpendicular to the drift axis (vertical in lanes).
        p.x[k] = speed * k * ux - osc * uy;
        p.y[k] = speed * k * uy + osc * (spec.lanes ? 1.0 : ux);
        break;
      }
      case MotionProgram::circular:
        p.x[k] = amplitude * std::cos(two_pi * f / period);
        p.y[k] = amplitude * std::sin(two_pi * f / period);
        break;
      case MotionProgram::accelerate: {
        // Triangular velocity profile: constant acceleration, reversing every
        // half period, peak speed `speed`.
        const double phase = std::fmod(static_cast<double>(k) / period, 1.0);
        const double tri = phase < 0.5 ? 4.0 * phase - 1.0 : 3.0 - 4.0 * phase;
        if (k > 0) along += speed * tri;
        p.x[k] = along * ux;
        p.y[k] = along * uy;
        break;
      }
      case MotionProgram::direction_flip:
        if (k > 0) {
          if (k == next_flip) {
            velocity = -velocity;
            next_flip += std::max(2, static_cast<int>(std::lround(period * (0.5 + unit(rng)))));
          }
          along += velocity;
        }
        p.x[k] = along * ux;
        p.y[k] = along * uy;
        break;
    }
  }
  return p;
}

// Picks an origin keeping every box inside [lo, hi]; shrinks the path about
// its start if it cannot fit.
double place_axis(std::vector<double>& path, double extent, double lo, double hi, Rng& rng) {
  const auto [mn, mx] = std::minmax_element(path.begin(), path.end());
  const double span = *mx - *mn;
  const double room = (hi - lo) - extent;
  if (span > room) {
    const double shrink = room / span * 0.999;
    for (double& v : path) v *= shrink;
  }
  const auto [mn2, mx2] = std::minmax_element(path.begin(), path.end());
  const double first = lo + extent / 2.0 - *mn2;
  const double last = hi - extent / 2.0 - *mx2;
  std::uniform_real_distribution<double> pick(0.0, 1.0);
  return first + (last - first) * pick(rng);
}

}  // namespace

SyntheticSequence synth_sequence(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticSequence seq;
  seq.meta = SequenceMeta{spec.frame_count, spec.width, spec.height, spec.frame_rate};

  std::seed_seq traj_seed{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 1u};
  std::seed_seq noise_seed{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 2u};
  Rng rng(traj_seed);
  Rng noise_rng(noise_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // boxes[object][frame index]
  std::vector<std::vector<BoundingBox>> boxes(spec.objects);
  const double band = spec.lanes ? static_cast<double>(spec.height) / spec.objects : spec.height;
  for (int k = 0; k < spec.objects; ++k) {
    const MotionProgram program = spec.programs[k % spec.programs.size()];
    const double w = spec.box_width_min + (spec.box_width_max - spec.box_width_min) * unit(rng);
    const double h = spec.box_height_min + (spec.box_height_max - spec.box_height_min) * unit(rng);
    ObjectPath path = program_path(program, spec, rng);
    const double y_lo = spec.lanes ? band * k : 0.0;
    const double ox = place_axis(path.x, w, 0.0, spec.width, rng);
    const double oy = place_axis(path.y, h, y_lo, y_lo + band, rng);
    for (int f = 0; f < spec.frame_count; ++f) {
      boxes[k].push_back(BoundingBox(ox + path.x[f], oy + path.y[f], w, h, Units::pixel));
    }
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  std::poisson_distribution<int> false_positives(
      spec.noise.false_positive_rate > 0.0 ? spec.noise.false_positive_rate : 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(noise_rng); };

  for (int f = 0; f < spec.frame_count; ++f) {
    for (int k = 0; k < spec.objects; ++k) {
      seq.ground_truth.push_back(MotRecord{f + 1, k + 1, boxes[k][f], 1.0});
    }
    for (int k = 0; k < spec.objects; ++k) {
      if (spec.noise.drop_probability > 0.0 && unit(noise_rng) < spec.noise.drop_probability) continue;
      BoundingBox b = boxes[k][f];
      if (spec.noise.jitter > 0.0) {
        const double j = spec.noise.jitter;
        const double w = b.w() * std::max(0.2, 1.0 + j * normal(noise_rng));
        const double h = b.h() * std::max(0.2, 1.0 + j * normal(noise_rng));
        b = BoundingBox(b.cx() + j * b.w() * normal(noise_rng), b.cy() + j * b.h() * normal(noise_rng),
                        w, h, Units::pixel);
      }
      const double conf = spec.noise.confidence_min == spec.noise.confidence_max
                              ? spec.noise.confidence_min
                              : uniform(spec.noise.confidence_min, spec.noise.confidence_max);
      seq.detections.push_back(MotRecord{f + 1, -1, b, conf});
    }
    const int fp = spec.noise.false_positive_rate > 0.0 ? false_positives(noise_rng) : 0;
    for (int i = 0; i < fp; ++i) {
      const double w = uniform(spec.box_width_min, spec.box_width_max);
      const double h = uniform(spec.box_height_min, spec.box_height_max);
      const BoundingBox b(uniform(w / 2, spec.width - w / 2), uniform(h / 2, spec.height - h / 2), w,
                          h, Units::pixel);
      seq.detections.push_back(
          MotRecord{f + 1, -1, b, uniform(spec.noise.fp_confidence_min, spec.noise.fp_confidence_max)});
    }
  }
  return seq;
}

std::vector<Trajectory> normalize_trajectories(const std::vector<Trajectory>& trajectories,
                                               const SequenceMeta& meta) {
  std::vector<Trajectory> out = trajectories;
  for (Trajectory& t : out) {
    for (BoundingBox& b : t.boxes) {
      if (b.units() == Units::pixel) {
        b = normalize_box(b, static_cast<double>(meta.width), static_cast<double>(meta.height));
      }
    }
  }
  return out;
}

std::vector<TrainingSample> build_training_set(const std::vector<Trajectory>& trajectories, int n,
                                               ConditionVariant variant) {
  if (n < 1) throw Error(ErrorKind::invalid_input, "history length must be >= 1");
  std::vector<TrainingSample> samples;
  ModelConfig mask;
  mask.condition_variant = variant;
  mask.motion_scale = 1.0;
  for (const Trajectory& t : trajectories) {
    TrackState history;
    history.capacity = static_cast<std::size_t>(n) + 1;
    for (std::size_t i = 0; i < t.boxes.size(); ++i) {
      if (i > 0) {
        TrainingSample s;
        s.condition = condition_window(history.history, n);
        if (variant != ConditionVariant::full) s.condition.rows = condition_input_rows(s.condition, mask);
        s.target = motion_from_boxes(t.boxes[i - 1], t.boxes[i]);
        samples.push_back(std::move(s));
      }
      history.append(t.frames.empty() ? static_cast<int>(i) + 1 : t.frames[i], t.boxes[i]);
    }
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Model files

json to_json(const ModelConfig& c) {
  return json{{"token_dim", c.token_dim},
              {"n_heads", c.n_heads},
              {"n_condition_layers", c.n_condition_layers},
              {"n_fusion_blocks", c.n_fusion_blocks},
              {"history_length", c.history_length},
              {"variant", to_string(c.variant)},
              {"condition_variant", to_string(c.condition_variant)},
              {"position_encoding", c.position_encoding},
              {"motion_scale", c.motion_scale}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  std::string field;
  try {
    auto get = [&](const char* key, auto& target) {
      field = key;
      if (j.contains(key)) target = j.at(key).get<std::decay_t<decltype(target)>>();
    };
    get("token_dim", c.token_dim);
    get("n_heads", c.n_heads);
    get("n_condition_layers", c.n_condition_layers);
    get("n_fusion_blocks", c.n_fusion_blocks);
    get("history_length", c.history_length);
    get("position_encoding", c.position_encoding);
    get("motion_scale", c.motion_scale);
    if (j.contains("variant")) c.variant = parse_branch_variant(j.at("variant").get<std::string>());
    if (j.contains("condition_variant")) {
      c.condition_variant = parse_condition_variant(j.at("condition_variant").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_config, "model." + field + ": " + e.what());
  }
  c.validate();
  return c;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

constexpr char kMagic[4] = {'D', '2', 'M', 'P'};

}  // namespace

std::string save_model(const ModelParameters& params, const ModelConfig& config) {
  config.validate();
  json tensors = json::array();
  std::string payload;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    auto it = params.find(name);
    if (it == params.end()) throw Error(ErrorKind::invalid_input, "missing parameter '" + name + "'");
    const Tensor& t = it->second;
    if (t.rows() != shape.first || t.cols() != shape.second) {
      throw Error(ErrorKind::shape_mismatch, "parameter '" + name + "' has the wrong shape");
    }
    tensors.push_back(json{{"name", name},
                           {"dtype", "f32"},
                           {"shape", {t.rows(), t.cols()}},
                           {"offset", payload.size()}});
    for (Index i = 0; i < t.size(); ++i) {
      put_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(t.data()[i])));
    }
  }
  const json header{{"config", to_json(config)}, {"tensors", tensors}, {"payload_bytes", payload.size()}};
  const std::string header_text = header.dump();
  std::string out(kMagic, 4);
  put_u32(out, kModelFileVersion);
  put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  out += payload;
  return out;
}

LoadedModel load_model(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::format, "model file: bad magic");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kModelFileVersion) {
    throw Error(ErrorKind::format, "model file: unsupported version " + std::to_string(version));
  }
  const std::size_t header_len = get_u32(bytes, 8);
  if (12 + header_len > bytes.size()) throw Error(ErrorKind::format, "model file: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(12, header_len));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("model file: bad header: ") + e.what());
  }
  LoadedModel model;
  try {
    model.config = model_config_from_json(header.at("config"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("model file: bad config: ") + e.what());
  }
  const std::size_t payload_at = 12 + header_len;
  const std::size_t payload_size = bytes.size() - payload_at;

  const auto expected = parameter_shapes(model.config);
  std::map<std::string, std::pair<Index, Index>> expected_map(expected.begin(), expected.end());
  try {
    if (header.at("payload_bytes").get<std::size_t>() != payload_size) {
      throw Error(ErrorKind::format, "model file: payload truncated or padded");
    }
    for (const json& entry : header.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      auto it = expected_map.find(name);
      if (it == expected_map.end()) throw Error(ErrorKind::format, "model file: unknown tensor '" + name + "'");
      if (entry.at("dtype").get<std::string>() != "f32") {
        throw Error(ErrorKind::format, "model file: tensor '" + name + "' has unsupported dtype");
      }
      const Index rows = entry.at("shape").at(0).get<Index>();
      const Index cols = entry.at("shape").at(1).get<Index>();
      if (rows != it->second.first || cols != it->second.second) {
        throw Error(ErrorKind::format, "model file: tensor '" + name + "' shape disagrees with config");
      }
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t count = static_cast<std::size_t>(rows * cols);
      if (offset % 4 != 0 || offset + 4 * count > payload_size) {
        throw Error(ErrorKind::format, "model file: tensor '" + name + "' lies outside the payload");
      }
      Tensor t(rows, cols);
      for (std::size_t i = 0; i < count; ++i) {
        t.data()[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, payload_at + offset + 4 * i)));
      }
      if (!model.params.emplace(name, std::move(t)).second) {
        throw Error(ErrorKind::format, "model file: tensor '" + name + "' listed twice");
      }
      expected_map.erase(it);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("model file: bad tensor index: ") + e.what());
  }
  if (!expected_map.empty()) {
    throw Error(ErrorKind::format, "model file: missing tensor '" + expected_map.begin()->first + "'");
  }
  return model;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  out << contents;
  if (!out) throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
}

}  // namespace nlmot
