#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "nlmot/data_io.hpp"
#include "helpers.hpp"

using namespace nlmot;
using testing::throws_kind;

namespace {

const SequenceMeta kMeta{100, 1920, 1080, 30.0};

SyntheticSpec quiet_spec() {
  SyntheticSpec s;
  s.objects = 3;
  s.frame_count = 60;
  return s;
}

}  // namespace

TEST_CASE("parse MOT lines") {
  const auto det = parse_mot(std::string("1,-1,10,20,4,8,0.9,-1,-1,-1\n"), kMeta, false);
  REQUIRE(det.records.size() == 1);
  CHECK(det.records[0].frame == 1);
  CHECK(det.records[0].id == -1);
  CHECK(det.records[0].box == BoundingBox(12, 24, 4, 8, Units::pixel));
  CHECK(det.records[0].confidence == 0.9);

  const auto gt = parse_mot(std::string("1,7,0,0,10,10,1,-1,-1,-1"), kMeta, false);
  CHECK(gt.records[0].id == 7);
  CHECK(gt.records[0].box == BoundingBox(5, 5, 10, 10, Units::pixel));

  CHECK(parse_mot(std::string(""), kMeta, false).records.empty());

  const auto norm = parse_mot(std::string("1,1,960,540,192,108\n"), kMeta, true);
  CHECK(norm.records[0].box.vector().isApprox(Eigen::Vector4d(0.55, 0.55, 0.1, 0.1), 1e-12));
  CHECK(norm.records[0].box.units() == Units::normalized);

  const auto sorted = parse_mot(std::string("3,1,0,0,1,1\n1,2,0,0,1,1\n2,3,0,0,1,1\n1,4,0,0,1,1\n"), kMeta, false);
  std::vector<std::int64_t> ids;
  for (const auto& r : sorted.records) ids.push_back(r.id);
  CHECK(ids == std::vector<std::int64_t>{2, 4, 3, 1});

  const auto skipped = parse_mot(std::string("1,1,0,0,0,5\n1,2,0,0,4,-1\n1,3,0,0,4,4\n"), kMeta, false);
  CHECK(skipped.records.size() == 1);
  CHECK(skipped.skipped == 2);
}

TEST_CASE("malformed MOT lines name the line") {
  for (const char* text : {"1,1,0,0,4\n", "1,1,a,0,4,4\n", "0,1,0,0,4,4\n", "1,1,0,0,4,4,x\n"}) {
    try {
      parse_mot(std::string("1,1,0,0,4,4\n") + text, kMeta, false);
      FAIL("accepted " << text);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::format);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
}

TEST_CASE("write MOT lines") {
  const std::vector<MotRecord> r{{1, 3, BoundingBox(12, 24, 4, 8, Units::pixel), 0.4}};
  CHECK(write_mot(r, kMeta) == "1,3,10.00,20.00,4.00,8.00,1.00,-1,-1,-1\n");
  CHECK(write_detections({{2, -1, BoundingBox(12, 24, 4, 8, Units::pixel), 0.4}}, kMeta) ==
        "2,-1,10.00,20.00,4.00,8.00,0.40,-1,-1,-1\n");
  CHECK(write_mot({}, kMeta).empty());
  const std::vector<MotRecord> n{{1, 3, BoundingBox(0.5, 0.5, 0.1, 0.2), 1.0}};
  CHECK(write_mot(n, kMeta) == "1,3,864.00,432.00,192.00,216.00,1.00,-1,-1,-1\n");
}

TEST_CASE("write then parse round trips") {
  const SyntheticSequence seq = [] {
    SyntheticSpec s = quiet_spec();
    s.noise.jitter = 0.05;
    s.noise.confidence_min = 0.3;
    s.noise.false_positive_rate = 1.0;
    return synth_sequence(s, 4);
  }();
  const std::string gt = write_mot(seq.ground_truth, seq.meta);
  CHECK(write_mot(parse_mot(gt, seq.meta, false).records, seq.meta) == gt);
  const std::string det = write_detections(seq.detections, seq.meta);
  CHECK(write_detections(parse_mot(det, seq.meta, false).records, seq.meta) == det);
  std::istringstream stream(gt);
  CHECK(parse_mot(stream, seq.meta, false).records.size() == seq.ground_truth.size());
}

TEST_CASE("meta and spec JSON") {
  CHECK(sequence_meta_from_json(to_json(kMeta)).width == 1920);
  CHECK(throws_kind(ErrorKind::invalid_config, [] { SequenceMeta{0, 10, 10, 30}.validate(); }));

  SyntheticSpec s = quiet_spec();
  s.programs = {MotionProgram::sinusoidal, MotionProgram::direction_flip};
  s.lanes = false;
  const SyntheticSpec back = synthetic_spec_from_json(to_json(s));
  CHECK(to_json(back) == to_json(s));

  nlohmann::json j = to_json(s);
  j["objectz"] = 3;
  CHECK(throws_kind(ErrorKind::invalid_config, [&] { synthetic_spec_from_json(j); }));
  SyntheticSpec bad = quiet_spec();
  bad.noise.drop_probability = 1.5;
  CHECK(throws_kind(ErrorKind::invalid_config, [&] { bad.validate(); }));
  CHECK(throws_kind(ErrorKind::invalid_config, [] { parse_motion_program("zigzag"); }));
  for (auto p : {MotionProgram::linear, MotionProgram::sinusoidal, MotionProgram::circular,
                 MotionProgram::accelerate, MotionProgram::direction_flip}) {
    CHECK(parse_motion_program(to_string(p)) == p);
  }
}

TEST_CASE("synthetic scenes") {
  SyntheticSpec s = quiet_spec();
  s.programs = {MotionProgram::linear, MotionProgram::circular, MotionProgram::accelerate,
                MotionProgram::direction_flip, MotionProgram::sinusoidal};
  s.objects = 5;
  const SyntheticSequence a = synth_sequence(s, 12);
  const SyntheticSequence b = synth_sequence(s, 12);
  CHECK(write_mot(a.ground_truth, a.meta) == write_mot(b.ground_truth, b.meta));
  CHECK(write_mot(a.ground_truth, a.meta) != write_mot(synth_sequence(s, 13).ground_truth, a.meta));
  CHECK(a.ground_truth.size() == 300);
  for (const auto& r : a.ground_truth) {
    CHECK(r.box.left() >= 0.0);
    CHECK(r.box.top() >= 0.0);
    CHECK(r.box.right() <= s.width);
    CHECK(r.box.bottom() <= s.height);
  }

  // Zero noise: detections are the GT boxes at confidence 1.
  REQUIRE(a.detections.size() == a.ground_truth.size());
  for (std::size_t i = 0; i < a.detections.size(); ++i) {
    CHECK(a.detections[i].box == a.ground_truth[i].box);
    CHECK(a.detections[i].frame == a.ground_truth[i].frame);
    CHECK(a.detections[i].confidence == 1.0);
  }

  SyntheticSpec dropped = s;
  dropped.noise.drop_probability = 1.0;
  CHECK(synth_sequence(dropped, 1).detections.empty());
  dropped.noise.false_positive_rate = 2.0;
  const SyntheticSequence fp = synth_sequence(dropped, 1);
  CHECK(!fp.detections.empty());
  for (const auto& d : fp.detections) {
    CHECK(d.confidence >= s.noise.fp_confidence_min);
    CHECK(d.confidence <= s.noise.fp_confidence_max);
  }
}

TEST_CASE("sinusoid follows its closed form") {
  SyntheticSpec s;
  s.objects = 2;
  s.frame_count = 150;
  s.programs = {MotionProgram::sinusoidal};
  s.amplitude = 50.0;
  s.period = 37.0;
  s.speed = 3.0;
  const SyntheticSequence seq = synth_sequence(s, 8);
  for (const Trajectory& t : group_trajectories(seq.ground_truth)) {
    const double two_pi = 2.0 * std::numbers::pi;
    const double cy0 = t.boxes[0].cy() - s.amplitude * std::sin(two_pi * t.frames[0] / s.period);
    const double dx = t.boxes[1].cx() - t.boxes[0].cx();
    CHECK(std::abs(dx) == doctest::Approx(s.speed));
    for (std::size_t i = 0; i < t.boxes.size(); ++i) {
      const int f = t.frames[i];
      CHECK(std::abs(t.boxes[i].cy() - (cy0 + s.amplitude * std::sin(two_pi * f / s.period))) < 1e-9);
      CHECK(std::abs(t.boxes[i].cx() - (t.boxes[0].cx() + dx * i)) < 1e-9);
    }
  }
}

TEST_CASE("trajectory grouping") {
  const std::vector<MotRecord> r{{2, 5, BoundingBox(1, 1, 1, 1, Units::pixel), 1},
                                 {1, 5, BoundingBox(2, 2, 1, 1, Units::pixel), 1},
                                 {1, 2, BoundingBox(3, 3, 1, 1, Units::pixel), 1}};
  const auto t = group_trajectories(r);
  REQUIRE(t.size() == 2);
  CHECK(t[0].id == 2);
  CHECK(t[1].frames == std::vector<int>{1, 2});
  CHECK(t[1].boxes[0].cx() == 2);
  auto dup = r;
  dup.push_back({1, 2, BoundingBox(3, 3, 1, 1, Units::pixel), 1});
  CHECK(throws_kind(ErrorKind::format, [&] { group_trajectories(dup); }));
  CHECK(group_detections(r).at(1).size() == 2);
}

TEST_CASE("training set assembly") {
  Trajectory line;
  line.id = 1;
  for (int f = 1; f <= 10; ++f) {
    line.frames.push_back(f);
    line.boxes.emplace_back(0.125 + 0.0625 * f, 0.5, 0.0625, 0.125);
  }
  const auto samples = build_training_set({line}, 5);
  CHECK(samples.size() == 9);
  for (std::size_t i = 1; i < samples.size(); ++i) CHECK(samples[i].target == samples[0].target);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(samples[i].condition.length() == 5);
    CHECK(samples[i].condition.rows.row(0).head<4>().transpose() == line.boxes[i].vector());
  }

  Trajectory two = line;
  two.frames.resize(1);
  two.boxes.resize(1);
  CHECK(build_training_set({two}, 5).empty());

  // Targets reproduce the next box on irregular synthetic motion.
  SyntheticSpec s = quiet_spec();
  s.programs = {MotionProgram::direction_flip, MotionProgram::circular};
  const SyntheticSequence seq = synth_sequence(s, 3);
  const auto trajs = normalize_trajectories(group_trajectories(seq.ground_truth), seq.meta);
  const auto set = build_training_set(trajs, 5);
  std::size_t k = 0;
  for (const Trajectory& t : trajs) {
    for (std::size_t i = 1; i < t.boxes.size(); ++i, ++k) {
      const BoundingBox next = apply_motion(t.boxes[i - 1], set[k].target);
      CHECK((next.vector() - t.boxes[i].vector()).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  CHECK(k == set.size());

  const auto boxes_only = build_training_set({line}, 5, ConditionVariant::box);
  const auto motion_only = build_training_set({line}, 5, ConditionVariant::motion);
  for (std::size_t i = 1; i < boxes_only.size(); ++i) {
    CHECK(boxes_only[i].condition.rows.rightCols(4).isZero(0));
    CHECK(!boxes_only[i].condition.rows.leftCols(4).isZero(0));
    CHECK(motion_only[i].condition.rows.leftCols(4).isZero(0));
    CHECK(!motion_only[i].condition.rows.rightCols(4).isZero(0));
  }
}

TEST_CASE("model files") {
  ModelConfig c;
  c.token_dim = 16;
  c.n_heads = 4;
  c.variant = BranchVariant::two_branch;
  const ModelParameters p = init_params(c, 21);
  const std::string bytes = save_model(p, c);
  CHECK(bytes.substr(0, 4) == "D2MP");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  CHECK(version == kModelFileVersion);

  const LoadedModel m = load_model(bytes);
  CHECK(m.config == c);
  CHECK(save_model(m.params, m.config) == bytes);
  const auto shapes = parameter_shapes(c);
  CHECK(m.params.size() == shapes.size());
  for (const auto& [name, shape] : shapes) {
    const Tensor& t = m.params.at(name);
    CHECK(t.rows() == shape.first);
    CHECK(t.cols() == shape.second);
    const Tensor& orig = p.at(name);
    CHECK(((t - orig).array().abs() <= orig.array().abs() * std::ldexp(1.0, -23) + 1e-300).all());
  }

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK(throws_kind(ErrorKind::format, [&] { load_model(bad); }));
  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  CHECK(throws_kind(ErrorKind::format, [&] { load_model(wrong_version); }));
  CHECK(throws_kind(ErrorKind::format, [&] { load_model(bytes.substr(0, bytes.size() - 4)); }));
  CHECK(throws_kind(ErrorKind::format, [&] { load_model(bytes.substr(0, 6)); }));

  // Header edits: unknown tensor, shape disagreeing with the config.
  auto with_header = [&](auto edit) {
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 4);
    nlohmann::json h = nlohmann::json::parse(bytes.substr(12, len));
    edit(h);
    const std::string text = h.dump();
    std::string out = bytes.substr(0, 8);
    const auto n = static_cast<std::uint32_t>(text.size());
    out.append(reinterpret_cast<const char*>(&n), 4);
    return out + text + bytes.substr(12 + len);
  };
  CHECK_NOTHROW(load_model(with_header([](nlohmann::json&) {})));
  CHECK(throws_kind(ErrorKind::format, [&] {
    load_model(with_header([](nlohmann::json& h) { h["tensors"][0]["name"] = "mystery"; }));
  }));
  CHECK(throws_kind(ErrorKind::format, [&] {
    load_model(with_header([](nlohmann::json& h) { h["tensors"][0]["shape"] = {1, 1}; }));
  }));
  CHECK(throws_kind(ErrorKind::format, [&] {
    load_model(with_header([](nlohmann::json& h) { h["tensors"][1]["offset"] = 1u << 30; }));
  }));
  ModelParameters reshaped = p;
  reshaped.begin()->second = Tensor::Zero(3, 3);
  CHECK(throws_kind(ErrorKind::shape_mismatch, [&] { save_model(reshaped, c); }));

  const auto dir = testing::scratch_dir("model");
  write_file(dir / "m.d2mp", bytes);
  CHECK(read_file(dir / "m.d2mp") == bytes);
  CHECK(throws_kind(ErrorKind::io, [&] { read_file(dir / "missing.d2mp"); }));
}
