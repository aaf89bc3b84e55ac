#pragma once

// MOT-Challenge text files, synthetic scenes, training-set assembly and the
// binary model format.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlmot/core.hpp"
#include "nlmot/diffusion.hpp"
#include "nlmot/hminet.hpp"

namespace nlmot {

struct SequenceMeta {
  int frame_count = 1;
  int width = 1920;
  int height = 1080;
  double frame_rate = 30.0;

  void validate() const;
};

nlohmann::json to_json(const SequenceMeta& meta);
SequenceMeta sequence_meta_from_json(const nlohmann::json& j);

/// One line of a MOT file, box in center format.
struct MotRecord {
  int frame = 1;
  std::int64_t id = -1;
  BoundingBox box;
  double confidence = 1.0;
};

struct MotParseResult {
  std::vector<MotRecord> records;  // stable-sorted by frame
  std::size_t skipped = 0;         // lines with non-positive extent
};

/// `frame,id,bb_left,bb_top,bb_width,bb_height[,conf[,x,y,z]]` per line.
/// With `normalized`, boxes are divided by the image size and centers clamped
/// to [0, 1]. Throws format naming the line for malformed input.
MotParseResult parse_mot(std::istream& in, const SequenceMeta& meta, bool normalized);
MotParseResult parse_mot(const std::string& text, const SequenceMeta& meta, bool normalized);

/// Result/ground-truth form: confidence fixed at 1.00.
std::string write_mot(const std::vector<MotRecord>& records, const SequenceMeta& meta);
/// Detection form: id -1 and the record's own confidence.
std::string write_detections(const std::vector<MotRecord>& records, const SequenceMeta& meta);

struct Trajectory {
  std::int64_t id = 0;
  std::vector<int> frames;
  std::vector<BoundingBox> boxes;
};

/// Groups records by id (ascending), each sorted by frame.
std::vector<Trajectory> group_trajectories(const std::vector<MotRecord>& records);
std::map<int, std::vector<Detection>> group_detections(const std::vector<MotRecord>& records);

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class MotionProgram { linear, sinusoidal, circular, accelerate, direction_flip };
std::string to_string(MotionProgram p);
MotionProgram parse_motion_program(const std::string& s);

struct DetectionNoise {
  double jitter = 0.0;               // std-dev as a fraction of box extent
  double drop_probability = 0.0;
  double false_positive_rate = 0.0;  // expected false positives per frame
  double confidence_min = 1.0;
  double confidence_max = 1.0;
  double fp_confidence_min = 0.5;
  double fp_confidence_max = 0.9;
};

struct SyntheticSpec {
  int objects = 3;
  int frame_count = 200;
  int width = 1920;
  int height = 1080;
  double frame_rate = 30.0;
  std::vector<MotionProgram> programs{MotionProgram::linear};
  /// "lanes" keeps each object in its own horizontal band; "free" uses the
  /// whole image.
  bool lanes = true;
  double speed = 6.0;          // pixels per frame
  double amplitude = 80.0;     // pixels (sinusoid amplitude, circle radius)
  double period = 40.0;        // frames
  double param_jitter = 0.0;   // per-object relative spread of speed/amplitude/period
  double box_width_min = 60.0;
  double box_width_max = 100.0;
  double box_height_min = 120.0;
  double box_height_max = 200.0;
  DetectionNoise noise;

  /// Throws invalid_config naming the field.
  void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct SyntheticSequence {
  std::vector<MotRecord> ground_truth;  // pixel units
  std::vector<MotRecord> detections;    // pixel units
  SequenceMeta meta;
};

SyntheticSequence synth_sequence(const SyntheticSpec& spec, std::uint64_t seed);

/// Converts pixel trajectories into normalized units.
std::vector<Trajectory> normalize_trajectories(const std::vector<Trajectory>& trajectories,
                                               const SequenceMeta& meta);

/// One sample per (trajectory, frame f >= 2): the window before f and the
/// motion from f-1 to f. `variant` masks the window rows the same way the
/// network input does.
std::vector<TrainingSample> build_training_set(const std::vector<Trajectory>& trajectories, int n,
                                               ConditionVariant variant = ConditionVariant::full);

// ---------------------------------------------------------------------------
// Model files
//
// "D2MP" | u32 version | u32 header_bytes | header JSON | f32 payload
// All integers and floats little-endian. The header holds the model config
// and a tensor index (name, dtype, shape, byte offset into the payload).

inline constexpr std::uint32_t kModelFileVersion = 1;

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

std::string save_model(const ModelParameters& params, const ModelConfig& config);

struct LoadedModel {
  ModelConfig config;
  ModelParameters params;
};

/// Throws format for wrong magic/version, truncation, unknown tensors or
/// shapes that disagree with the config.
LoadedModel load_model(const std::string& bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace nlmot
