// nlmot command-line front end: synth | train | track | eval | diag | viz

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include "nlmot/association.hpp"
#include "nlmot/data_io.hpp"
#include "nlmot/diffusion.hpp"
#include "nlmot/error.hpp"
#include "nlmot/metrics.hpp"
#include "nlmot/predictors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nlmot;

namespace {

// ---------------------------------------------------------------------------
// Effective configuration

struct PredictorSettings {
  PredictorKind kind = PredictorKind::kalman;
  int sampling_steps = 1;
  bool deterministic = false;
  KalmanConfig kalman;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  TrackerConfig tracker;
  PredictorSettings predictor;
  int burn_in = 0;
};

[[noreturn]] void config_error(const std::string& field, const std::string& why) {
  throw Error(ErrorKind::invalid_config, field + ": " + why);
}

void check_keys(const json& j, const std::string& prefix, std::initializer_list<const char*> known) {
  if (!j.is_object()) config_error(prefix.empty() ? "config" : prefix, "expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      config_error(prefix.empty() ? key : prefix + "." + key, "unknown field");
    }
  }
}

template <class T>
void read_field(const json& j, const char* key, T& target, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(prefix + "." + key, "wrong type");
  }
}

RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_config, "config file '" + path + "': " + e.what());
  }
  check_keys(j, "", {"seed", "model", "train", "tracker", "predictor", "diag"});
  read_field(j, "seed", c.seed, "config");
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train", {"steps", "batch_size", "learning_rate", "cosine_decay", "z_squared_error"});
    read_field(t, "steps", c.train.steps, "train");
    read_field(t, "batch_size", c.train.batch_size, "train");
    read_field(t, "learning_rate", c.train.learning_rate, "train");
    read_field(t, "cosine_decay", c.train.cosine_decay, "train");
    read_field(t, "z_squared_error", c.train.z_squared_error, "train");
  }
  if (j.contains("tracker")) {
    const json& t = j.at("tracker");
    check_keys(t, "tracker", {"tau_high", "tau_low", "new_track_threshold", "iou_gate_first",
                              "iou_gate_second", "max_age", "iou_weight"});
    read_field(t, "tau_high", c.tracker.tau_high, "tracker");
    read_field(t, "tau_low", c.tracker.tau_low, "tracker");
    read_field(t, "new_track_threshold", c.tracker.new_track_threshold, "tracker");
    read_field(t, "iou_gate_first", c.tracker.iou_gate_first, "tracker");
    read_field(t, "iou_gate_second", c.tracker.iou_gate_second, "tracker");
    read_field(t, "max_age", c.tracker.max_age, "tracker");
    read_field(t, "iou_weight", c.tracker.iou_weight, "tracker");
  }
  if (j.contains("predictor")) {
    const json& p = j.at("predictor");
    check_keys(p, "predictor", {"kind", "sampling_steps", "deterministic", "kf"});
    std::string kind;
    read_field(p, "kind", kind, "predictor");
    if (!kind.empty()) c.predictor.kind = parse_predictor_kind(kind);
    read_field(p, "sampling_steps", c.predictor.sampling_steps, "predictor");
    read_field(p, "deterministic", c.predictor.deterministic, "predictor");
    if (p.contains("kf")) {
      const json& k = p.at("kf");
      check_keys(k, "predictor.kf", {"std_weight_position", "std_weight_velocity"});
      read_field(k, "std_weight_position", c.predictor.kalman.std_weight_position, "predictor.kf");
      read_field(k, "std_weight_velocity", c.predictor.kalman.std_weight_velocity, "predictor.kf");
    }
  }
  if (j.contains("diag")) {
    check_keys(j.at("diag"), "diag", {"burn_in"});
    read_field(j.at("diag"), "burn_in", c.burn_in, "diag");
  }
  return c;
}

void validate(const PredictorSettings& p) {
  if (p.sampling_steps < 1) config_error("predictor.sampling_steps", "must be >= 1");
  if (!(p.kalman.std_weight_position > 0.0)) config_error("predictor.kf.std_weight_position", "must be positive");
  if (!(p.kalman.std_weight_velocity > 0.0)) config_error("predictor.kf.std_weight_velocity", "must be positive");
}

json predictor_json(const PredictorSettings& p) {
  return json{{"kind", to_string(p.kind)},
              {"sampling_steps", p.sampling_steps},
              {"deterministic", p.deterministic},
              {"kf",
               {{"std_weight_position", p.kalman.std_weight_position},
                {"std_weight_velocity", p.kalman.std_weight_velocity}}}};
}

json tracker_json(const TrackerConfig& t) {
  return json{{"tau_high", t.tau_high},
              {"tau_low", t.tau_low},
              {"new_track_threshold", t.new_track_threshold},
              {"iou_gate_first", t.iou_gate_first},
              {"iou_gate_second", t.iou_gate_second},
              {"max_age", t.max_age},
              {"iou_weight", t.iou_weight}};
}

json train_json(const TrainConfig& t) {
  return json{{"steps", t.steps},
              {"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"cosine_decay", t.cosine_decay},
              {"z_squared_error", t.z_squared_error}};
}

// Output directory is created only after every input has been validated.
void prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create '" + dir.string() + "': " + ec.message());
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw Error(ErrorKind::invalid_input, what + " is required");
  if (!fs::is_regular_file(path)) throw Error(ErrorKind::io, what + " '" + path + "' does not exist");
}

SequenceMeta load_meta(const std::string& path) {
  require_file(path, "--meta");
  try {
    return sequence_meta_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, "meta file '" + path + "': " + e.what());
  }
}

/// Uses `explicit_path` if given, else meta.json next to `data_file`, else the
/// default 1920x1080 frame.
SequenceMeta meta_for(const std::string& explicit_path, const fs::path& data_file) {
  if (!explicit_path.empty()) return load_meta(explicit_path);
  const fs::path sibling = data_file.parent_path() / "meta.json";
  if (fs::is_regular_file(sibling)) return load_meta(sibling.string());
  return SequenceMeta{};
}

std::vector<MotRecord> load_mot(const std::string& path, const SequenceMeta& meta, bool normalized) {
  require_file(path, "MOT file");
  const MotParseResult r = parse_mot(read_file(path), meta, normalized);
  if (r.skipped > 0) {
    std::cerr << "warning: skipped " << r.skipped << " line(s) with non-positive extent in " << path
              << "\n";
  }
  return r.records;
}

LoadedModel load_model_file(const std::string& path) {
  require_file(path, "--model");
  return load_model(read_file(path));
}

std::unique_ptr<MotionPredictor> make_predictor(const PredictorSettings& p,
                                                const std::optional<LoadedModel>& model) {
  switch (p.kind) {
    case PredictorKind::kalman: return std::make_unique<KalmanPredictor>(p.kalman);
    case PredictorKind::constant_velocity: return std::make_unique<ConstantVelocityPredictor>();
    case PredictorKind::d2mp: {
      if (!model) throw Error(ErrorKind::invalid_config, "predictor d2mp requires --model");
      auto net = std::make_shared<HmiNet>(model->config, model->params);
      return std::make_unique<D2mpPredictor>(net, D2mpConfig{p.sampling_steps, p.deterministic});
    }
  }
  throw Error(ErrorKind::invalid_config, "unknown predictor");
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Commands

struct SynthArgs {
  std::string spec, out;
  std::uint64_t seed = 0;
};

void cmd_synth(const SynthArgs& a) {
  SyntheticSpec spec;
  if (!a.spec.empty()) {
    require_file(a.spec, "--spec");
    json j;
    try {
      j = json::parse(read_file(a.spec));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::invalid_config, "spec file '" + a.spec + "': " + e.what());
    }
    spec = synthetic_spec_from_json(j);
  }
  spec.validate();
  if (a.out.empty()) throw Error(ErrorKind::invalid_input, "--out is required");
  const SyntheticSequence seq = synth_sequence(spec, a.seed);

  const fs::path out(a.out);
  prepare_output_dir(out);
  write_file(out / "gt.txt", write_mot(seq.ground_truth, seq.meta));
  write_file(out / "det.txt", write_detections(seq.detections, seq.meta));
  write_json(out / "meta.json", to_json(seq.meta));
  write_json(out / "config.json", json{{"command", "synth"}, {"seed", a.seed}, {"spec", to_json(spec)}});
}

struct TrainArgs {
  std::vector<std::string> data;
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps, batch_size, token_dim, history;
  std::optional<double> learning_rate;
  std::optional<std::string> variant, condition;
  bool cosine = false;
};

void cmd_train(const TrainArgs& a) {
  RunConfig c = load_run_config(a.config);
  if (a.seed) c.seed = *a.seed;
  if (a.steps) c.train.steps = *a.steps;
  if (a.batch_size) c.train.batch_size = *a.batch_size;
  if (a.learning_rate) c.train.learning_rate = *a.learning_rate;
  if (a.cosine) c.train.cosine_decay = true;
  if (a.token_dim) c.model.token_dim = *a.token_dim;
  if (a.history) c.model.history_length = *a.history;
  if (a.variant) c.model.variant = parse_branch_variant(*a.variant);
  if (a.condition) c.model.condition_variant = parse_condition_variant(*a.condition);
  c.train.seed = c.seed;
  c.model.validate();
  c.train.validate();
  if (a.out.empty()) throw Error(ErrorKind::invalid_input, "--out is required");
  if (a.data.empty()) throw Error(ErrorKind::invalid_input, "--data is required");

  std::vector<Trajectory> trajectories;
  for (const std::string& dir : a.data) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::io, "data directory '" + dir + "' does not exist");
    const fs::path gt = fs::path(dir) / "gt.txt";
    const SequenceMeta meta = load_meta((fs::path(dir) / "meta.json").string());
    const auto traj = group_trajectories(load_mot(gt.string(), meta, true));
    trajectories.insert(trajectories.end(), traj.begin(), traj.end());
  }
  const auto samples =
      build_training_set(trajectories, c.model.history_length, ConditionVariant::full);
  if (samples.empty()) throw Error(ErrorKind::invalid_input, "training data holds no motion samples");

  const TrainResult result = train(samples, c.model, c.train, init_params(c.model, c.seed));

  const fs::path out(a.out);
  prepare_output_dir(out);
  write_file(out / "model.d2mp", save_model(result.params, c.model));
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, result.loss_history[i]);
    csv += buf;
  }
  write_file(out / "loss.csv", csv);
  json data = json::array();
  for (const auto& d : a.data) data.push_back(d);
  write_json(out / "config.json", json{{"command", "train"},
                                       {"seed", c.seed},
                                       {"data", data},
                                       {"samples", samples.size()},
                                       {"model", to_json(c.model)},
                                       {"train", train_json(c.train)}});
}

struct PredictorArgs {
  std::optional<std::string> kind;
  std::optional<int> sampling_steps;
  bool deterministic = false;
  std::string model;
};

void apply(const PredictorArgs& a, RunConfig& c) {
  if (a.kind) c.predictor.kind = parse_predictor_kind(*a.kind);
  if (a.sampling_steps) c.predictor.sampling_steps = *a.sampling_steps;
  if (a.deterministic) c.predictor.deterministic = true;
  validate(c.predictor);
  if (c.predictor.kind == PredictorKind::d2mp && a.model.empty()) {
    throw Error(ErrorKind::invalid_config, "predictor d2mp requires --model");
  }
}

struct TrackArgs {
  std::string detections, meta, config, out;
  std::optional<std::uint64_t> seed;
  PredictorArgs predictor;
};

void cmd_track(const TrackArgs& a) {
  RunConfig c = load_run_config(a.config);
  if (a.seed) c.seed = *a.seed;
  apply(a.predictor, c);
  c.tracker.validate();
  if (a.out.empty()) throw Error(ErrorKind::invalid_input, "--out is required");
  const SequenceMeta meta = load_meta(a.meta);
  const auto records = load_mot(a.detections, meta, true);
  std::optional<LoadedModel> model;
  if (c.predictor.kind == PredictorKind::d2mp) model = load_model_file(a.predictor.model);
  auto predictor = make_predictor(c.predictor, model);

  const auto tracks =
      run_sequence(group_detections(records), meta.frame_count, *predictor, c.tracker, c.seed);

  const fs::path out(a.out);
  prepare_output_dir(out);
  write_file(out / "result.txt", write_mot(to_mot_records(tracks), meta));
  json echo{{"command", "track"},
            {"seed", c.seed},
            {"detections", a.detections},
            {"meta", to_json(meta)},
            {"predictor", predictor_json(c.predictor)},
            {"tracker", tracker_json(c.tracker)}};
  if (model) {
    echo["model"] = a.predictor.model;
    echo["model_config"] = to_json(model->config);
  }
  write_json(out / "config.json", echo);
}

struct EvalArgs {
  std::string gt, res, meta, metrics = "mota,idf1", out;
  double iou_threshold = 0.5;
};

void cmd_eval(const EvalArgs& a) {
  static const std::set<std::string> valid = {"mota", "idf1"};
  std::vector<std::string> wanted;
  std::stringstream ss(a.metrics);
  for (std::string m; std::getline(ss, m, ',');) {
    if (m.empty()) continue;
    if (!valid.count(m)) {
      throw Error(ErrorKind::invalid_config, "--metrics: unknown metric '" + m + "' (valid: mota, idf1)");
    }
    if (std::find(wanted.begin(), wanted.end(), m) == wanted.end()) wanted.push_back(m);
  }
  if (wanted.empty()) throw Error(ErrorKind::invalid_config, "--metrics: empty (valid: mota, idf1)");
  if (!(a.iou_threshold > 0.0 && a.iou_threshold <= 1.0)) {
    throw Error(ErrorKind::invalid_config, "--iou-threshold must be in (0, 1]");
  }
  const SequenceMeta meta = meta_for(a.meta, a.gt);
  const auto gt = load_mot(a.gt, meta, false);
  const auto res = load_mot(a.res, meta, false);

  json report{{"gt", a.gt}, {"res", a.res}, {"iou_threshold", a.iou_threshold}};
  std::vector<std::string> header{"metric", "value"};
  std::vector<std::vector<std::string>> rows;
  for (const std::string& m : wanted) {
    if (m == "mota") {
      const MotaReport r = mota(gt, res, a.iou_threshold);
      report["mota"] = to_json(r);
      rows.push_back({"MOTA", fixed(r.mota(), 4)});
      rows.push_back({"FP", std::to_string(r.fp)});
      rows.push_back({"FN", std::to_string(r.fn)});
      rows.push_back({"IDSW", std::to_string(r.idsw)});
      rows.push_back({"GT", std::to_string(r.gt)});
    } else {
      const Idf1Report r = idf1(gt, res, a.iou_threshold);
      report["idf1"] = to_json(r);
      rows.push_back({"IDF1", fixed(r.idf1(), 4)});
      rows.push_back({"IDTP", std::to_string(r.idtp)});
      rows.push_back({"IDFP", std::to_string(r.idfp)});
      rows.push_back({"IDFN", std::to_string(r.idfn)});
    }
  }
  if (!a.out.empty()) write_json(a.out, report);
  std::cout << format_table(header, rows);
}

struct DiagArgs {
  std::vector<std::string> gt;
  std::string meta, config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> burn_in;
  PredictorArgs predictor;
};

void cmd_diag(const DiagArgs& a) {
  RunConfig c = load_run_config(a.config);
  if (a.seed) c.seed = *a.seed;
  if (a.burn_in) c.burn_in = *a.burn_in;
  if (c.burn_in < 0) config_error("diag.burn_in", "must be >= 0");
  apply(a.predictor, c);
  if (a.gt.empty()) throw Error(ErrorKind::invalid_input, "--gt is required");

  // Each --gt argument is one corpus: a MOT file or a directory of
  // sequence directories holding gt.txt.
  struct Corpus {
    std::string name;
    std::vector<std::vector<Trajectory>> sequences;
  };
  std::vector<Corpus> corpora;
  for (const std::string& path : a.gt) {
    Corpus corpus{path, {}};
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
      if (fs::is_regular_file(fs::path(path) / "gt.txt")) {
        files.push_back(fs::path(path) / "gt.txt");
      } else {
        for (const auto& entry : fs::directory_iterator(path)) {
          if (fs::is_regular_file(entry.path() / "gt.txt")) files.push_back(entry.path() / "gt.txt");
        }
        std::sort(files.begin(), files.end());
      }
      if (files.empty()) throw Error(ErrorKind::io, "no gt.txt found under '" + path + "'");
    } else {
      files.push_back(path);
    }
    for (const fs::path& f : files) {
      const SequenceMeta meta = meta_for(a.meta, f);
      corpus.sequences.push_back(group_trajectories(load_mot(f.string(), meta, true)));
    }
    corpora.push_back(std::move(corpus));
  }
  std::optional<LoadedModel> model;
  if (c.predictor.kind == PredictorKind::d2mp) model = load_model_file(a.predictor.model);

  json report{{"predictor", predictor_json(c.predictor)},
              {"seed", c.seed},
              {"burn_in", c.burn_in},
              {"corpora", json::array()}};
  std::vector<std::vector<std::string>> rows;
  for (const Corpus& corpus : corpora) {
    // A fresh predictor per corpus keeps rows independent of argument order.
    auto predictor = make_predictor(c.predictor, model);
    const DiagReport r = predictor_iou_diagnostic(corpus.sequences, *predictor, {c.burn_in, c.seed});
    json entry = to_json(r);
    entry["corpus"] = corpus.name;
    report["corpora"].push_back(entry);
    rows.push_back({corpus.name, to_string(c.predictor.kind), fixed(r.mean, 4), std::to_string(r.count)});
  }
  if (!a.out.empty()) write_json(a.out, report);
  std::cout << format_table({"corpus", "predictor", "mean_iou", "count"}, rows);
}

struct VizArgs {
  std::string res, meta, out;
};

std::string id_color(std::size_t k, std::size_t n) {
  // Evenly spaced hues; distinct for every id in the file.
  const double hue = 360.0 * static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(n, 1));
  const double s = 0.75, l = 0.45;
  const double chroma = (1.0 - std::abs(2.0 * l - 1.0)) * s;
  const double hp = hue / 60.0;
  const double x = chroma * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = chroma; g = x; }
  else if (hp < 2) { r = x; g = chroma; }
  else if (hp < 3) { g = chroma; b = x; }
  else if (hp < 4) { g = x; b = chroma; }
  else if (hp < 5) { r = x; b = chroma; }
  else { r = chroma; b = x; }
  const double m = l - chroma / 2.0;
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(std::lround(255 * (r + m))),
                static_cast<int>(std::lround(255 * (g + m))), static_cast<int>(std::lround(255 * (b + m))));
  return buf;
}

void cmd_viz(const VizArgs& a) {
  if (a.out.empty()) throw Error(ErrorKind::invalid_input, "--out is required");
  const SequenceMeta meta = load_meta(a.meta);
  const auto records = load_mot(a.res, meta, false);
  const auto trajectories = group_trajectories(records);

  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(meta.width) +
         "\" height=\"" + std::to_string(meta.height) + "\" viewBox=\"0 0 " +
         std::to_string(meta.width) + " " + std::to_string(meta.height) + "\">\n";
  svg += "  <rect x=\"0\" y=\"0\" width=\"" + std::to_string(meta.width) + "\" height=\"" +
         std::to_string(meta.height) + "\" fill=\"white\"/>\n";
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const Trajectory& t = trajectories[k];
    svg += "  <polyline data-id=\"" + std::to_string(t.id) + "\" fill=\"none\" stroke=\"" +
           id_color(k, trajectories.size()) + "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < t.boxes.size(); ++i) {
      if (i > 0) svg += ' ';
      svg += fixed(t.boxes[i].cx(), 2) + "," + fixed(t.boxes[i].cy(), 2);
    }
    svg += "\"/>\n";
  }
  svg += "</svg>\n";
  write_file(a.out, svg);
}

void add_predictor_flags(CLI::App* cmd, PredictorArgs& p) {
  cmd->add_option("--predictor", p.kind, "d2mp | kf | cv");
  cmd->add_option("--model", p.model, "model file for d2mp");
  cmd->add_option("--sampling-steps", p.sampling_steps, "reverse steps for d2mp (1 = one-step)");
  cmd->add_flag("--deterministic", p.deterministic, "suppress sampling noise in multi-step mode");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nlmot: tracking-by-detection with a diffusion motion predictor"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic sequence");
  s->add_option("--spec", synth.spec, "JSON scene spec");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--seed", synth.seed, "random seed")->capture_default_str();

  TrainArgs train_args;
  auto* t = app.add_subcommand("train", "train a motion model on ground-truth trajectories");
  t->add_option("--data", train_args.data, "sequence directories with gt.txt and meta.json")->required();
  t->add_option("--config", train_args.config, "JSON run config");
  t->add_option("--out", train_args.out, "output directory")->required();
  t->add_option("--seed", train_args.seed, "random seed");
  t->add_option("--steps", train_args.steps);
  t->add_option("--batch-size", train_args.batch_size);
  t->add_option("--lr", train_args.learning_rate);
  t->add_flag("--cosine", train_args.cosine, "cosine learning-rate decay");
  t->add_option("--token-dim", train_args.token_dim);
  t->add_option("--history", train_args.history);
  t->add_option("--variant", train_args.variant, "OB | TB");
  t->add_option("--condition", train_args.condition, "B | M | I");

  TrackArgs track;
  auto* k = app.add_subcommand("track", "track a detection file");
  k->add_option("--detections", track.detections, "MOT detection file")->required();
  k->add_option("--meta", track.meta, "sequence meta JSON")->required();
  k->add_option("--config", track.config, "JSON run config");
  k->add_option("--seed", track.seed, "random seed");
  k->add_option("--out", track.out, "output directory")->required();
  add_predictor_flags(k, track.predictor);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "score a result file against ground truth");
  e->add_option("--gt", eval.gt, "ground-truth MOT file")->required();
  e->add_option("--res", eval.res, "result MOT file")->required();
  e->add_option("--meta", eval.meta, "sequence meta JSON");
  e->add_option("--metrics", eval.metrics, "comma-separated: mota,idf1")->capture_default_str();
  e->add_option("--iou-threshold", eval.iou_threshold)->capture_default_str();
  e->add_option("--out", eval.out, "JSON report path");

  DiagArgs diag;
  auto* d = app.add_subcommand("diag", "one-frame-ahead predictor IoU per corpus");
  d->add_option("--gt", diag.gt, "MOT file or directory of sequences; repeat per corpus")->required();
  d->add_option("--meta", diag.meta, "sequence meta JSON (default: meta.json beside each gt)");
  d->add_option("--config", diag.config, "JSON run config");
  d->add_option("--seed", diag.seed, "random seed");
  d->add_option("--burn-in", diag.burn_in, "unscored leading predictions per trajectory");
  d->add_option("--out", diag.out, "JSON report path");
  add_predictor_flags(d, diag.predictor);

  VizArgs viz;
  auto* v = app.add_subcommand("viz", "render result trajectories to SVG");
  v->add_option("--res", viz.res, "result MOT file")->required();
  v->add_option("--meta", viz.meta, "sequence meta JSON")->required();
  v->add_option("--out", viz.out, "SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::string msg = ex.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: usage: " << msg << "\n";
    return 2;
  }

  try {
    if (*s) cmd_synth(synth);
    if (*t) cmd_train(train_args);
    if (*k) cmd_track(track);
    if (*e) cmd_eval(eval);
    if (*d) cmd_diag(diag);
    if (*v) cmd_viz(viz);
  } catch (const Error& ex) {
    std::string msg = ex.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << ex.category() << ": " << msg << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: internal: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
