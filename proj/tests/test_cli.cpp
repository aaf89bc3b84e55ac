#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <regex>
#include <set>
#include <sstream>

#include "nlmot/data_io.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;
using nlmot::read_file;
using nlmot::write_file;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run nlmot_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(NLMOT_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

std::string dir_bytes(const fs::path& dir) {
  std::string all;
  std::set<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.insert(e.path());
  for (const auto& f : files) all += f.filename().string() + "\n" + read_file(f);
  return all;
}

}  // namespace

TEST_CASE("synth writes the scene and is deterministic") {
  const fs::path d = testing::scratch_dir("cli_synth");
  REQUIRE(nlmot_cli("synth --out " + (d / "a").string() + " --seed 5", d).code == 0);
  REQUIRE(nlmot_cli("synth --out " + (d / "b").string() + " --seed 5", d).code == 0);
  CHECK(dir_bytes(d / "a") == dir_bytes(d / "b"));
  CHECK(count_lines(read_file(d / "a" / "gt.txt")) == 600);
  CHECK(fs::exists(d / "a" / "det.txt"));
  CHECK(fs::exists(d / "a" / "meta.json"));
  CHECK(nlmot::sequence_meta_from_json(nlohmann::json::parse(read_file(d / "a" / "meta.json"))).frame_count == 200);

  write_file(d / "bad.json", R"({"objects": 3, "noise": {"drop_probability": 2}})");
  Run bad = nlmot_cli("synth --spec " + (d / "bad.json").string() + " --out " + (d / "c").string(), d);
  CHECK(bad.code != 0);
  CHECK(bad.err.find("error: invalid-config") == 0);
  CHECK(bad.err.find("drop_probability") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "c"));
}

TEST_CASE("train, track and eval") {
  const fs::path d = testing::scratch_dir("cli_pipeline");
  write_file(d / "spec.json", R"({"objects": 3, "frame_count": 60, "programs": ["linear"]})");
  REQUIRE(nlmot_cli("synth --spec " + (d / "spec.json").string() + " --out " + (d / "seq").string(), d).code == 0);

  const std::string train = "train --data " + (d / "seq").string() +
                            " --steps 150 --batch-size 32 --token-dim 16 --lr 1e-3 --seed 2 --out ";
  REQUIRE(nlmot_cli(train + (d / "m1").string(), d).code == 0);
  REQUIRE(nlmot_cli(train + (d / "m2").string(), d).code == 0);
  CHECK(dir_bytes(d / "m1") == dir_bytes(d / "m2"));
  const std::string loss = read_file(d / "m1" / "loss.csv");
  CHECK(loss.rfind("step,loss\n", 0) == 0);
  CHECK(count_lines(loss) == 151);
  const std::string last = loss.substr(loss.rfind(',', loss.size() - 2) + 1);
  CHECK(std::stod(last) < 0.01);

  Run missing = nlmot_cli("train --data " + (d / "nowhere").string() + " --out " + (d / "m3").string(), d);
  CHECK(missing.code != 0);
  CHECK_FALSE(fs::exists(d / "m3"));

  const std::string seq = (d / "seq").string();
  for (const std::string p : {"kf", "cv", "d2mp"}) {
    const std::string model = p == "d2mp" ? " --model " + (d / "m1" / "model.d2mp").string() : "";
    const std::string track = "track --detections " + seq + "/det.txt --meta " + seq + "/meta.json --seed 4 --predictor " +
                              p + model + " --out ";
    REQUIRE(nlmot_cli(track + (d / ("t_" + p)).string(), d).code == 0);
    REQUIRE(nlmot_cli(track + (d / ("u_" + p)).string(), d).code == 0);
    CHECK(dir_bytes(d / ("t_" + p)) == dir_bytes(d / ("u_" + p)));

    const fs::path report = d / ("eval_" + p + ".json");
    Run e = nlmot_cli("eval --gt " + seq + "/gt.txt --res " + (d / ("t_" + p) / "result.txt").string() +
                          " --meta " + seq + "/meta.json --out " + report.string(),
                      d);
    REQUIRE(e.code == 0);
    const auto j = nlohmann::json::parse(read_file(report));
    CHECK(j["mota"]["MOTA"] == 1.0);
    CHECK(j["idf1"]["IDF1"] == 1.0);
    CHECK(e.out.find("IDF1") != std::string::npos);
  }

  Run no_model = nlmot_cli("track --detections " + seq + "/det.txt --meta " + seq + "/meta.json --predictor d2mp --out " +
                               (d / "t_none").string(),
                           d);
  CHECK(no_model.code != 0);
  CHECK(no_model.err.find("error: invalid-config") == 0);
  CHECK_FALSE(fs::exists(d / "t_none"));

  Run bad_metric = nlmot_cli("eval --gt " + seq + "/gt.txt --res " + seq + "/gt.txt --metrics mota,hota", d);
  CHECK(bad_metric.code != 0);
  CHECK(bad_metric.err.find("mota") != std::string::npos);
  CHECK(bad_metric.err.find("idf1") != std::string::npos);

  // Disjoint id spaces, arguments swapped: scores drop, nothing crashes.
  std::string shifted;
  std::istringstream lines(read_file(seq + "/gt.txt"));
  for (std::string line; std::getline(lines, line);) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    shifted += line.substr(0, a + 1) + std::to_string(100 + std::stoi(line.substr(a + 1, b - a - 1))) + line.substr(b) + "\n";
  }
  std::string half;
  std::istringstream hl(shifted);
  int i = 0;
  for (std::string line; std::getline(hl, line); ++i) {
    if (i % 2 == 0) half += line + "\n";
  }
  write_file(d / "half.txt", half);
  Run swapped = nlmot_cli("eval --res " + seq + "/gt.txt --gt " + (d / "half.txt").string() + " --out " +
                              (d / "swapped.json").string(),
                          d);
  REQUIRE(swapped.code == 0);
  const auto s = nlohmann::json::parse(read_file(d / "swapped.json"));
  CHECK(s["mota"]["MOTA"] < 1.0);
  CHECK(s["idf1"]["IDF1"] < 1.0);
}

TEST_CASE("diag emits one row per corpus") {
  const fs::path d = testing::scratch_dir("cli_diag");
  write_file(d / "lin.json", R"({"objects": 4, "frame_count": 80, "programs": ["linear"]})");
  write_file(d / "sin.json", R"({"objects": 4, "frame_count": 80, "programs": ["sinusoidal"]})");
  REQUIRE(nlmot_cli("synth --spec " + (d / "lin.json").string() + " --out " + (d / "lin").string(), d).code == 0);
  REQUIRE(nlmot_cli("synth --spec " + (d / "sin.json").string() + " --out " + (d / "sin").string(), d).code == 0);
  Run r = nlmot_cli("diag --gt " + (d / "lin").string() + " --gt " + (d / "sin" / "gt.txt").string() +
                        " --predictor kf --burn-in 5 --out " + (d / "diag.json").string(),
                    d);
  REQUIRE(r.code == 0);
  CHECK(count_lines(r.out) == 3);
  const auto j = nlohmann::json::parse(read_file(d / "diag.json"));
  MESSAGE(j.dump());
  REQUIRE(j["corpora"].size() == 2);
  CHECK(j["corpora"][0]["mean_iou"] >= 0.99);
  CHECK(j["corpora"][1]["mean_iou"] < j["corpora"][0]["mean_iou"]);

  Run no_model = nlmot_cli("diag --gt " + (d / "lin").string() + " --predictor d2mp", d);
  CHECK(no_model.code != 0);
}

TEST_CASE("viz draws one polyline per id") {
  const fs::path d = testing::scratch_dir("cli_viz");
  write_file(d / "spec.json", R"({"objects": 5, "frame_count": 30})");
  REQUIRE(nlmot_cli("synth --spec " + (d / "spec.json").string() + " --out " + (d / "seq").string(), d).code == 0);
  REQUIRE(nlmot_cli("viz --res " + (d / "seq" / "gt.txt").string() + " --meta " + (d / "seq" / "meta.json").string() +
                        " --out " + (d / "a.svg").string(),
                    d)
              .code == 0);
  const std::string svg = read_file(d / "a.svg");
  const std::regex stroke(R"re(<polyline[^>]*stroke="(#[0-9a-f]{6})")re");
  std::set<std::string> colors;
  std::size_t lines = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), stroke); it != std::sregex_iterator(); ++it) {
    ++lines;
    colors.insert((*it)[1]);
  }
  CHECK(lines == 5);
  CHECK(colors.size() == 5);

  write_file(d / "empty.txt", "");
  REQUIRE(nlmot_cli("viz --res " + (d / "empty.txt").string() + " --meta " + (d / "seq" / "meta.json").string() +
                        " --out " + (d / "empty.svg").string(),
                    d)
              .code == 0);
  const std::string empty = read_file(d / "empty.svg");
  CHECK(empty.find("<svg") != std::string::npos);
  CHECK(empty.find("<polyline") == std::string::npos);

  // Well-formed XML according to an independent parser.
  for (const char* f : {"a.svg", "empty.svg"}) {
    const std::string cmd = "python3 -c \"import sys, xml.dom.minidom; xml.dom.minidom.parse(sys.argv[1])\" " +
                            (d / f).string() + " > /dev/null 2>&1";
    CHECK(std::system(cmd.c_str()) == 0);
  }
}
