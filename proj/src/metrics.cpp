#include "nlmot/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "nlmot/error.hpp"

namespace nlmot {

using nlohmann::json;

double MotaReport::mota() const {
  if (gt == 0) return fp == 0 ? 1.0 : -static_cast<double>(fp);
  return 1.0 - static_cast<double>(fp + fn + idsw) / static_cast<double>(gt);
}

double Idf1Report::idf1() const {
  const std::int64_t denom = 2 * idtp + idfp + idfn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(idtp) / static_cast<double>(denom);
}

namespace {

std::map<int, std::vector<const MotRecord*>> by_frame(const std::vector<MotRecord>& records) {
  std::map<int, std::vector<const MotRecord*>> out;
  for (const MotRecord& r : records) out[r.frame].push_back(&r);
  return out;
}

}  // namespace

MotaReport mota(const std::vector<MotRecord>& gt, const std::vector<MotRecord>& results,
                double iou_threshold) {
  MotaReport report;
  const auto gt_frames = by_frame(gt);
  const auto res_frames = by_frame(results);
  std::set<int> frames;
  for (const auto& [f, _] : gt_frames) frames.insert(f);
  for (const auto& [f, _] : res_frames) frames.insert(f);

  // Last hypothesis id each GT id was matched to.
  std::map<std::int64_t, std::int64_t> last_match;
  static const std::vector<const MotRecord*> none;
  for (int f : frames) {
    auto git = gt_frames.find(f);
    auto rit = res_frames.find(f);
    const auto& g = git == gt_frames.end() ? none : git->second;
    const auto& h = rit == res_frames.end() ? none : rit->second;
    report.gt += static_cast<std::int64_t>(g.size());

    std::vector<char> g_used(g.size(), 0), h_used(h.size(), 0);
    std::size_t matched = 0;

    // Continuity: keep the previous pairing while it still overlaps enough.
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto prev = last_match.find(g[i]->id);
      if (prev == last_match.end()) continue;
      for (std::size_t j = 0; j < h.size(); ++j) {
        if (h_used[j] || h[j]->id != prev->second) continue;
        if (iou(g[i]->box, h[j]->box) >= iou_threshold) {
          g_used[i] = h_used[j] = 1;
          ++matched;
        }
        break;
      }
    }

    std::vector<std::size_t> gi, hj;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!g_used[i]) gi.push_back(i);
    }
    for (std::size_t j = 0; j < h.size(); ++j) {
      if (!h_used[j]) hj.push_back(j);
    }
    CostMatrix cost;
    cost.cost.resize(static_cast<Index>(gi.size()), static_cast<Index>(hj.size()));
    for (std::size_t a = 0; a < gi.size(); ++a) {
      for (std::size_t b = 0; b < hj.size(); ++b) {
        const double o = iou(g[gi[a]]->box, h[hj[b]]->box);
        cost.cost(static_cast<Index>(a), static_cast<Index>(b)) =
            o >= iou_threshold ? 1.0 - o : CostMatrix::infeasible;
      }
    }
    for (const auto& [a, b] : hungarian(cost).matches) {
      const MotRecord& gr = *g[gi[static_cast<std::size_t>(a)]];
      const MotRecord& hr = *h[hj[static_cast<std::size_t>(b)]];
      auto prev = last_match.find(gr.id);
      if (prev != last_match.end() && prev->second != hr.id) ++report.idsw;
      last_match[gr.id] = hr.id;
      ++matched;
    }
    report.matches += static_cast<std::int64_t>(matched);
    report.fn += static_cast<std::int64_t>(g.size() - matched);
    report.fp += static_cast<std::int64_t>(h.size() - matched);
  }
  return report;
}

Idf1Report idf1(const std::vector<MotRecord>& gt, const std::vector<MotRecord>& results,
                double iou_threshold) {
  std::map<std::int64_t, Index> gt_index, res_index;
  for (const MotRecord& r : gt) gt_index.emplace(r.id, 0);
  for (const MotRecord& r : results) res_index.emplace(r.id, 0);
  Index k = 0;
  for (auto& [_, v] : gt_index) v = k++;
  k = 0;
  for (auto& [_, v] : res_index) v = k++;

  Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(static_cast<Index>(gt_index.size()),
                                                  static_cast<Index>(res_index.size()));
  const auto gt_frames = by_frame(gt);
  const auto res_frames = by_frame(results);
  for (const auto& [f, g] : gt_frames) {
    auto rit = res_frames.find(f);
    if (rit == res_frames.end()) continue;
    for (const MotRecord* a : g) {
      for (const MotRecord* b : rit->second) {
        if (iou(a->box, b->box) >= iou_threshold) overlap(gt_index[a->id], res_index[b->id]) += 1.0;
      }
    }
  }

  Idf1Report report;
  if (overlap.size() > 0) {
    // Every pair is feasible so the assignment maximizes total overlap.
    CostMatrix cost{-overlap};
    for (const auto& [r, c] : hungarian(cost).matches) {
      report.idtp += static_cast<std::int64_t>(overlap(r, c));
    }
  }
  report.idfn = static_cast<std::int64_t>(gt.size()) - report.idtp;
  report.idfp = static_cast<std::int64_t>(results.size()) - report.idtp;
  return report;
}

std::vector<MotRecord> to_mot_records(const std::vector<TrackRecord>& records) {
  std::vector<MotRecord> out;
  out.reserve(records.size());
  for (const TrackRecord& r : records) {
    out.push_back(MotRecord{r.frame, static_cast<std::int64_t>(r.id), r.box, 1.0});
  }
  return out;
}

DiagReport predictor_iou_diagnostic(const std::vector<std::vector<Trajectory>>& sequences,
                                    MotionPredictor& predictor, const DiagConfig& config) {
  if (config.burn_in < 0) throw Error(ErrorKind::invalid_config, "diag.burn_in must be >= 0");
  struct Item {
    const Trajectory* traj;
    std::size_t sequence;
    TrackState state;
  };
  std::vector<Item> items;
  std::size_t longest = 0;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    for (const Trajectory& t : sequences[s]) {
      if (t.boxes.size() < 2) continue;
      Item it{&t, s, {}};
      it.state.id = static_cast<std::uint64_t>(t.id);
      it.state.rng = track_rng(config.seed + 0x9E3779B97F4A7C15ull * s, it.state.id);
      it.state.append(t.frames.empty() ? 1 : t.frames[0], t.boxes[0]);
      predictor.observe(it.state);
      items.push_back(std::move(it));
      longest = std::max(longest, t.boxes.size());
    }
  }

  DiagReport report;
  report.per_sequence.assign(sequences.size(), 0.0);
  report.counts.assign(sequences.size(), 0);
  double total = 0.0;
  std::vector<TrackState*> batch;
  std::vector<Item*> active;
  for (std::size_t i = 1; i < longest; ++i) {
    batch.clear();
    active.clear();
    for (Item& it : items) {
      if (i < it.traj->boxes.size()) {
        batch.push_back(&it.state);
        active.push_back(&it);
      }
    }
    const std::vector<BoundingBox> predicted = predictor.predict(batch);
    for (std::size_t k = 0; k < active.size(); ++k) {
      Item& it = *active[k];
      const BoundingBox& truth = it.traj->boxes[i];
      if (static_cast<int>(i) > config.burn_in) {
        const double o = iou(predicted[k], truth);
        report.per_sequence[it.sequence] += o;
        ++report.counts[it.sequence];
        total += o;
        ++report.count;
      }
      it.state.append(it.traj->frames.empty() ? static_cast<int>(i) + 1 : it.traj->frames[i], truth);
      predictor.observe(it.state);
    }
  }
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    if (report.counts[s] > 0) report.per_sequence[s] /= static_cast<double>(report.counts[s]);
  }
  report.mean = report.count > 0 ? total / static_cast<double>(report.count) : 0.0;
  return report;
}

json to_json(const MotaReport& r) {
  return json{{"MOTA", r.mota()}, {"FP", r.fp}, {"FN", r.fn}, {"IDSW", r.idsw}, {"GT", r.gt}};
}

json to_json(const Idf1Report& r) {
  return json{{"IDF1", r.idf1()}, {"IDTP", r.idtp}, {"IDFP", r.idfp}, {"IDFN", r.idfn}};
}

json to_json(const DiagReport& r) {
  return json{{"mean_iou", r.mean},
              {"count", r.count},
              {"per_sequence", r.per_sequence},
              {"per_sequence_count", r.counts}};
}

std::string format_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) {
      width[c] = std::max(width[c], row[c].size());
    }
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string cell = c < cells.size() ? cells[c] : std::string();
      if (c > 0) out += "  ";
      // First column left-aligned, numbers right-aligned.
      if (c == 0) {
        out += cell + std::string(width[c] - cell.size(), ' ');
      } else {
        out += std::string(width[c] - cell.size(), ' ') + cell;
      }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = line(header);
  for (const auto& row : rows) out += line(row);
  return out;
}

}  // namespace nlmot
