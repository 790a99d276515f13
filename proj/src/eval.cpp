#include "icseg/eval.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "icseg/geometry.hpp"
#include "icseg/morphology.hpp"
#include "icseg/seed.hpp"

namespace icseg {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::sois:
      return "sois";
    case Regime::mois_collective:
      return "mois-collective";
    case Regime::mois_additional:
      return "mois-additional";
  }
  return "sois";
}

Regime regime_from_string(const std::string& s) {
  if (s == "sois") return Regime::sois;
  if (s == "mois-collective") return Regime::mois_collective;
  if (s == "mois-additional") return Regime::mois_additional;
  throw std::invalid_argument("unknown regime '" + s + "'");
}

void EvalOptions::validate() const {
  if (targets.empty()) throw std::invalid_argument("at least one IoU target is required");
  for (double t : targets)
    if (!(t > 0 && t <= 1)) throw std::invalid_argument("IoU targets must be in (0, 1]");
  if (max_clicks < 1) throw std::invalid_argument("max_clicks must be >= 1");
  if (exemplar_budget < 1) throw std::invalid_argument("exemplar_budget must be >= 1");
  if (!(exemplar_min_gain >= 0)) throw std::invalid_argument("exemplar_min_gain must be >= 0");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

double EvalRecord::iou_at(int k) const {
  const int i = k - first_click;
  if (i < 0 || ious.empty()) return 0.0;
  return ious[std::min<std::size_t>(i, ious.size() - 1)];
}

double EvalRecord::best_iou_at(int k) const {
  const int i = k - first_click;
  if (i < 0 || ious.empty()) return 0.0;
  const auto end = ious.begin() + std::min<std::size_t>(i, ious.size() - 1) + 1;
  return *std::max_element(ious.begin(), end);
}

EvalRecord make_record(std::vector<double> ious, int first_click, const EvalOptions& opt) {
  EvalRecord r;
  r.first_click = first_click;
  r.ious = std::move(ious);
  r.clicks_used = r.ious.empty() ? 0 : first_click + static_cast<int>(r.ious.size()) - 1;
  for (double t : opt.targets) {
    int noc = opt.max_clicks;
    bool ok = false;
    for (std::size_t i = 0; i < r.ious.size(); ++i)
      if (r.ious[i] >= t && first_click + static_cast<int>(i) <= opt.max_clicks) {
        noc = first_click + static_cast<int>(i);
        ok = true;
        break;
      }
    r.noc.push_back(noc);
    r.success.push_back(ok);
  }
  return r;
}

namespace {

bool all_reached(double iou_value, const EvalOptions& opt) {
  return iou_value >= *std::max_element(opt.targets.begin(), opt.targets.end());
}

void add_click(ClickSet& clicks, const Click& c) { push_click(clicks, c.row, c.col, c.polarity); }

BinaryMask restrict_to(const BinaryMask& m, const Eigen::ArrayXXi& cells, int object) {
  BinaryMask out = m;
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out(r, c) = m(r, c) && cells(r, c) == object;
  return out;
}

// Additional-click session for one recall object of a frozen exemplar.
EvalRecord multi_session(const MultiObjectModel& multi, const Image& image, const ExemplarTarget& exemplar,
                         const BinaryMask& gt, const Eigen::ArrayXXi& cells, int object, const EvalOptions& opt,
                         std::uint64_t seed) {
  ClickSet clicks;
  BinaryMask prev = empty_mask(shape_of(gt));
  std::vector<double> ious;
  for (;;) {
    const BinaryMask pred = binarize(multi.predict(image, clicks, prev, exemplar));
    const BinaryMask own = restrict_to(pred, cells, object);
    ious.push_back(iou(own, gt));
    if (all_reached(ious.back(), opt) || static_cast<int>(clicks.size()) >= opt.max_clicks) break;
    const auto c = next_click(own, gt, clicks, derive_seed({seed, clicks.size()}), opt.strategy);
    if (!c) break;
    add_click(clicks, *c);
    prev = pred;
  }
  return make_record(std::move(ious), 0, opt);
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::vector<EvalRecord> flatten(std::vector<std::vector<EvalRecord>> parts) {
  std::vector<EvalRecord> out;
  for (auto& p : parts)
    for (auto& r : p) out.push_back(std::move(r));
  return out;
}

}  // namespace

EvalRecord predict_with_refinement(const SingleObjectModel& model, const Image& image, const BinaryMask& gt,
                                   const EvalOptions& opt, std::uint64_t seed) {
  if (!gt.any()) throw std::invalid_argument("predict_with_refinement: empty ground truth");
  ClickSet clicks;
  add_click(clicks, first_click(gt));
  BinaryMask prev = empty_mask(shape_of(gt));
  std::vector<double> ious;
  for (;;) {
    const BinaryMask pred = binarize(model.predict(image, clicks, prev));
    ious.push_back(iou(pred, gt));
    if (all_reached(ious.back(), opt) || static_cast<int>(clicks.size()) >= opt.max_clicks) break;
    const auto c = next_click(pred, gt, clicks, derive_seed({seed, clicks.size()}), opt.strategy);
    if (!c) break;
    add_click(clicks, *c);
    prev = pred;
  }
  return make_record(std::move(ious), 1, opt);
}

Eigen::ArrayXXi object_cells(const std::vector<BinaryMask>& masks) {
  if (masks.empty()) throw std::invalid_argument("object_cells: no masks");
  const Eigen::Index h = masks[0].rows(), w = masks[0].cols();
  Eigen::ArrayXXi cells = Eigen::ArrayXXi::Zero(h, w);
  Eigen::ArrayXXd best = Eigen::ArrayXXd::Constant(h, w, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].rows() != h || masks[i].cols() != w) throw std::invalid_argument("object_cells: mask shapes differ");
    const Eigen::ArrayXXd d = distance_to_mask(masks[i]);
    for (Eigen::Index r = 0; r < h; ++r)
      for (Eigen::Index c = 0; c < w; ++c)
        if (d(r, c) < best(r, c)) {
          best(r, c) = d(r, c);
          cells(r, c) = static_cast<int>(i);
        }
  }
  return cells;
}

EvalSummary evaluate_sois(const SingleObjectModel& model, const std::vector<SoisItem>& items, const EvalOptions& opt) {
  opt.validate();
  std::vector<std::vector<EvalRecord>> parts(items.size());
  parallel_for(items.size(), opt.threads, [&](std::size_t i) {
    const auto& it = items[i];
    if (!it.gt.any()) return;
    EvalRecord r = predict_with_refinement(model, *it.image, it.gt, opt, derive_seed({opt.seed, i}));
    r.object_id = it.id;
    r.image_id = it.image_id.empty() ? it.id : it.image_id;
    r.regime = Regime::sois;
    parts[i].push_back(std::move(r));
  });
  return summarize(Regime::sois, flatten(std::move(parts)), opt);
}

EvalSummary evaluate_mois_collective(const SingleObjectModel& single, const MultiObjectModel& multi,
                                     const std::vector<MoisItem>& items, const EvalOptions& opt) {
  opt.validate();
  std::vector<std::vector<EvalRecord>> parts(items.size());
  parallel_for(items.size(), opt.threads, [&](std::size_t i) {
    const auto& it = items[i];
    const int ex = it.exemplar_index;
    if (ex < 0 || ex >= static_cast<int>(it.masks.size())) throw std::invalid_argument(it.id + ": bad exemplar index");
    const BinaryMask& ex_gt = it.masks[ex];
    const std::string image_id = it.image_id.empty() ? it.id : it.image_id;
    // exemplar object: single-object clicks under the budget rule
    ClickSet clicks;
    add_click(clicks, first_click(ex_gt));
    BinaryMask prev = empty_mask(shape_of(ex_gt));
    BinaryMask pred;
    std::vector<double> ious;
    for (;;) {
      pred = binarize(single.predict(*it.image, clicks, prev));
      ious.push_back(iou(pred, ex_gt));
      const int n = static_cast<int>(clicks.size());
      if (all_reached(ious.back(), opt) || n >= opt.exemplar_budget) break;
      if (n >= 2 && ious[n - 1] - ious[n - 2] < opt.exemplar_min_gain) break;
      const auto c = next_click(pred, ex_gt, clicks, derive_seed({opt.seed, i, 0xe0, clicks.size()}), opt.strategy);
      if (!c) break;
      add_click(clicks, *c);
      prev = pred;
    }
    BinaryMask frozen = pred;
    if (!frozen.any()) frozen(clicks.front().row, clicks.front().col) = true;
    ExemplarTarget target(frozen, clicks);
    target.freeze();

    EvalRecord er = make_record(ious, 1, opt);
    er.object_id = it.id + "#" + std::to_string(ex);
    er.image_id = image_id;
    er.regime = Regime::mois_collective;
    er.exemplar = true;
    er.exemplar_clicks = static_cast<int>(clicks.size());
    er.exemplar_iou = iou(frozen, ex_gt);
    const Eigen::ArrayXXi cells = object_cells(it.masks);
    for (int o = 0; o < static_cast<int>(it.masks.size()); ++o) {
      if (o == ex) {
        parts[i].push_back(er);
        continue;
      }
      EvalRecord r = multi_session(multi, *it.image, target, it.masks[o], cells, o, opt, derive_seed({opt.seed, i, std::uint64_t(o)}));
      r.object_id = it.id + "#" + std::to_string(o);
      r.image_id = image_id;
      r.regime = Regime::mois_collective;
      r.exemplar_clicks = er.exemplar_clicks;
      r.exemplar_iou = er.exemplar_iou;
      parts[i].push_back(std::move(r));
    }
  });
  return summarize(Regime::mois_collective, flatten(std::move(parts)), opt);
}

EvalSummary evaluate_mois_additional(const MultiObjectModel& multi, const std::vector<MoisItem>& items,
                                     const EvalOptions& opt) {
  opt.validate();
  std::vector<std::vector<EvalRecord>> parts(items.size());
  parallel_for(items.size(), opt.threads, [&](std::size_t i) {
    const auto& it = items[i];
    const int ex = it.exemplar_index;
    if (ex < 0 || ex >= static_cast<int>(it.masks.size()) || !it.masks[ex].any() || it.exemplar_clicks.empty())
      throw std::invalid_argument(it.id + ": sample has no golden exemplar");
    const std::string image_id = it.image_id.empty() ? it.id : it.image_id;
    ExemplarTarget target(it.masks[ex], it.exemplar_clicks);
    target.freeze();
    const Eigen::ArrayXXi cells = object_cells(it.masks);
    for (int o = 0; o < static_cast<int>(it.masks.size()); ++o) {
      EvalRecord r;
      if (o == ex) {
        r = make_record({iou(target.mask(), it.masks[ex])}, 0, opt);
        r.exemplar = true;
      } else {
        r = multi_session(multi, *it.image, target, it.masks[o], cells, o, opt, derive_seed({opt.seed, i, std::uint64_t(o)}));
      }
      r.object_id = it.id + "#" + std::to_string(o);
      r.image_id = image_id;
      r.regime = Regime::mois_additional;
      r.exemplar_clicks = 0;
      r.exemplar_iou = 1.0;
      parts[i].push_back(std::move(r));
    }
  });
  return summarize(Regime::mois_additional, flatten(std::move(parts)), opt);
}

EvalSummary summarize(Regime regime, std::vector<EvalRecord> records, const EvalOptions& opt) {
  EvalSummary s;
  s.regime = regime;
  s.max_clicks = opt.max_clicks;
  s.targets = opt.targets;
  const std::size_t nt = opt.targets.size();
  s.noc.assign(nt, 0.0);
  s.nof.assign(nt, 0);
  s.nofi.assign(nt, 0);
  s.miou.assign(opt.max_clicks, 0.0);
  s.miou_best.assign(opt.max_clicks, 0.0);
  const bool mois = regime != Regime::sois;
  // the additional regime scores recall objects only; the exemplar is given
  auto counted = [&](const EvalRecord& r) { return !(regime == Regime::mois_additional && r.exemplar); };
  auto curve = [&](const EvalRecord& r) { return !(mois && r.exemplar); };

  std::map<std::string, std::vector<bool>> failed_images;
  std::set<std::string> images;
  std::size_t n_counted = 0, n_curve = 0, n_exemplars = 0;
  double ex_clicks = 0;
  for (const auto& r : records) {
    images.insert(r.image_id);
    auto& f = failed_images[r.image_id];
    f.resize(nt, false);
    if (counted(r)) {
      ++n_counted;
      for (std::size_t t = 0; t < nt; ++t) {
        s.noc[t] += r.noc[t];
        if (!r.success[t]) {
          ++s.nof[t];
          f[t] = true;
        }
      }
    }
    if (curve(r)) {
      ++n_curve;
      for (int k = 1; k <= opt.max_clicks; ++k) {
        s.miou[k - 1] += r.iou_at(k);
        s.miou_best[k - 1] += r.best_iou_at(k);
      }
    }
    if (r.exemplar) {
      ++n_exemplars;
      ex_clicks += r.exemplar_clicks;
      if (regime == Regime::mois_collective &&
          r.exemplar_iou < *std::min_element(opt.targets.begin(), opt.targets.end()))
        ++s.exemplars_below_target;
    }
  }
  s.n_objects = n_counted;
  s.n_images = images.size();
  for (std::size_t t = 0; t < nt; ++t) {
    if (n_counted) s.noc[t] /= static_cast<double>(n_counted);
    for (const auto& [id, f] : failed_images)
      if (f[t]) ++s.nofi[t];
  }
  if (n_curve)
    for (int k = 0; k < opt.max_clicks; ++k) {
      s.miou[k] /= static_cast<double>(n_curve);
      s.miou_best[k] /= static_cast<double>(n_curve);
    }
  if (mois) {
    s.mean_exemplar_clicks = n_exemplars ? ex_clicks / static_cast<double>(n_exemplars) : 0.0;
    s.miou_all.assign(opt.max_clicks, 0.0);
    double m0 = 0, a0 = 0;
    for (const auto& r : records) {
      const double e = r.exemplar ? r.exemplar_iou : 0.0;
      if (!r.exemplar) m0 += r.iou_at(0);
      a0 += r.exemplar ? e : r.iou_at(0);
      for (int k = 1; k <= opt.max_clicks; ++k) s.miou_all[k - 1] += r.exemplar ? e : r.iou_at(k);
    }
    s.miou_0 = n_curve ? m0 / static_cast<double>(n_curve) : 0.0;
    s.miou_all_0 = records.empty() ? 0.0 : a0 / static_cast<double>(records.size());
    if (!records.empty())
      for (auto& v : s.miou_all) v /= static_cast<double>(records.size());
  }
  s.metadata = {{"schema", kReportSchema},
                {"regime", to_string(regime)},
                {"seed", opt.seed},
                {"click_strategy", opt.strategy == ClickStrategy::mixed    ? "mixed"
                                   : opt.strategy == ClickStrategy::center ? "center"
                                                                           : "border"},
                {"noc_normalization", "per-object mean"},
                {"failure_noc", opt.max_clicks}};
  if (mois) {
    s.metadata["miou_headline"] = "recall-only";
    s.metadata["object_iou"] = "prediction restricted to the pixels nearest each object";
  }
  if (regime == Regime::mois_collective) {
    s.metadata["exemplar_budget"] = opt.exemplar_budget;
    s.metadata["exemplar_min_gain"] = opt.exemplar_min_gain;
    s.metadata["exemplar_click_accounting"] = "exemplar object only";
  }
  s.records = std::move(records);
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const EvalRecord& r) {
  std::vector<int> success(r.success.begin(), r.success.end());
  return {{"object_id", r.object_id},       {"image_id", r.image_id},
          {"regime", to_string(r.regime)},  {"exemplar", r.exemplar},
          {"first_click", r.first_click},   {"ious", r.ious},
          {"clicks_used", r.clicks_used},   {"noc", r.noc},
          {"success", success},             {"exemplar_clicks", r.exemplar_clicks},
          {"exemplar_iou", r.exemplar_iou}};
}

EvalRecord record_from_json(const nlohmann::json& j) {
  EvalRecord r;
  j.at("object_id").get_to(r.object_id);
  j.at("image_id").get_to(r.image_id);
  r.regime = regime_from_string(j.at("regime").get<std::string>());
  j.at("exemplar").get_to(r.exemplar);
  j.at("first_click").get_to(r.first_click);
  j.at("ious").get_to(r.ious);
  j.at("clicks_used").get_to(r.clicks_used);
  j.at("noc").get_to(r.noc);
  for (int v : j.at("success").get<std::vector<int>>()) r.success.push_back(v != 0);
  j.at("exemplar_clicks").get_to(r.exemplar_clicks);
  j.at("exemplar_iou").get_to(r.exemplar_iou);
  return r;
}

nlohmann::json to_json(const EvalSummary& s) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : s.records) records.push_back(to_json(r));
  return {{"schema", kReportSchema},
          {"regime", to_string(s.regime)},
          {"max_clicks", s.max_clicks},
          {"targets", s.targets},
          {"n_objects", s.n_objects},
          {"n_images", s.n_images},
          {"noc", s.noc},
          {"nof", s.nof},
          {"nofi", s.nofi},
          {"miou", s.miou},
          {"miou_best", s.miou_best},
          {"miou_all", s.miou_all},
          {"miou_0", s.miou_0},
          {"miou_all_0", s.miou_all_0},
          {"mean_exemplar_clicks", s.mean_exemplar_clicks},
          {"exemplars_below_target", s.exemplars_below_target},
          {"metadata", s.metadata},
          {"records", records}};
}

EvalSummary summary_from_json(const nlohmann::json& j) {
  if (j.at("schema").get<std::string>() != kReportSchema)
    throw std::invalid_argument("unsupported report schema " + j.at("schema").dump());
  EvalSummary s;
  s.regime = regime_from_string(j.at("regime").get<std::string>());
  j.at("max_clicks").get_to(s.max_clicks);
  j.at("targets").get_to(s.targets);
  j.at("n_objects").get_to(s.n_objects);
  j.at("n_images").get_to(s.n_images);
  j.at("noc").get_to(s.noc);
  j.at("nof").get_to(s.nof);
  j.at("nofi").get_to(s.nofi);
  j.at("miou").get_to(s.miou);
  j.at("miou_best").get_to(s.miou_best);
  j.at("miou_all").get_to(s.miou_all);
  j.at("miou_0").get_to(s.miou_0);
  j.at("miou_all_0").get_to(s.miou_all_0);
  j.at("mean_exemplar_clicks").get_to(s.mean_exemplar_clicks);
  j.at("exemplars_below_target").get_to(s.exemplars_below_target);
  s.metadata = j.at("metadata");
  for (const auto& r : j.at("records")) s.records.push_back(record_from_json(r));
  return s;
}

void emit_report(const EvalSummary& s, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create report directory " + dir + ": " + ec.message());
  {
    std::ofstream out(fs::path(dir) / "report.json");
    out << to_json(s).dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write " + (fs::path(dir) / "report.json").string());
  }
  std::ofstream csv(fs::path(dir) / "curve.csv");
  csv << "clicks,miou,miou_best,miou_all\n";
  for (int k = 1; k <= s.max_clicks; ++k) {
    csv << k << "," << s.miou.at(k - 1) << "," << s.miou_best.at(k - 1) << ",";
    if (!s.miou_all.empty()) csv << s.miou_all.at(k - 1);
    csv << "\n";
  }
  if (!csv) throw std::runtime_error("cannot write " + (fs::path(dir) / "curve.csv").string());
}

}  // namespace icseg
