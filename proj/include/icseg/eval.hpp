#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icseg/click_simulator.hpp"
#include "icseg/model.hpp"
#include "icseg/trainer.hpp"
#include "json.hpp"

namespace icseg {

enum class Regime { sois, mois_collective, mois_additional };
std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct EvalOptions {
  std::vector<double> targets{0.85, 0.90};
  int max_clicks = 20;
  std::uint64_t seed = 0;
  ClickStrategy strategy = ClickStrategy::mixed;
  /// Collective regime: exemplar clicks stop at this budget or when one click
  /// improves IoU by less than exemplar_min_gain.
  int exemplar_budget = 5;
  double exemplar_min_gain = 0.01;
  int threads = 1;

  void validate() const;
};

/// One object's interaction. ious[k] is the IoU after k + first_click clicks
/// (first_click is 1 for single-object sessions, 0 when an exemplar is given).
struct EvalRecord {
  std::string object_id;
  std::string image_id;
  Regime regime = Regime::sois;
  bool exemplar = false;  ///< the exemplar object of a MOIS sample
  int first_click = 1;
  std::vector<double> ious;
  int clicks_used = 0;
  std::vector<int> noc;        ///< per target; max_clicks on failure
  std::vector<bool> success;   ///< per target
  int exemplar_clicks = 0;     ///< MOIS: clicks spent on the exemplar of this sample
  double exemplar_iou = -1.0;  ///< MOIS: IoU of the frozen exemplar mask

  /// IoU after k clicks, holding the last value after the session stopped.
  double iou_at(int k) const;
  double best_iou_at(int k) const;
};

struct EvalSummary {
  Regime regime = Regime::sois;
  int max_clicks = 20;
  std::vector<double> targets;
  std::size_t n_objects = 0;
  std::size_t n_images = 0;
  std::vector<double> noc;  ///< mean clicks per target
  std::vector<std::size_t> nof;
  std::vector<std::size_t> nofi;
  /// mIoU after k = 1..max_clicks clicks (index k - 1). For MOIS these are
  /// additional clicks over recall objects.
  std::vector<double> miou;
  std::vector<double> miou_best;
  /// MOIS only: all-objects variant (exemplar term included) and k = 0 values.
  std::vector<double> miou_all;
  double miou_0 = -1.0;
  double miou_all_0 = -1.0;
  /// Collective regime: exemplar accounting.
  double mean_exemplar_clicks = 0.0;
  std::size_t exemplars_below_target = 0;
  std::vector<EvalRecord> records;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json to_json(const EvalRecord& r);
EvalRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalSummary& s);
EvalSummary summary_from_json(const nlohmann::json& j);

/// Builds a record from an IoU trajectory (targets checked on raw IoU).
EvalRecord make_record(std::vector<double> ious, int first_click, const EvalOptions& opt);

/// first_click, then next_click on the binarized prediction until every
/// target is reached or max_clicks clicks are used.
EvalRecord predict_with_refinement(const SingleObjectModel& model, const Image& image, const BinaryMask& gt,
                                   const EvalOptions& opt, std::uint64_t seed);

/// Object index owning each pixel (nearest mask, ties to the lower index).
Eigen::ArrayXXi object_cells(const std::vector<BinaryMask>& masks);

EvalSummary evaluate_sois(const SingleObjectModel& model, const std::vector<SoisItem>& items, const EvalOptions& opt);
EvalSummary evaluate_mois_collective(const SingleObjectModel& single, const MultiObjectModel& multi,
                                     const std::vector<MoisItem>& items, const EvalOptions& opt);
EvalSummary evaluate_mois_additional(const MultiObjectModel& multi, const std::vector<MoisItem>& items,
                                     const EvalOptions& opt);

/// Aggregates records into a summary (used by every regime).
EvalSummary summarize(Regime regime, std::vector<EvalRecord> records, const EvalOptions& opt);

inline constexpr const char* kReportSchema = "icseg.eval/1";
/// Writes <dir>/report.json and <dir>/curve.csv (one row per click count).
void emit_report(const EvalSummary& s, const std::string& dir);

}  // namespace icseg
