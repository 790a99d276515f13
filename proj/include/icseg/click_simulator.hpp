#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "icseg/types.hpp"

namespace icseg {

/// Spacing rules for randomly simulated clicks (distances in pixels).
struct SimulationConstraints {
  double min_pair_distance = 40.0;
  double border_margin = 20.0;
  int max_total_clicks = 20;
  /// Negatives are drawn from background pixels whose distance to the object
  /// lies in [border_margin, negative_band].
  double negative_band = 40.0;

  void validate() const;
  /// Scales every distance, e.g. by image_side / 448 for small rasters.
  SimulationConstraints scaled(double factor) const;
};

struct SimulationResult {
  ClickSet clicks;
  /// Final min_pair_distance / requested one (1 when nothing was relaxed).
  double distance_factor = 1.0;
  /// Final border_margin / requested one.
  double margin_factor = 1.0;
  double final_min_pair_distance = 0.0;
  double final_border_margin = 0.0;
};

/// DIOS-style random clicks: positives at k-medoids centers of the mask,
/// negatives in a band around it. Infeasible spacing is relaxed by halving
/// min_pair_distance, then border_margin, until placement succeeds.
SimulationResult random_click_simulation(const BinaryMask& gt, int n_total, const SimulationConstraints& constraints,
                                         std::uint64_t seed);

/// Positive click at the distance-transform argmax of gt (lexicographic tie-break).
Click first_click(const BinaryMask& gt);

enum class ClickStrategy { mixed, center, border };

/// Error-driven click on the largest 4-connected error region. Returns
/// std::nullopt when pred == gt (no error region left).
std::optional<Click> next_click(const BinaryMask& pred, const BinaryMask& gt, const ClickSet& existing,
                                std::uint64_t seed, ClickStrategy strategy = ClickStrategy::mixed);

struct NegativePartition {
  ClickSet pseudo;          ///< negatives inside another object of the exemplar's category
  ClickSet true_negatives;  ///< everything else
};

NegativePartition classify_negative_clicks(const ClickSet& negatives, const BinaryMask& exemplar_mask,
                                           const std::vector<BinaryMask>& same_category_masks);

}  // namespace icseg
