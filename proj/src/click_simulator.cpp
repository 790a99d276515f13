#include "icseg/click_simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "icseg/morphology.hpp"

namespace icseg {

void SimulationConstraints::validate() const {
  if (!(min_pair_distance > 0) || !(border_margin > 0) || !(negative_band > 0) || max_total_clicks < 1)
    throw std::invalid_argument("simulation constraints must be strictly positive");
}

SimulationConstraints SimulationConstraints::scaled(double factor) const {
  SimulationConstraints out = *this;
  out.min_pair_distance *= factor;
  out.border_margin *= factor;
  out.negative_band *= factor;
  return out;
}

namespace {

struct Pixel {
  int row;
  int col;
};

double distance(const Pixel& a, const Pixel& b) { return std::hypot(a.row - b.row, a.col - b.col); }

bool far_enough(const Pixel& p, const std::vector<Pixel>& placed, double d) {
  for (const auto& q : placed)
    if (distance(p, q) < d) return false;
  return true;
}

// Voronoi-iteration k-medoids over a candidate pixel set; medoids ordered by cluster size.
std::vector<Pixel> kmedoids(const std::vector<Pixel>& points, int k, std::mt19937_64& rng) {
  const int n = static_cast<int>(points.size());
  k = std::min(k, n);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<int> medoids(idx.begin(), idx.begin() + k);
  std::vector<int> assign(n, 0);
  for (int iter = 0; iter < 10; ++iter) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (int m = 0; m < k; ++m) {
        const double d = distance(points[i], points[medoids[m]]);
        if (d < best) {
          best = d;
          assign[i] = m;
        }
      }
    }
    bool changed = false;
    for (int m = 0; m < k; ++m) {
      std::vector<int> members;
      for (int i = 0; i < n; ++i)
        if (assign[i] == m) members.push_back(i);
      if (members.empty()) continue;
      int best_i = medoids[m];
      double best_cost = std::numeric_limits<double>::max();
      for (int a : members) {
        double cost = 0;
        for (int b : members) cost += distance(points[a], points[b]);
        if (cost < best_cost) {
          best_cost = cost;
          best_i = a;
        }
      }
      if (best_i != medoids[m]) {
        medoids[m] = best_i;
        changed = true;
      }
    }
    if (!changed) break;
  }
  std::vector<int> sizes(k, 0);
  for (int i = 0; i < n; ++i) ++sizes[assign[i]];
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sizes[a] > sizes[b]; });
  std::vector<Pixel> out;
  for (int m : order) out.push_back(points[medoids[m]]);
  return out;
}

std::vector<Pixel> subsample(std::vector<Pixel> pts, std::size_t limit, std::mt19937_64& rng) {
  if (pts.size() <= limit) return pts;
  std::shuffle(pts.begin(), pts.end(), rng);
  pts.resize(limit);
  return pts;
}

// Greedy random placement of `count` points from `candidates` respecting the
// spacing to each other and to `placed`. Retries several shuffles.
bool place_random(const std::vector<Pixel>& candidates, int count, double d, std::vector<Pixel>& placed,
                  std::mt19937_64& rng) {
  if (count == 0) return true;
  std::vector<Pixel> shuffled = candidates;
  for (int attempt = 0; attempt < 20; ++attempt) {
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::vector<Pixel> trial = placed;
    int added = 0;
    for (const auto& p : shuffled) {
      if (added == count) break;
      if (!far_enough(p, trial, d)) continue;
      if (d <= 0 && std::any_of(trial.begin(), trial.end(), [&](const Pixel& q) { return q.row == p.row && q.col == p.col; }))
        continue;
      trial.push_back(p);
      ++added;
    }
    if (added == count) {
      placed = std::move(trial);
      return true;
    }
  }
  return false;
}

}  // namespace

SimulationResult random_click_simulation(const BinaryMask& gt, int n_total, const SimulationConstraints& constraints,
                                         std::uint64_t seed) {
  constraints.validate();
  if (!gt.any()) throw std::invalid_argument("random_click_simulation: ground-truth mask is empty");
  if (n_total < 1 || n_total > constraints.max_total_clicks)
    throw std::invalid_argument("random_click_simulation: n_total outside [1, max_total_clicks]");

  std::mt19937_64 rng(seed);
  int n_pos = std::uniform_int_distribution<int>(1, n_total)(rng);
  int n_neg = n_total - n_pos;

  const int h = static_cast<int>(gt.rows());
  const int w = static_cast<int>(gt.cols());
  const Eigen::ArrayXXd inner = distance_to_boundary(gt);
  const Eigen::ArrayXXd outer = distance_to_mask(gt);

  const int gt_area = static_cast<int>(gt.count());
  const int bg_area = h * w - gt_area;
  n_pos = std::min(n_pos, gt_area);
  n_neg = std::min(n_neg, bg_area);

  double d = constraints.min_pair_distance;
  double m = constraints.border_margin;
  for (;;) {
    std::vector<Pixel> pos_candidates;
    std::vector<Pixel> neg_candidates;
    std::vector<Pixel> any_background;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        if (gt(r, c)) {
          if (inner(r, c) >= m) pos_candidates.push_back({r, c});
        } else {
          any_background.push_back({r, c});
          if (outer(r, c) >= m && outer(r, c) <= std::max(constraints.negative_band, m)) neg_candidates.push_back({r, c});
        }
      }
    if (neg_candidates.empty()) neg_candidates = any_background;

    bool ok = static_cast<int>(pos_candidates.size()) >= n_pos &&
              static_cast<int>(neg_candidates.size()) >= n_neg;
    std::vector<Pixel> placed;
    if (ok) {
      const auto medoid_pool = subsample(pos_candidates, 800, rng);
      for (const auto& p : kmedoids(medoid_pool, n_pos, rng)) {
        if (static_cast<int>(placed.size()) == n_pos) break;
        if (far_enough(p, placed, d) || d <= 0) placed.push_back(p);
      }
      const int missing = n_pos - static_cast<int>(placed.size());
      ok = place_random(pos_candidates, missing, d, placed, rng) && place_random(neg_candidates, n_neg, d, placed, rng);
    }
    if (ok) {
      SimulationResult out;
      for (int i = 0; i < static_cast<int>(placed.size()); ++i)
        push_click(out.clicks, placed[i].row, placed[i].col, i < n_pos ? Polarity::positive : Polarity::negative);
      out.final_min_pair_distance = d;
      out.final_border_margin = m;
      out.distance_factor = d / constraints.min_pair_distance;
      out.margin_factor = m / constraints.border_margin;
      return out;
    }
    if (d > 0) {
      d = d / 2 < 1.0 ? 0.0 : d / 2;
    } else if (m > 0) {
      m = m / 2 < 1.0 ? 0.0 : m / 2;
    } else {
      // Unreachable: with zero spacing every distinct pixel is admissible.
      throw std::logic_error("random_click_simulation: placement failed with zero constraints");
    }
  }
}

namespace {

Click argmax_click(const Eigen::ArrayXXd& score, const BinaryMask& allowed, Polarity polarity, int order) {
  double best = -1.0;
  Click out{-1, -1, polarity, order};
  for (Eigen::Index r = 0; r < allowed.rows(); ++r)
    for (Eigen::Index c = 0; c < allowed.cols(); ++c)
      if (allowed(r, c) && score(r, c) > best) {
        best = score(r, c);
        out.row = static_cast<int>(r);
        out.col = static_cast<int>(c);
      }
  return out;
}

}  // namespace

Click first_click(const BinaryMask& gt) {
  if (!gt.any()) throw std::invalid_argument("first_click: mask is empty");
  return argmax_click(distance_to_boundary(gt), gt, Polarity::positive, 0);
}

std::optional<Click> next_click(const BinaryMask& pred, const BinaryMask& gt, const ClickSet& existing,
                                std::uint64_t seed, ClickStrategy strategy) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw std::invalid_argument("next_click: shape mismatch");
  const BinaryMask fn = gt && !pred;
  const BinaryMask fp = pred && !gt;
  const Components fn_cc = connected_components(fn);
  const Components fp_cc = connected_components(fp);
  if (fn_cc.count() == 0 && fp_cc.count() == 0) return std::nullopt;

  // Largest region; ties prefer false negatives, then the lower label.
  bool use_fn = true;
  int label = 0;
  int best_area = -1;
  for (int i = 0; i < fn_cc.count(); ++i)
    if (fn_cc.areas[i] > best_area) {
      best_area = fn_cc.areas[i];
      label = i + 1;
    }
  for (int i = 0; i < fp_cc.count(); ++i)
    if (fp_cc.areas[i] > best_area) {
      best_area = fp_cc.areas[i];
      label = i + 1;
      use_fn = false;
    }
  const BinaryMask region = (use_fn ? fn_cc : fp_cc).component(label);
  BinaryMask eroded = erode3x3(region);
  if (!eroded.any()) eroded = region;

  const Polarity polarity = use_fn ? Polarity::positive : Polarity::negative;
  const int order = static_cast<int>(existing.size());
  const Eigen::ArrayXXd dt = distance_to_boundary(region);

  std::mt19937_64 rng(seed);
  bool center = strategy == ClickStrategy::center;
  if (strategy == ClickStrategy::mixed) center = std::bernoulli_distribution(0.5)(rng);
  if (!center) {
    std::vector<Pixel> near_border;
    for (Eigen::Index r = 0; r < eroded.rows(); ++r)
      for (Eigen::Index c = 0; c < eroded.cols(); ++c)
        if (eroded(r, c) && dt(r, c) <= 3.0) near_border.push_back({static_cast<int>(r), static_cast<int>(c)});
    if (!near_border.empty()) {
      const auto& p = near_border[std::uniform_int_distribution<std::size_t>(0, near_border.size() - 1)(rng)];
      return Click{p.row, p.col, polarity, order};
    }
  }
  return argmax_click(dt, eroded, polarity, order);
}

NegativePartition classify_negative_clicks(const ClickSet& negs, const BinaryMask& exemplar_mask,
                                           const std::vector<BinaryMask>& same_category_masks) {
  NegativePartition out;
  for (const auto& c : negs) {
    if (c.positive()) throw std::invalid_argument("classify_negative_clicks: positive click in negative set");
    bool pseudo = false;
    for (const auto& m : same_category_masks) {
      if (m.rows() != exemplar_mask.rows() || m.cols() != exemplar_mask.cols())
        throw std::invalid_argument("classify_negative_clicks: mask shape mismatch");
      if (c.row < 0 || c.row >= m.rows() || c.col < 0 || c.col >= m.cols())
        throw std::invalid_argument("classify_negative_clicks: click outside masks");
      // the exemplar's own mask never makes a click pseudo
      if (m(c.row, c.col) && !exemplar_mask(c.row, c.col)) pseudo = true;
    }
    (pseudo ? out.pseudo : out.true_negatives).push_back(c);
  }
  return out;
}

}  // namespace icseg
