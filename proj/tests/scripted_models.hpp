#pragma once

// Scripted models with closed-form interaction outcomes, for evaluation checks.

#include <atomic>
#include <stdexcept>
#include <vector>

#include "icseg/click_simulator.hpp"
#include "icseg/geometry.hpp"
#include "icseg/model.hpp"
#include "icseg/trainer.hpp"

namespace scripted {

using namespace icseg;

inline BinaryMask rect(int size, int r0, int c0, int r1, int c1) {
  BinaryMask m = empty_mask({size, size});
  m.block(r0, c0, r1 - r0, c1 - c0) = true;
  return m;
}

// First round(fraction * |gt|) gt pixels in raster order: IoU equals that fraction.
inline BinaryMask partial(const BinaryMask& gt, double fraction) {
  const auto keep = static_cast<Eigen::Index>(std::llround(fraction * gt.count()));
  BinaryMask out = BinaryMask::Constant(gt.rows(), gt.cols(), false);
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < gt.size() && n < keep; ++i)
    if (gt.data()[i]) {
      out.data()[i] = true;
      ++n;
    }
  return out;
}

// Returns partial(gt, schedule[k - 1]) after k clicks; gt is the mask whose
// first_click equals the first click.
class ScheduleModel : public SingleObjectModel {
 public:
  ScheduleModel(std::vector<BinaryMask> gts, std::vector<std::vector<double>> schedules)
      : gts_(std::move(gts)), schedules_(std::move(schedules)) {}
  ProbMap predict(const Image&, const ClickSet& clicks, const BinaryMask&) const override {
    ++calls;
    for (std::size_t i = 0; i < gts_.size(); ++i) {
      const Click f = first_click(gts_[i]);
      if (clicks.front().row == f.row && clicks.front().col == f.col) {
        const auto& s = schedules_[i];
        return to_prob(partial(gts_[i], s[std::min(clicks.size(), s.size()) - 1]));
      }
    }
    throw std::logic_error("unknown object");
  }
  mutable std::atomic<int> calls{0};

 private:
  std::vector<BinaryMask> gts_;
  std::vector<std::vector<double>> schedules_;
};

// Multi-object model: the exemplar mask plus every object whose solve count
// (additional clicks needed) is reached; negative counts never solve.
class ScriptedMulti : public MultiObjectModel {
 public:
  ScriptedMulti(std::vector<BinaryMask> objects, std::vector<int> solve_at)
      : objects_(std::move(objects)), solve_at_(std::move(solve_at)) {}
  ProbMap predict(const Image&, const ClickSet& clicks, const BinaryMask&, const ExemplarTarget& ex) const override {
    BinaryMask out = ex.mask();
    for (std::size_t i = 0; i < objects_.size(); ++i)
      if (solve_at_[i] >= 0 && static_cast<int>(clicks.size()) >= solve_at_[i]) out = out || objects_[i];
    return to_prob(out);
  }

 private:
  std::vector<BinaryMask> objects_;
  std::vector<int> solve_at_;
};

inline std::shared_ptr<const Image> blank(int size = 64) {
  Image im(size, size);
  im.pixels().setConstant(0.5f);
  return std::make_shared<const Image>(im);
}

inline std::vector<BinaryMask> three_objects() {
  return {rect(64, 2, 2, 22, 22), rect(64, 30, 30, 50, 50), rect(64, 4, 40, 20, 60)};
}

inline SoisItem sois(const BinaryMask& gt, const std::string& id, const std::string& image) {
  return {blank(), gt, id, image};
}

inline MoisItem mois(const std::vector<BinaryMask>& masks, int exemplar, const std::string& image) {
  MoisItem it;
  it.image = blank();
  it.masks = masks;
  it.exemplar_index = exemplar;
  const Click c = first_click(masks[exemplar]);
  push_click(it.exemplar_clicks, c.row, c.col, Polarity::positive);
  it.id = image;
  it.image_id = image;
  return it;
}

}  // namespace scripted
