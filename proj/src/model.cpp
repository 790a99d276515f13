#include "icseg/model.hpp"

#include <algorithm>
#include <cmath>

#include "icseg/click_simulator.hpp"

namespace icseg {

void ExemplarTarget::freeze() {
  if (frozen_) throw std::logic_error("exemplar already frozen");
  if (!mask_.any()) throw std::invalid_argument("exemplar mask is empty");
  frozen_ = true;
}

void ExemplarTarget::set(BinaryMask mask, ClickSet clicks) {
  if (frozen_) throw std::logic_error("exemplar is frozen and cannot change");
  mask_ = std::move(mask);
  clicks_ = std::move(clicks);
}

ClickSet select_exemplar_clicks(const ClickSet& clicks, const BinaryMask& exemplar_mask,
                                const std::vector<BinaryMask>& same_category_masks, const ExemplarInputOptions& opt) {
  ClickSet pos;
  ClickSet neg;
  for (const auto& c : clicks) (c.positive() ? pos : neg).push_back(c);
  if (opt.positives == ExemplarInputOptions::Positives::first && pos.size() > 1) pos.resize(1);
  if (opt.positives == ExemplarInputOptions::Positives::none) pos.clear();
  if (opt.negatives == ExemplarInputOptions::Negatives::none) neg.clear();
  if (opt.negatives == ExemplarInputOptions::Negatives::true_only && !same_category_masks.empty())
    neg = classify_negative_clicks(neg, exemplar_mask, same_category_masks).true_negatives;
  ClickSet out;
  for (const auto& c : pos) push_click(out, c.row, c.col, c.polarity);
  for (const auto& c : neg) push_click(out, c.row, c.col, c.polarity);
  return out;
}

Matrix<float> guidance_matrix(const ClickSet& clicks, Shape shape, const BinaryMask& prev, int radius) {
  return make_guidance(clicks, shape, prev, radius).as_matrix();
}

PPInput<float> build_pp_input(const Image& image, const ClickSet& recall_clicks, const BinaryMask& prev,
                              const BinaryMask& exemplar_mask, const ClickSet& exemplar_clicks,
                              const ModelConfig& config, const ExemplarInputOptions& opt) {
  const int size = config.image_size;
  if (image.height() != size || image.width() != size)
    throw std::invalid_argument("build_pp_input: image must be at model resolution");
  const Shape shape{size, size};
  PPInput<float> in;
  in.image = image.pixels();
  in.recall_guidance = guidance_matrix(recall_clicks, shape, prev, config.click_radius);
  const Eigen::Index n = static_cast<Eigen::Index>(size) * size;
  const int crop_n = config.eim_crop_size * config.eim_crop_size;
  if (opt.zero_exemplar) {
    in.exemplar_guidance = Matrix<float>::Zero(n, 3);
    for (std::size_t i = 0; i < config.eim_scales.size(); ++i) in.crops.push_back(Matrix<float>::Zero(crop_n, 3));
    return in;
  }
  if (!exemplar_mask.any()) throw std::invalid_argument("build_pp_input: exemplar mask is empty");
  const BinaryMask mask_channel = opt.use_mask ? exemplar_mask : empty_mask(shape);
  in.exemplar_guidance = guidance_matrix(exemplar_clicks, shape, mask_channel, config.click_radius);
  if (!opt.use_mask) in.exemplar_guidance.col(2).setZero();
  if (opt.image == ExemplarInputOptions::ImageMode::masked) {
    const double widest = *std::max_element(config.eim_scales.begin(), config.eim_scales.end());
    const BoundingBox b = scale_bbox(tight_bbox(exemplar_mask), widest, shape);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c)
        if (r < b.row0 || r >= b.row1 || c < b.col0 || c >= b.col1) in.image.row(r * size + c).setZero();
  }
  for (const auto& crop : crop_exemplar(image, exemplar_mask, config.eim_scales))
    in.crops.push_back(resize_bilinear(crop.crop, config.eim_crop_size, config.eim_crop_size).pixels());
  return in;
}

Click rescale_click(const Click& c, int height, int width, int size) {
  Click out = c;
  out.row = std::min(size - 1, static_cast<int>(std::floor((c.row + 0.5) * size / height)));
  out.col = std::min(size - 1, static_cast<int>(std::floor((c.col + 0.5) * size / width)));
  return out;
}

ClickSet rescale_clicks(const ClickSet& clicks, int height, int width, int size) {
  ClickSet out;
  for (const auto& c : clicks) out.push_back(rescale_click(c, height, width, size));
  return out;
}

ProbMap logits_to_prob(const Matrix<float>& logits, int height, int width) {
  ProbMap p(height, width);
  for (int i = 0; i < height * width; ++i) p.data()[i] = 1.0f / (1.0f + std::exp(-logits(i, 0)));
  return p;
}

namespace {

struct Resized {
  Image image;
  ClickSet clicks;
  BinaryMask prev;
};

Resized to_model_size(const Image& image, const ClickSet& clicks, const BinaryMask& prev, int size) {
  validate_clicks(clicks, image.height(), image.width());
  Resized r;
  const bool same = image.height() == size && image.width() == size;
  r.image = same ? image : resize_bilinear(image, size, size);
  r.clicks = same ? clicks : rescale_clicks(clicks, image.height(), image.width(), size);
  if (prev.size() == 0) {
    r.prev = empty_mask({size, size});
  } else {
    if (prev.rows() != image.height() || prev.cols() != image.width())
      throw std::invalid_argument("previous mask does not match the image");
    r.prev = same ? prev : resize_nearest(prev, size, size);
  }
  return r;
}

ProbMap back_to_image(const Matrix<float>& logits, int size, const Image& image) {
  ProbMap p = logits_to_prob(logits, size, size);
  if (image.height() == size && image.width() == size) return p;
  return resize_bilinear(p, image.height(), image.width());
}

}  // namespace

ProbMap ICMFormerPredictor::predict(const Image& image, const ClickSet& clicks, const BinaryMask& prev) const {
  return predict(image, clicks, prev, nullptr);
}

ProbMap ICMFormerPredictor::predict(const Image& image, const ClickSet& clicks, const BinaryMask& prev,
                                    ForwardTrace<float>* trace) const {
  const int size = model_->config().image_size;
  const Resized r = to_model_size(image, clicks, prev, size);
  Tape<float> tape(false);
  const Matrix<float> g = guidance_matrix(r.clicks, {size, size}, r.prev, model_->config().click_radius);
  return back_to_image(model_->logits(tape, r.image.pixels(), g, trace).value(), size, image);
}

ProbMap ICMFormerPPPredictor::predict(const Image& image, const ClickSet& recall_clicks, const BinaryMask& prev,
                                      const ExemplarTarget& exemplar) const {
  return predict(image, recall_clicks, prev, exemplar, nullptr);
}

ProbMap ICMFormerPPPredictor::predict(const Image& image, const ClickSet& recall_clicks, const BinaryMask& prev,
                                      const ExemplarTarget& exemplar, ForwardTrace<float>* trace) const {
  if (!exemplar.frozen()) throw std::invalid_argument("icmformer++ requires a frozen exemplar");
  if (exemplar.mask().rows() != image.height() || exemplar.mask().cols() != image.width())
    throw std::invalid_argument("exemplar mask does not match the image");
  const int size = model_->config().image_size;
  const Resized r = to_model_size(image, recall_clicks, prev, size);
  const Resized ex = to_model_size(image, exemplar.clicks(), exemplar.mask(), size);
  BinaryMask ex_mask = ex.prev;
  if (!ex_mask.any()) {
    // a tiny exemplar can vanish under nearest resampling; keep its first click pixel
    const Click c = ex.clicks.empty() ? rescale_click({0, 0}, 1, 1, size) : ex.clicks.front();
    ex_mask(c.row, c.col) = true;
  }
  const ClickSet ex_clicks = select_exemplar_clicks(ex.clicks, ex_mask, {}, opt_);
  const PPInput<float> in = build_pp_input(r.image, r.clicks, r.prev, ex_mask, ex_clicks, model_->config(), opt_);
  Tape<float> tape(false);
  return back_to_image(model_->logits(tape, in, trace).value(), size, image);
}

}  // namespace icseg
