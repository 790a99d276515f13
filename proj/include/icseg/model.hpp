#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "icseg/blocks.hpp"
#include "icseg/exemplar_module.hpp"
#include "icseg/fusion_head.hpp"
#include "icseg/geometry.hpp"
#include "icseg/model_config.hpp"

namespace icseg {

/// Intermediate values of one forward pass, filled only when requested.
template <typename S>
struct ForwardTrace {
  std::string network;
  Matrix<S> image_tokens;     ///< S1 output of the image stream / exemplar branch (E)
  Matrix<S> guidance_tokens;  ///< S1 output of the click stream / recall branch (R)
  Matrix<S> f_e, f_r, fused;
  Matrix<S> response;
  Matrix<S> logits;
};

namespace detail {

template <typename S>
std::vector<SelfAttentionBlock<S>> make_stack(ParameterStore<S>& store, const std::string& path, int depth,
                                              const ModelConfig& c, std::mt19937_64& rng) {
  std::vector<SelfAttentionBlock<S>> blocks;
  for (int i = 0; i < depth; ++i)
    blocks.push_back(SelfAttentionBlock<S>::make(store, path + ".blocks." + std::to_string(i), c.embed_dim,
                                                 c.num_heads, c.mlp_ratio, c.dropout_rate, rng));
  return blocks;
}

/// Per-channel standardisation of (N x 3) RGB in [0,1] with the ImageNet statistics.
template <typename S>
Matrix<S> normalize_pixels(const Matrix<S>& rgb) {
  static constexpr double mean[3] = {0.485, 0.456, 0.406};
  static constexpr double stdev[3] = {0.229, 0.224, 0.225};
  Matrix<S> out(rgb.rows(), rgb.cols());
  for (Eigen::Index c = 0; c < rgb.cols(); ++c)
    out.col(c) = (rgb.col(c).array() - S(mean[c % 3])) / S(stdev[c % 3]);
  return out;
}

template <typename S>
Var<S> run_stack(Tape<S>& t, const std::vector<SelfAttentionBlock<S>>& blocks, Var<S> x) {
  for (const auto& b : blocks) x = b(t, x);
  return x;
}

}  // namespace detail

/// Single-object network: image and click streams through a shared S1 stack,
/// cross-modality blocks, element-wise sum, S2 stack, head.
template <typename S>
class ICMFormer {
 public:
  ICMFormer(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto& c = config_;
    image_embed_ = PatchEmbed<S>::make(store_, "image_embed", c.image_size, c.patch_size, 3, c.embed_dim, rng);
    guidance_embed_ = PatchEmbed<S>::make(store_, "guidance_embed", c.image_size, c.patch_size, 3, c.embed_dim, rng);
    s1_ = detail::make_stack(store_, "s1", c.s1_depth, c, rng);
    for (int i = 0; i < c.cross_depth; ++i)
      cross_.push_back(CrossModalityBlock<S>::make(store_, "cross.blocks." + std::to_string(i), c.embed_dim,
                                                   c.num_heads, c.mlp_ratio, c.dropout_rate, rng));
    s2_ = detail::make_stack(store_, "s2", c.s2_depth, c, rng);
    head_ = SegmentationHead<S>::make(store_, "head", 2, c.embed_dim, c.head_channels, c.head_mix_channels,
                                      c.head_detail, 6, c.detail_channels, rng);
  }

  const ModelConfig& config() const { return config_; }
  ParameterStore<S>& params() { return store_; }
  const ParameterStore<S>& params() const { return store_; }

  /// image: (S*S) x 3, guidance: (S*S) x 3 (pos, neg, prev). Returns logits (S*S) x 1.
  Var<S> logits(Tape<S>& t, const Matrix<S>& image, const Matrix<S>& guidance, ForwardTrace<S>* trace = nullptr) const {
    const int size = config_.image_size;
    if (image.rows() != static_cast<Eigen::Index>(size) * size || guidance.rows() != image.rows())
      throw std::invalid_argument("icmformer: inputs must be " + std::to_string(size) + "x" + std::to_string(size));
    if (!(guidance.col(0).array() > S(0)).any())
      throw std::invalid_argument("icmformer: at least one positive click is required");
    const Var<S> img = t.constant(detail::normalize_pixels(image));
    const Var<S> gui = t.constant(guidance);
    Var<S> x = detail::run_stack(t, s1_, image_embed_(t, img, size, size));
    Var<S> y = detail::run_stack(t, s1_, guidance_embed_(t, gui, size, size));
    const Var<S> x_s1 = x;
    if (trace) {
      trace->network = "icmformer";
      trace->image_tokens = x.value();
      trace->guidance_tokens = y.value();
    }
    for (const auto& block : cross_) std::tie(x, y) = block(t, x, y);
    Var<S> z = detail::run_stack(t, s2_, ad::add(x, y));
    if (trace) trace->fused = z.value();
    const Var<S> stack = ad::concat_cols<S>({img, gui});
    const Var<S> out = head_(t, {z, x_s1}, config_.grid(), config_.head_grid(), &stack, size, size);
    if (trace) trace->logits = out.value();
    return out;
  }

 private:
  ModelConfig config_;
  ParameterStore<S> store_;
  PatchEmbed<S> image_embed_, guidance_embed_;
  std::vector<SelfAttentionBlock<S>> s1_, s2_;
  std::vector<CrossModalityBlock<S>> cross_;
  SegmentationHead<S> head_;
};

/// Network inputs for the exemplar-driven model, all at model resolution.
template <typename S>
struct PPInput {
  Matrix<S> image;              ///< (S*S) x 3
  Matrix<S> recall_guidance;    ///< (S*S) x 3: recall pos, recall neg, previous mask
  Matrix<S> exemplar_guidance;  ///< (S*S) x 3: exemplar pos, exemplar neg, exemplar mask
  std::vector<Matrix<S>> crops; ///< crop_size^2 x 3 per scale

  template <typename T>
  PPInput<T> cast() const {
    PPInput<T> o{image.template cast<T>(), recall_guidance.template cast<T>(), exemplar_guidance.template cast<T>(), {}};
    for (const auto& c : crops) o.crops.push_back(c.template cast<T>());
    return o;
  }
};

/// Exemplar-driven multi-object network: exemplar and recall branches through
/// a shared S1 stack, exemplar-informed query guidance, bidirectional
/// cross-attention, channel fusion, head.
template <typename S>
class ICMFormerPP {
 public:
  ICMFormerPP(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto& c = config_;
    embed_ = PatchEmbed<S>::make(store_, "embed", c.image_size, c.patch_size, 6, c.embed_dim, rng);
    s1_ = detail::make_stack(store_, "s1", c.s1_depth, c, rng);
    if (c.use_eim)
      eim_ = ExemplarModule<S>::make(store_, "eim", c.eim_channels, c.eim_proj_channels, c.eim_crop_size, c.embed_dim,
                                     c.eim_softmax_axis, c.eim_reduce, rng);
    for (int i = 0; i < c.cross_depth; ++i) {
      cross_r_.push_back(CrossAttentionBlock<S>::make(store_, "cross_recall.blocks." + std::to_string(i), c.embed_dim,
                                                      c.num_heads, c.mlp_ratio, c.dropout_rate, rng));
      cross_e_.push_back(CrossAttentionBlock<S>::make(store_, "cross_exemplar.blocks." + std::to_string(i),
                                                      c.embed_dim, c.num_heads, c.mlp_ratio, c.dropout_rate, rng));
    }
    fusion_ = ChannelFusion<S>::make(store_, "fusion", c.embed_dim, rng);
    head_ = SegmentationHead<S>::make(store_, "head", 2, c.embed_dim, c.head_channels, c.head_mix_channels,
                                      c.head_detail, 6, c.detail_channels, rng);
  }

  const ModelConfig& config() const { return config_; }
  ParameterStore<S>& params() { return store_; }
  const ParameterStore<S>& params() const { return store_; }

  Var<S> logits(Tape<S>& t, const PPInput<S>& in, ForwardTrace<S>* trace = nullptr) const {
    const int size = config_.image_size;
    const Eigen::Index n = static_cast<Eigen::Index>(size) * size;
    if (in.image.rows() != n || in.recall_guidance.rows() != n || in.exemplar_guidance.rows() != n)
      throw std::invalid_argument("icmformer++: inputs must be " + std::to_string(size) + "x" + std::to_string(size));
    const Var<S> img = t.constant(detail::normalize_pixels(in.image));
    const Var<S> recall_stack = ad::concat_cols<S>({img, t.constant(in.recall_guidance)});
    const Var<S> exemplar_stack = ad::concat_cols<S>({img, t.constant(in.exemplar_guidance)});
    Var<S> e = detail::run_stack(t, s1_, embed_(t, exemplar_stack, size, size));
    Var<S> r = detail::run_stack(t, s1_, embed_(t, recall_stack, size, size));
    const Var<S> r_s1 = r;
    if (trace) {
      trace->network = "icmformer++";
      trace->image_tokens = e.value();
      trace->guidance_tokens = r.value();
    }
    if (config_.use_eim) {
      std::vector<Var<S>> crops;
      for (const auto& c : in.crops) crops.push_back(t.constant(detail::normalize_pixels(c)));
      const auto eo = eim_(t, img, size, size, crops, config_.grid());
      r = guided_query_merge(eo.guided, r);
      if (trace) trace->response = eo.response.value();
    }
    for (std::size_t i = 0; i < cross_r_.size(); ++i) {
      const Var<S> r_next = cross_r_[i](t, r, e);
      const Var<S> e_next = cross_e_[i](t, e, r);
      r = r_next;
      e = e_next;
    }
    const Var<S> fused = fusion_(t, e, r, config_.grid());
    if (trace) {
      trace->f_e = e.value();
      trace->f_r = r.value();
      trace->fused = fused.value();
    }
    const Var<S> out = head_(t, {fused, r_s1}, config_.grid(), config_.head_grid(), &recall_stack, size, size);
    if (trace) trace->logits = out.value();
    return out;
  }

 private:
  ModelConfig config_;
  ParameterStore<S> store_;
  PatchEmbed<S> embed_;
  std::vector<SelfAttentionBlock<S>> s1_;
  ExemplarModule<S> eim_;
  std::vector<CrossAttentionBlock<S>> cross_r_, cross_e_;
  ChannelFusion<S> fusion_;
  SegmentationHead<S> head_;
};

// ---------------------------------------------------------------------------
// Image-level inputs and prediction interfaces (float).

/// Previously interacted object: its satisfactory mask and clicks. Immutable
/// once frozen.
class ExemplarTarget {
 public:
  ExemplarTarget() = default;
  ExemplarTarget(BinaryMask mask, ClickSet clicks) : mask_(std::move(mask)), clicks_(std::move(clicks)) {}

  const BinaryMask& mask() const { return mask_; }
  const ClickSet& clicks() const { return clicks_; }
  bool frozen() const { return frozen_; }
  void freeze();
  void set(BinaryMask mask, ClickSet clicks);

 private:
  BinaryMask mask_;
  ClickSet clicks_;
  bool frozen_ = false;
};

/// Which parts of the exemplar reach the exemplar branch.
struct ExemplarInputOptions {
  enum class ImageMode { full, masked };
  enum class Positives { all, first, none };
  enum class Negatives { true_only, all, none };
  ImageMode image = ImageMode::full;
  bool use_mask = true;
  Positives positives = Positives::all;
  Negatives negatives = Negatives::true_only;
  /// Feed zeros for every exemplar-derived input (ablation).
  bool zero_exemplar = false;
};

/// Exemplar clicks after the positive/negative policy. With true_only,
/// negatives inside other same-category objects are removed (pseudo
/// negatives); without known objects every negative is kept.
ClickSet select_exemplar_clicks(const ClickSet& clicks, const BinaryMask& exemplar_mask,
                                const std::vector<BinaryMask>& same_category_masks, const ExemplarInputOptions& opt);

/// (H*W) x 3 guidance matrix for the given clicks and previous mask.
Matrix<float> guidance_matrix(const ClickSet& clicks, Shape shape, const BinaryMask& prev, int radius);

/// Builds network inputs; image, clicks and masks must already be at model resolution.
PPInput<float> build_pp_input(const Image& image, const ClickSet& recall_clicks, const BinaryMask& prev,
                              const BinaryMask& exemplar_mask, const ClickSet& exemplar_clicks,
                              const ModelConfig& config, const ExemplarInputOptions& opt);

/// Maps a click from a (h, w) raster into a (size, size) one.
Click rescale_click(const Click& c, int height, int width, int size);
ClickSet rescale_clicks(const ClickSet& clicks, int height, int width, int size);

class SingleObjectModel {
 public:
  virtual ~SingleObjectModel() = default;
  /// Probability map at the image's resolution.
  virtual ProbMap predict(const Image& image, const ClickSet& clicks, const BinaryMask& prev) const = 0;
};

class MultiObjectModel {
 public:
  virtual ~MultiObjectModel() = default;
  virtual ProbMap predict(const Image& image, const ClickSet& recall_clicks, const BinaryMask& prev,
                          const ExemplarTarget& exemplar) const = 0;
};

/// Runs an ICMFormer<float> on images of any size (resized to the model size and back).
class ICMFormerPredictor : public SingleObjectModel {
 public:
  explicit ICMFormerPredictor(std::shared_ptr<const ICMFormer<float>> model) : model_(std::move(model)) {}
  ProbMap predict(const Image& image, const ClickSet& clicks, const BinaryMask& prev) const override;
  ProbMap predict(const Image& image, const ClickSet& clicks, const BinaryMask& prev, ForwardTrace<float>* trace) const;

 private:
  std::shared_ptr<const ICMFormer<float>> model_;
};

class ICMFormerPPPredictor : public MultiObjectModel {
 public:
  explicit ICMFormerPPPredictor(std::shared_ptr<const ICMFormerPP<float>> model, ExemplarInputOptions opt = {})
      : model_(std::move(model)), opt_(opt) {}
  ProbMap predict(const Image& image, const ClickSet& recall_clicks, const BinaryMask& prev,
                  const ExemplarTarget& exemplar) const override;
  ProbMap predict(const Image& image, const ClickSet& recall_clicks, const BinaryMask& prev,
                  const ExemplarTarget& exemplar, ForwardTrace<float>* trace) const;
  const ExemplarInputOptions& options() const { return opt_; }

 private:
  std::shared_ptr<const ICMFormerPP<float>> model_;
  ExemplarInputOptions opt_;
};

/// Sigmoid of a logits column reshaped to a size x size map.
ProbMap logits_to_prob(const Matrix<float>& logits, int height, int width);

}  // namespace icseg
