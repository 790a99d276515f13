#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "icseg/augment.hpp"
#include "icseg/click_simulator.hpp"
#include "icseg/dataset.hpp"
#include "icseg/model.hpp"
#include "icseg/params.hpp"
#include "json.hpp"

namespace icseg {

struct TrainConfig {
  int batch_size = 8;
  int epochs = 20;
  double lr = 5e-5;
  /// lr is multiplied by lr_decay for every epoch after lr_decay_epoch.
  double lr_decay = 0.1;
  int lr_decay_epoch = 50;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  int iterative_clicks_max = 3;
  /// Initial clicks: random simulation with 1..max_initial_clicks clicks, or
  /// (with probability first_click_prob) the single distance-transform click.
  int max_initial_clicks = 4;
  double first_click_prob = 0.3;
  /// MOIS: probability that the first recall round has no clicks at all.
  double empty_recall_prob = 0.5;
  double focal_gamma = 2.0;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  /// Zero every exemplar-derived input (same-capacity ablation).
  bool zero_exemplar = false;
  int log_every = 25;

  static TrainConfig full();
  static TrainConfig desk();
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Learning rate for a 1-based epoch.
double lr_at(const TrainConfig& c, int epoch);

/// Adam on a parameter store. Gradients are divided by `grad_scale` (the
/// number of accumulated samples) before the update.
template <typename S>
class Adam {
 public:
  Adam(ParameterStore<S>& store, double beta1, double beta2, double eps)
      : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      m_.push_back(Matrix<S>::Zero(store.at(i).value.rows(), store.at(i).value.cols()));
      v_.push_back(m_.back());
    }
  }

  void step(double lr, double grad_scale = 1.0) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
    const S inv = static_cast<S>(1.0 / grad_scale);
    for (std::size_t i = 0; i < store_->size(); ++i) {
      auto& p = store_->at(i);
      const Matrix<S> g = p.grad * inv;
      m_[i] = b1 * m_[i] + (S(1) - b1) * g;
      v_[i] = b2 * v_[i] + (S(1) - b2) * g.cwiseProduct(g);
      const S a = static_cast<S>(lr / bc1);
      const S d = static_cast<S>(1.0 / std::sqrt(bc2));
      p.value.array() -= a * m_[i].array() / ((v_[i].array().sqrt() * d) + static_cast<S>(eps_));
    }
  }

  long steps() const { return t_; }

 private:
  ParameterStore<S>* store_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix<S>> m_, v_;
};

// ---------------------------------------------------------------------------
// Training items

/// One object to segment: image plus its ground-truth mask.
struct SoisItem {
  std::shared_ptr<const Image> image;
  BinaryMask gt;
  std::string id;
  std::string image_id;  ///< groups objects of one image (failed-image counts)
};

/// One multi-object item: all same-category masks and the exemplar's clicks.
struct MoisItem {
  std::shared_ptr<const Image> image;
  std::vector<BinaryMask> masks;
  int exemplar_index = 0;
  ClickSet exemplar_clicks;
  std::string id;
  std::string image_id;

  BinaryMask target() const;  ///< union of all masks
};

using ImageLoader = std::function<Image(const CocoImage&)>;

/// One item per non-crowd annotation with area >= min_area.
std::vector<SoisItem> sois_items(const CocoDataset& d, const ImageLoader& load, std::uint64_t min_area = 0);
std::vector<MoisItem> mois_items(const CocoDataset& d, const std::vector<MoisSample>& samples, const ImageLoader& load);
/// Loader over an in-memory synthetic set.
ImageLoader synth_loader(const SynthSet& set);
/// Reads root/file_name and checks it against the annotated size.
ImageLoader file_loader(const std::string& root);

/// What one training step did; the loss is already back-propagated.
struct StepResult {
  double loss = 0.0;
  int forward_passes = 0;
  bool skipped = false;
  ClickSet clicks;               ///< recall / single-object clicks of the final pass
  ClickSet exemplar_clicks;      ///< MOIS: exemplar clicks fed to the network
  Matrix<float> recall_guidance;   ///< MOIS: recall guidance of the final pass
  Matrix<float> exemplar_guidance; ///< MOIS: exemplar guidance of the final pass
};

/// Brings image and masks to model resolution (bilinear / nearest).
Image to_model_resolution(const Image& image, int size);
BinaryMask to_model_resolution(const BinaryMask& mask, int size);

/// Simulated clicks, iterative no-gradient refinement passes, final pass with
/// gradients into model.params().grad. Empty ground truth -> skipped.
StepResult sois_training_step(ICMFormer<float>& model, const SoisItem& item, const TrainConfig& cfg,
                              std::uint64_t seed);
StepResult mois_training_step(ICMFormerPP<float>& model, const MoisItem& item, const TrainConfig& cfg,
                              std::uint64_t seed);

struct EpochLog {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double val_miou = -1.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOutputs {
  /// Directory for metrics.jsonl, best.ckpt, last.ckpt, model_card.json; empty = none.
  std::string dir;
  bool quiet = false;
};

struct TrainSummary {
  std::vector<EpochLog> epochs;
  long steps = 0;
  long skipped = 0;
  double best_val = -1.0;
  int best_epoch = 0;
};

/// Validation mIoU@1 hooks return a value in [0, 1].
TrainSummary train_sois(ICMFormer<float>& model, const std::vector<SoisItem>& train, const std::vector<SoisItem>& val,
                        const TrainConfig& cfg, const TrainOutputs& out);
TrainSummary train_mois(ICMFormerPP<float>& model, const std::vector<MoisItem>& train,
                        const std::vector<MoisItem>& val, const TrainConfig& cfg, const TrainOutputs& out);

/// mIoU after one click (first_click) for a single-object model.
double sois_miou_at_1(const ICMFormer<float>& model, const std::vector<SoisItem>& items);
/// mIoU of the golden-exemplar prediction after one additional click.
double mois_miou_at_1(const ICMFormerPP<float>& model, const std::vector<MoisItem>& items, bool zero_exemplar);

/// Model card written next to checkpoints.
nlohmann::json model_card(const std::string& network, const ModelConfig& mc, const TrainConfig& tc,
                          const TrainSummary& summary);

}  // namespace icseg
