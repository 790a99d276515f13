#include "icseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>

#include "icseg/geometry.hpp"
#include "icseg/image_io.hpp"
#include "icseg/loss.hpp"
#include "icseg/rle.hpp"
#include "icseg/seed.hpp"

namespace icseg {

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.batch_size = 24;
  c.epochs = 105;
  c.lr = 5e-5;
  c.lr_decay_epoch = 50;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.batch_size = 8;
  c.epochs = 20;
  c.lr = 5e-4;
  c.lr_decay_epoch = 15;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(lr > 0)) throw std::invalid_argument("lr must be > 0");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw std::invalid_argument("lr_decay must be in (0, 1]");
  if (lr_decay_epoch < 0) throw std::invalid_argument("lr_decay_epoch must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("Adam betas must be in [0, 1)");
  if (!(adam_eps > 0)) throw std::invalid_argument("adam_eps must be > 0");
  if (iterative_clicks_max < 0) throw std::invalid_argument("iterative_clicks_max must be >= 0");
  if (max_initial_clicks < 1 || max_initial_clicks > 20) throw std::invalid_argument("max_initial_clicks must be in 1..20");
  if (!(first_click_prob >= 0 && first_click_prob <= 1)) throw std::invalid_argument("first_click_prob must be in [0, 1]");
  if (!(empty_recall_prob >= 0 && empty_recall_prob <= 1))
    throw std::invalid_argument("empty_recall_prob must be in [0, 1]");
  if (!(focal_gamma >= 0)) throw std::invalid_argument("focal_gamma must be >= 0");
  if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"lr", c.lr},
       {"lr_decay", c.lr_decay},
       {"lr_decay_epoch", c.lr_decay_epoch},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"iterative_clicks_max", c.iterative_clicks_max},
       {"max_initial_clicks", c.max_initial_clicks},
       {"first_click_prob", c.first_click_prob},
       {"empty_recall_prob", c.empty_recall_prob},
       {"focal_gamma", c.focal_gamma},
       {"augment",
        {{"flip", c.augment.flip},
         {"rotate", c.augment.rotate},
         {"max_rotation_deg", c.augment.max_rotation_deg},
         {"scale", c.augment.scale},
         {"min_scale", c.augment.min_scale},
         {"max_scale", c.augment.max_scale},
         {"crop", c.augment.crop}}},
       {"seed", c.seed},
       {"zero_exemplar", c.zero_exemplar},
       {"log_every", c.log_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  auto get = [&](const char* k, auto& v) {
    if (j.contains(k)) j.at(k).get_to(v);
  };
  get("batch_size", d.batch_size);
  get("epochs", d.epochs);
  get("lr", d.lr);
  get("lr_decay", d.lr_decay);
  get("lr_decay_epoch", d.lr_decay_epoch);
  get("beta1", d.beta1);
  get("beta2", d.beta2);
  get("adam_eps", d.adam_eps);
  get("iterative_clicks_max", d.iterative_clicks_max);
  get("max_initial_clicks", d.max_initial_clicks);
  get("first_click_prob", d.first_click_prob);
  get("empty_recall_prob", d.empty_recall_prob);
  get("focal_gamma", d.focal_gamma);
  get("seed", d.seed);
  get("zero_exemplar", d.zero_exemplar);
  get("log_every", d.log_every);
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    auto ga = [&](const char* k, auto& v) {
      if (a.contains(k)) a.at(k).get_to(v);
    };
    ga("flip", d.augment.flip);
    ga("rotate", d.augment.rotate);
    ga("max_rotation_deg", d.augment.max_rotation_deg);
    ga("scale", d.augment.scale);
    ga("min_scale", d.augment.min_scale);
    ga("max_scale", d.augment.max_scale);
    ga("crop", d.augment.crop);
  }
  d.validate();
  c = d;
}

double lr_at(const TrainConfig& c, int epoch) {
  if (epoch < 1) throw std::invalid_argument("lr_at: epochs are 1-based");
  return epoch <= c.lr_decay_epoch ? c.lr : c.lr * c.lr_decay;
}

// ---------------------------------------------------------------------------

BinaryMask MoisItem::target() const {
  if (masks.empty()) return {};
  BinaryMask u = masks.front();
  for (const auto& m : masks) u = u || m;
  return u;
}

namespace {

const CocoImage& image_of(const CocoDataset& d, std::int64_t id) {
  const CocoImage* im = d.image(id);
  if (!im) throw std::out_of_range("no image with id " + std::to_string(id));
  return *im;
}

}  // namespace

std::vector<SoisItem> sois_items(const CocoDataset& d, const ImageLoader& load, std::uint64_t min_area) {
  std::map<std::int64_t, std::shared_ptr<const Image>> cache;
  std::vector<SoisItem> out;
  for (const auto& a : d.annotations) {
    if (a.iscrowd || !a.rle || a.rle->area() < std::max<std::uint64_t>(min_area, 1)) continue;
    auto& im = cache[a.image_id];
    if (!im) im = std::make_shared<const Image>(load(image_of(d, a.image_id)));
    out.push_back({im, rle_decode(*a.rle), "ann" + std::to_string(a.id), "img" + std::to_string(a.image_id)});
  }
  return out;
}

std::vector<MoisItem> mois_items(const CocoDataset& d, const std::vector<MoisSample>& samples,
                                 const ImageLoader& load) {
  std::map<std::int64_t, std::shared_ptr<const Image>> cache;
  std::vector<MoisItem> out;
  for (const auto& s : samples) {
    auto& im = cache[s.image_id];
    if (!im) im = std::make_shared<const Image>(load(image_of(d, s.image_id)));
    MoisItem it;
    it.image = im;
    for (const auto& r : s.masks) it.masks.push_back(rle_decode(r));
    it.exemplar_index = s.exemplar_index;
    it.exemplar_clicks = s.exemplar_clicks;
    it.image_id = "img" + std::to_string(s.image_id);
    it.id = it.image_id + "/cat" + std::to_string(s.category_id);
    out.push_back(std::move(it));
  }
  return out;
}

ImageLoader synth_loader(const SynthSet& set) {
  return [&set](const CocoImage& ci) -> Image {
    for (std::size_t i = 0; i < set.coco.images.size(); ++i)
      if (set.coco.images[i].id == ci.id) return set.images.at(i).image;
    throw std::out_of_range("no synthetic image " + std::to_string(ci.id));
  };
}

ImageLoader file_loader(const std::string& root) {
  return [root](const CocoImage& ci) -> Image {
    Image im = read_image((std::filesystem::path(root) / ci.file_name).string());
    if (im.height() != ci.height || im.width() != ci.width)
      throw std::runtime_error("image " + ci.file_name + " does not match its annotation size");
    return im;
  };
}

Image to_model_resolution(const Image& image, int size) {
  if (image.height() == size && image.width() == size) return image;
  return resize_bilinear(image, size, size);
}

BinaryMask to_model_resolution(const BinaryMask& mask, int size) {
  if (mask.rows() == size && mask.cols() == size) return mask;
  return resize_nearest(mask, size, size);
}

namespace {

SimulationConstraints constraints_for(int size) {
  return SimulationConstraints{}.scaled(std::min(1.0, size / 448.0));
}

// Initial clicks on gt: the distance-transform click or a random set.
ClickSet initial_clicks(const BinaryMask& gt, const TrainConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> count(1, cfg.max_initial_clicks);
  const bool centre = unit(rng) < cfg.first_click_prob;
  const int n = count(rng);
  const std::uint64_t sim_seed = rng();
  if (centre) {
    const Click c = first_click(gt);
    ClickSet s;
    push_click(s, c.row, c.col, Polarity::positive);
    return s;
  }
  return random_click_simulation(gt, n, constraints_for(static_cast<int>(gt.rows())), sim_seed).clicks;
}

void add_click(ClickSet& clicks, const Click& c) { push_click(clicks, c.row, c.col, c.polarity); }

Matrix<float> column(const BinaryMask& m) {
  Matrix<float> out(m.size(), 1);
  for (Eigen::Index i = 0; i < m.size(); ++i) out(i, 0) = m.data()[i] ? 1.0f : 0.0f;
  return out;
}

BinaryMask binarized(const Matrix<float>& logits, int size) {
  BinaryMask m(size, size);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = logits(i, 0) >= 0.0f;
  return m;
}

double finish(Tape<float>& tape, Var<float> logits, const BinaryMask& gt, double gamma) {
  const Var<float> loss = nfl_loss(ad::sigmoid(logits), column(gt), gamma);
  const double v = loss.value()(0, 0);
  if (std::isfinite(v)) tape.backward(loss);
  return v;
}

}  // namespace

StepResult sois_training_step(ICMFormer<float>& model, const SoisItem& item, const TrainConfig& cfg,
                              std::uint64_t seed) {
  StepResult res;
  const int size = model.config().image_size;
  const Image image0 = to_model_resolution(*item.image, size);
  const BinaryMask gt0 = to_model_resolution(item.gt, size);
  if (!gt0.any()) {
    res.skipped = true;
    return res;
  }
  std::mt19937_64 rng(seed);
  auto aug = augment(image0, {gt0}, {}, cfg.augment, rng());
  if (!aug.masks[0].any()) aug = augment(image0, {gt0}, {}, AugmentConfig::none(), 0);
  const Image& image = aug.image;
  const BinaryMask& gt = aug.masks[0];

  ClickSet clicks = initial_clicks(gt, cfg, rng);
  if (positives(clicks).empty()) {
    const Click c = first_click(gt);
    clicks.clear();
    push_click(clicks, c.row, c.col, Polarity::positive);
  }
  const int n_iter = std::uniform_int_distribution<int>(0, cfg.iterative_clicks_max)(rng);
  BinaryMask prev = empty_mask({size, size});
  const int radius = model.config().click_radius;
  for (int i = 0; i < n_iter; ++i) {
    Tape<float> tape(false);
    const Matrix<float> g = guidance_matrix(clicks, {size, size}, prev, radius);
    const Matrix<float> logits = model.logits(tape, image.pixels(), g).value();
    ++res.forward_passes;
    prev = binarized(logits, size);
    const auto c = next_click(prev, gt, clicks, rng());
    if (!c) break;
    add_click(clicks, *c);
  }
  Tape<float> tape(true, rng());
  tape.set_training(true);
  const Matrix<float> g = guidance_matrix(clicks, {size, size}, prev, radius);
  res.loss = finish(tape, model.logits(tape, image.pixels(), g), gt, cfg.focal_gamma);
  ++res.forward_passes;
  res.clicks = clicks;
  return res;
}

StepResult mois_training_step(ICMFormerPP<float>& model, const MoisItem& item, const TrainConfig& cfg,
                              std::uint64_t seed) {
  StepResult res;
  const ModelConfig& mc = model.config();
  const int size = mc.image_size;
  if (item.masks.empty() || item.exemplar_index < 0 || item.exemplar_index >= static_cast<int>(item.masks.size()))
    throw std::invalid_argument("mois item " + item.id + ": exemplar index out of range");
  const Image image0 = to_model_resolution(*item.image, size);
  std::vector<BinaryMask> masks0;
  for (const auto& m : item.masks) masks0.push_back(to_model_resolution(m, size));
  const ClickSet ex_clicks0 = rescale_clicks(item.exemplar_clicks, item.image->height(), item.image->width(), size);
  if (!masks0[item.exemplar_index].any()) {
    res.skipped = true;
    return res;
  }

  std::mt19937_64 rng(seed);
  auto aug = augment(image0, masks0, ex_clicks0, cfg.augment, rng());
  if (!aug.masks[item.exemplar_index].any()) aug = augment(image0, masks0, ex_clicks0, AugmentConfig::none(), 0);
  const Image& image = aug.image;
  const BinaryMask ex_mask = aug.masks[item.exemplar_index];
  std::vector<BinaryMask> masks;  // objects still visible, exemplar included
  for (const auto& m : aug.masks)
    if (m.any()) masks.push_back(m);
  BinaryMask gt = masks.front();
  for (const auto& m : masks) gt = gt || m;

  ClickSet ex_clicks = aug.clicks;
  const std::uint64_t resim_seed = rng();
  if (aug.dropped_clicks > 0 || positives(ex_clicks).empty()) {
    const int n = std::max<int>(1, static_cast<int>(ex_clicks0.size()));
    ex_clicks = random_click_simulation(ex_mask, n, constraints_for(size), resim_seed).clicks;
  }
  // pseudo negatives (inside other same-category objects) never reach the network
  ExemplarInputOptions opt;
  opt.zero_exemplar = cfg.zero_exemplar;
  ex_clicks = select_exemplar_clicks(ex_clicks, ex_mask, masks, opt);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool empty_recall = unit(rng) < cfg.empty_recall_prob;
  const std::uint64_t init_seed = rng();
  ClickSet recall;
  if (!empty_recall) {
    std::mt19937_64 r2(init_seed);
    recall = initial_clicks(gt, cfg, r2);
  }
  const int n_iter = std::uniform_int_distribution<int>(0, cfg.iterative_clicks_max)(rng);
  BinaryMask prev = empty_mask({size, size});
  for (int i = 0; i < n_iter; ++i) {
    Tape<float> tape(false);
    const PPInput<float> in = build_pp_input(image, recall, prev, ex_mask, ex_clicks, mc, opt);
    const Matrix<float> logits = model.logits(tape, in).value();
    ++res.forward_passes;
    prev = binarized(logits, size);
    const auto c = next_click(prev, gt, recall, rng());
    if (!c) break;
    add_click(recall, *c);
  }
  Tape<float> tape(true, rng());
  tape.set_training(true);
  const PPInput<float> in = build_pp_input(image, recall, prev, ex_mask, ex_clicks, mc, opt);
  res.loss = finish(tape, model.logits(tape, in), gt, cfg.focal_gamma);
  ++res.forward_passes;
  res.clicks = recall;
  res.exemplar_clicks = ex_clicks;
  res.recall_guidance = in.recall_guidance;
  res.exemplar_guidance = in.exemplar_guidance;
  return res;
}

// ---------------------------------------------------------------------------
// Validation

double sois_miou_at_1(const ICMFormer<float>& model, const std::vector<SoisItem>& items) {
  const int size = model.config().image_size;
  double sum = 0;
  int n = 0;
  for (const auto& it : items) {
    const BinaryMask gt = to_model_resolution(it.gt, size);
    if (!gt.any()) continue;
    const Image image = to_model_resolution(*it.image, size);
    ClickSet clicks;
    add_click(clicks, first_click(gt));
    Tape<float> tape(false);
    const Matrix<float> g =
        guidance_matrix(clicks, {size, size}, empty_mask({size, size}), model.config().click_radius);
    sum += iou(binarized(model.logits(tape, image.pixels(), g).value(), size), gt);
    ++n;
  }
  return n ? sum / n : 0.0;
}

double mois_miou_at_1(const ICMFormerPP<float>& model, const std::vector<MoisItem>& items, bool zero_exemplar) {
  const ModelConfig& mc = model.config();
  const int size = mc.image_size;
  ExemplarInputOptions opt;
  opt.zero_exemplar = zero_exemplar;
  double sum = 0;
  int n = 0;
  for (const auto& it : items) {
    const Image image = to_model_resolution(*it.image, size);
    std::vector<BinaryMask> masks;
    for (const auto& m : it.masks) masks.push_back(to_model_resolution(m, size));
    const BinaryMask& ex_mask = masks.at(it.exemplar_index);
    if (!ex_mask.any()) continue;
    BinaryMask gt = masks.front();
    for (const auto& m : masks) gt = gt || m;
    const ClickSet ex_clicks = select_exemplar_clicks(
        rescale_clicks(it.exemplar_clicks, it.image->height(), it.image->width(), size), ex_mask, masks, opt);
    ClickSet recall;
    BinaryMask prev = empty_mask({size, size});
    {
      Tape<float> tape(false);
      prev = binarized(model.logits(tape, build_pp_input(image, recall, prev, ex_mask, ex_clicks, mc, opt)).value(),
                       size);
    }
    const auto c = next_click(prev, gt, recall, derive_seed({0x5eed, static_cast<std::uint64_t>(n)}));
    BinaryMask pred = prev;
    if (c) {
      add_click(recall, *c);
      Tape<float> tape(false);
      pred = binarized(model.logits(tape, build_pp_input(image, recall, prev, ex_mask, ex_clicks, mc, opt)).value(),
                       size);
    }
    sum += iou(pred, gt);
    ++n;
  }
  return n ? sum / n : 0.0;
}

// ---------------------------------------------------------------------------
// Loop

namespace {

nlohmann::json log_line(const EpochLog& e) {
  nlohmann::json j = {{"epoch", e.epoch}, {"step", e.step}, {"loss", e.loss}, {"lr", e.lr}};
  j["val_miou"] = e.val_miou >= 0 ? nlohmann::json(e.val_miou) : nlohmann::json(nullptr);
  return j;
}

template <typename Model>
void write_snapshot(const std::string& dir, const Model& model, const std::string& item, int epoch, long step,
                    double loss) {
  nlohmann::json j = {{"error", "non-finite loss"}, {"item", item}, {"epoch", epoch}, {"step", step}};
  j["loss"] = std::isnan(loss) ? "nan" : (loss > 0 ? "inf" : "-inf");
  nlohmann::json norms = nlohmann::json::object();
  const auto& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps.at(i);
    norms[ps.name(i)] = {{"value_norm", static_cast<double>(p.value.norm())},
                         {"grad_norm", static_cast<double>(p.grad.norm())},
                         {"finite", p.value.allFinite()}};
  }
  j["parameters"] = norms;
  std::ofstream(std::filesystem::path(dir) / "diverged.json") << j.dump(2);
}

template <typename Model, typename Item, typename StepFn, typename ValFn>
TrainSummary run(Model& model, const std::string& network, const std::vector<Item>& train, const TrainConfig& cfg,
                 const TrainOutputs& out, StepFn step_fn, ValFn val_fn) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train: empty training set");
  namespace fs = std::filesystem;
  std::ofstream metrics;
  if (!out.dir.empty()) {
    fs::create_directories(out.dir);
    metrics.open(fs::path(out.dir) / "metrics.jsonl");
    if (!metrics) throw std::runtime_error("cannot write metrics under " + out.dir);
  }
  auto& store = model.params();
  Adam<float> adam(store, cfg.beta1, cfg.beta2, cfg.adam_eps);
  TrainSummary sum;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = train.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), std::mt19937_64(derive_seed({cfg.seed, 0xe90c, std::uint64_t(epoch)})));
    double loss_sum = 0;
    long loss_n = 0;
    for (std::size_t b = 0; b < n; b += batch) {
      store.zero_grad();
      int used = 0;
      for (std::size_t k = b; k < std::min(n, b + batch); ++k) {
        const std::size_t idx = order[k];
        const auto r = step_fn(model, train[idx], cfg, derive_seed({cfg.seed, std::uint64_t(epoch), idx}));
        if (r.skipped) {
          ++sum.skipped;
          continue;
        }
        if (!std::isfinite(r.loss)) {
          if (!out.dir.empty()) write_snapshot(out.dir, model, train[idx].id, epoch, sum.steps, r.loss);
          throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(sum.steps) + ", item " + train[idx].id);
        }
        loss_sum += r.loss;
        ++loss_n;
        ++used;
      }
      if (used > 0) adam.step(lr, used);
      ++sum.steps;
      if (!out.quiet && sum.steps % cfg.log_every == 0)
        std::cerr << network << " epoch " << epoch << " step " << sum.steps << " loss " << (loss_n ? loss_sum / loss_n : 0)
                  << "\n";
    }
    EpochLog e;
    e.epoch = epoch;
    e.step = sum.steps;
    e.loss = loss_n ? loss_sum / loss_n : 0.0;
    e.lr = lr;
    e.val_miou = val_fn(model);
    sum.epochs.push_back(e);
    if (metrics.is_open()) metrics << log_line(e).dump() << "\n" << std::flush;
    const bool best = sum.best_epoch == 0 || e.val_miou < 0 || e.val_miou > sum.best_val;
    if (best) {
      sum.best_val = e.val_miou;
      sum.best_epoch = epoch;
    }
    if (!out.dir.empty()) {
      save_checkpoint(store, (fs::path(out.dir) / "last.ckpt").string());
      if (best) save_checkpoint(store, (fs::path(out.dir) / "best.ckpt").string());
    }
    if (!out.quiet) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << network << " epoch " << epoch << "/" << cfg.epochs << " loss " << e.loss << " val_miou "
                << e.val_miou << " lr " << lr << " (" << secs << " s)\n";
    }
  }
  if (!out.dir.empty()) {
    std::ofstream card(fs::path(out.dir) / "model_card.json");
    card << model_card(network, model.config(), cfg, sum).dump(2);
  }
  return sum;
}

}  // namespace

TrainSummary train_sois(ICMFormer<float>& model, const std::vector<SoisItem>& train, const std::vector<SoisItem>& val,
                        const TrainConfig& cfg, const TrainOutputs& out) {
  return run(model, "icmformer", train, cfg, out, sois_training_step,
             [&](const ICMFormer<float>& m) { return val.empty() ? -1.0 : sois_miou_at_1(m, val); });
}

TrainSummary train_mois(ICMFormerPP<float>& model, const std::vector<MoisItem>& train,
                        const std::vector<MoisItem>& val, const TrainConfig& cfg, const TrainOutputs& out) {
  return run(model, "icmformer++", train, cfg, out, mois_training_step, [&](const ICMFormerPP<float>& m) {
    return val.empty() ? -1.0 : mois_miou_at_1(m, val, cfg.zero_exemplar);
  });
}

nlohmann::json model_card(const std::string& network, const ModelConfig& mc, const TrainConfig& tc,
                          const TrainSummary& summary) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : summary.epochs) history.push_back(log_line(e));
  return {{"schema", "icseg.model_card/1"},
          {"network", network},
          {"model", mc},
          {"training", tc},
          {"steps", summary.steps},
          {"skipped_samples", summary.skipped},
          {"best_epoch", summary.best_epoch},
          {"best_val_miou", summary.best_val},
          {"history", history}};
}

}  // namespace icseg
