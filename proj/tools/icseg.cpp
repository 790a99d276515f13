#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "icseg/dataset.hpp"
#include "icseg/eval.hpp"
#include "icseg/params.hpp"
#include "icseg/service.hpp"
#include "icseg/trainer.hpp"

using namespace icseg;
namespace fs = std::filesystem;

namespace {

struct ModelArgs {
  std::string ckpt;
  std::string config;
};

// The model config comes from --model-config, else the model_card.json written
// next to the checkpoint by `train`, else the desk profile.
ModelConfig resolve_config(const ModelArgs& a) {
  if (!a.config.empty()) return load_model_config(a.config);
  const fs::path card = fs::path(a.ckpt).parent_path() / "model_card.json";
  if (fs::exists(card)) {
    std::ifstream in(card);
    return nlohmann::json::parse(in).at("model").get<ModelConfig>();
  }
  return ModelConfig::desk();
}

std::shared_ptr<const ICMFormer<float>> load_single(const ModelArgs& a) {
  auto m = std::make_shared<ICMFormer<float>>(resolve_config(a), 0);
  load_checkpoint(m->params(), a.ckpt);
  return m;
}

std::shared_ptr<const ICMFormerPP<float>> load_multi(const ModelArgs& a) {
  auto m = std::make_shared<ICMFormerPP<float>>(resolve_config(a), 0);
  load_checkpoint(m->params(), a.ckpt);
  return m;
}

std::string default_root(const std::string& root, const std::string& data) {
  return root.empty() ? fs::path(data).parent_path().string() : root;
}

std::vector<MoisItem> load_mois(const std::string& samples_path, const std::string& root) {
  const auto samples = read_samples(samples_path);
  // mois_items resolves images through COCO image records
  CocoDataset d;
  std::map<std::int64_t, bool> seen;
  for (const auto& s : samples)
    if (!seen[s.image_id]) d.images.push_back({s.image_id, s.file_name, s.height, s.width});
  return mois_items(d, samples, file_loader(root));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive single- and multi-object segmentation"};
  app.require_subcommand(1);

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic-shapes COCO set");
  int synth_n = 500, synth_size = 64;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("-n,--images", synth_n, "Number of images")->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "Image side in pixels")->check(CLI::Range(16, 4096));
  synth->add_option("--seed", synth_seed);
  synth->add_option("-o,--out", synth_out, "Output directory")->required();

  // build-mois -------------------------------------------------------------
  auto* build = app.add_subcommand("build-mois", "Build multi-object samples from COCO annotations");
  std::string build_in, build_out;
  std::uint64_t build_seed = 0;
  MoisOptions build_opt;
  build->add_option("-a,--annotations", build_in, "COCO annotation JSON")->required()->check(CLI::ExistingFile);
  build->add_option("-o,--out", build_out, "Output JSON-lines file")->required();
  build->add_option("--seed", build_seed);
  build->add_option("--min-area", build_opt.min_area, "Smallest mask area kept");
  build->add_option("--max-clicks", build_opt.max_clicks)->check(CLI::Range(1, 20));
  build->add_flag("--include-crowd", build_opt.include_crowd);

  // stats ------------------------------------------------------------------
  auto* stats = app.add_subcommand("stats", "Sample / image / mean-object counts of a sample file");
  std::string stats_in;
  stats->add_option("samples", stats_in)->required()->check(CLI::ExistingFile);

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train icmformer (single) or icmformer++ (multi)");
  std::string tr_network = "icmformer", tr_data, tr_val, tr_root, tr_val_root, tr_out, tr_config, tr_model_config;
  int tr_epochs = 0, tr_batch = 0;
  double tr_lr = 0;
  std::uint64_t tr_seed = 0;
  bool tr_zero = false, tr_quiet = false, tr_full = false;
  train->add_option("--network", tr_network)->check(CLI::IsMember({"icmformer", "icmformer++"}));
  train->add_option("--data", tr_data, "COCO JSON (icmformer) or sample file (icmformer++)")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--val", tr_val, "Validation data, same kind as --data")->check(CLI::ExistingFile);
  train->add_option("--images", tr_root, "Image root (default: directory of --data)");
  train->add_option("--val-images", tr_val_root, "Image root of --val (default: directory of --val)");
  train->add_option("-o,--out", tr_out, "Output directory")->required();
  train->add_option("--config", tr_config, "Training config JSON")->check(CLI::ExistingFile);
  train->add_option("--model-config", tr_model_config, "Model config JSON")->check(CLI::ExistingFile);
  train->add_flag("--full", tr_full, "Full-scale training hyperparameters");
  train->add_option("--epochs", tr_epochs);
  train->add_option("--batch", tr_batch);
  train->add_option("--lr", tr_lr);
  train->add_option("--seed", tr_seed);
  train->add_flag("--zero-exemplar", tr_zero, "Feed zeros to the exemplar branch (ablation)");
  train->add_flag("-q,--quiet", tr_quiet);

  // eval -------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "NoC / NoF / NoFI / mIoU report");
  ModelArgs ev_model, ev_single;
  std::string ev_data, ev_root, ev_out, ev_regime = "sois", ev_targets = "0.85,0.90", ev_strategy = "mixed";
  EvalOptions ev_opt;
  bool ev_zero = false;
  ev->add_option("--model", ev_model.ckpt, "Checkpoint (icmformer for sois, icmformer++ otherwise)")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--model-config", ev_model.config)->check(CLI::ExistingFile);
  ev->add_option("--single-model", ev_single.ckpt, "icmformer checkpoint for mois-collective")
      ->check(CLI::ExistingFile);
  ev->add_option("--single-model-config", ev_single.config)->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "COCO JSON (sois) or sample file (mois-*)")->required()->check(CLI::ExistingFile);
  ev->add_option("--images", ev_root, "Image root (default: directory of --data)");
  ev->add_option("--regime", ev_regime)->check(CLI::IsMember({"sois", "mois-collective", "mois-additional"}));
  ev->add_option("--max-clicks", ev_opt.max_clicks)->check(CLI::Range(1, 100));
  ev->add_option("--targets", ev_targets, "Comma-separated IoU targets");
  ev->add_option("--seed", ev_opt.seed);
  ev->add_option("--strategy", ev_strategy, "Click placement")->check(CLI::IsMember({"mixed", "center", "border"}));
  ev->add_option("--threads", ev_opt.threads)->check(CLI::PositiveNumber);
  ev->add_flag("--zero-exemplar", ev_zero, "Feed zeros to the exemplar branch");
  ev->add_option("-o,--out", ev_out, "Report directory")->required();

  // serve ------------------------------------------------------------------
  auto* sv = app.add_subcommand("serve", "Run the HTTP annotation service");
  ModelArgs sv_single, sv_multi;
  ServiceConfig sv_cfg;
  sv->add_option("--single-model", sv_single.ckpt, "icmformer checkpoint")
      ->envname("ICSEG_SINGLE_MODEL")
      ->required()
      ->check(CLI::ExistingFile);
  sv->add_option("--single-model-config", sv_single.config)->check(CLI::ExistingFile);
  sv->add_option("--multi-model", sv_multi.ckpt, "icmformer++ checkpoint")
      ->envname("ICSEG_MULTI_MODEL")
      ->required()
      ->check(CLI::ExistingFile);
  sv->add_option("--multi-model-config", sv_multi.config)->check(CLI::ExistingFile);
  sv->add_option("--host", sv_cfg.host)->envname("ICSEG_HOST");
  sv->add_option("--port", sv_cfg.port)->envname("ICSEG_PORT")->check(CLI::Range(1, 65535));
  sv->add_option("--session-dir", sv_cfg.session_dir)->envname("ICSEG_SESSION_DIR");
  sv->add_option("--max-image-side", sv_cfg.max_image_side)->envname("ICSEG_MAX_IMAGE_SIDE")->check(CLI::PositiveNumber);
  sv->add_option("--static-dir", sv_cfg.static_dir, "Serve the annotator build from here")->envname("ICSEG_STATIC_DIR");

  // params -----------------------------------------------------------------
  auto* pr = app.add_subcommand("params", "Parameter counts per module");
  std::string pr_profile = "desk", pr_network = "icmformer++";
  pr->add_option("--profile", pr_profile)->check(CLI::IsMember({"desk", "full", "tiny"}));
  pr->add_option("--network", pr_network)->check(CLI::IsMember({"icmformer", "icmformer++"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      SynthOptions opt;
      opt.image_size = synth_size;
      const SynthSet set = synth_shapes(synth_n, synth_seed, opt);
      write_synth_set(set, synth_out);
      std::cout << set.images.size() << " images, " << set.coco.annotations.size() << " objects -> " << synth_out
                << "\n";
    } else if (*build) {
      const MoisBuild b = build_mois(load_coco(build_in), build_seed, build_opt);
      write_samples(b.samples, build_out);
      for (const auto& s : b.skipped) std::cerr << "skipped: " << s << "\n";
      const DatasetStats st = dataset_stats(b.samples);
      std::cout << st.n_samples << " samples over " << st.n_images << " images, mean objects " << st.mean_objects
                << " (dropped " << b.dropped_small << " small, " << b.dropped_crowd << " crowd, " << b.skipped.size()
                << " undecodable)\n";
    } else if (*stats) {
      const DatasetStats st = dataset_stats(read_samples(stats_in));
      std::cout << nlohmann::json{{"n_samples", st.n_samples}, {"n_images", st.n_images}, {"mean_objects", st.mean_objects}}
                       .dump(2)
                << "\n";
    } else if (*train) {
      TrainConfig tc = tr_full ? TrainConfig::full() : TrainConfig::desk();
      if (!tr_config.empty()) {
        std::ifstream in(tr_config);
        tc = nlohmann::json::parse(in).get<TrainConfig>();
      }
      if (tr_epochs) tc.epochs = tr_epochs;
      if (tr_batch) tc.batch_size = tr_batch;
      if (tr_lr > 0) tc.lr = tr_lr;
      if (train->count("--seed")) tc.seed = tr_seed;
      if (tr_zero) tc.zero_exemplar = true;
      tc.validate();
      const ModelConfig mc = tr_model_config.empty() ? ModelConfig::desk() : load_model_config(tr_model_config);
      TrainOutputs out;
      out.dir = tr_out;
      out.quiet = tr_quiet;
      const std::string root = default_root(tr_root, tr_data);
      const std::string val_root = tr_val.empty() ? "" : default_root(tr_val_root, tr_val);
      TrainSummary s;
      if (tr_network == "icmformer") {
        const CocoDataset d = load_coco(tr_data);
        const auto items = sois_items(d, file_loader(root));
        std::vector<SoisItem> val;
        CocoDataset vd;
        if (!tr_val.empty()) {
          vd = load_coco(tr_val);
          val = sois_items(vd, file_loader(val_root));
        }
        ICMFormer<float> model(mc, tc.seed);
        s = train_sois(model, items, val, tc, out);
      } else {
        const auto items = load_mois(tr_data, root);
        const auto val = tr_val.empty() ? std::vector<MoisItem>{} : load_mois(tr_val, val_root);
        ICMFormerPP<float> model(mc, tc.seed);
        s = train_mois(model, items, val, tc, out);
      }
      std::cout << "trained " << s.epochs.size() << " epochs, " << s.steps << " steps; best val mIoU@1 " << s.best_val
                << " at epoch " << s.best_epoch << " -> " << tr_out << "\n";
    } else if (*ev) {
      ev_opt.targets.clear();
      std::stringstream ss(ev_targets);
      for (std::string t; std::getline(ss, t, ',');) ev_opt.targets.push_back(std::stod(t));
      ev_opt.strategy = ev_strategy == "center"   ? ClickStrategy::center
                        : ev_strategy == "border" ? ClickStrategy::border
                                                  : ClickStrategy::mixed;
      ev_opt.validate();
      const Regime regime = regime_from_string(ev_regime);
      const std::string root = default_root(ev_root, ev_data);
      EvalSummary s;
      if (regime == Regime::sois) {
        const CocoDataset d = load_coco(ev_data);
        const ICMFormerPredictor model(load_single(ev_model));
        s = evaluate_sois(model, sois_items(d, file_loader(root)), ev_opt);
      } else {
        ExemplarInputOptions xo;
        xo.zero_exemplar = ev_zero;
        const ICMFormerPPPredictor multi(load_multi(ev_model), xo);
        const auto items = load_mois(ev_data, root);
        if (regime == Regime::mois_additional) {
          s = evaluate_mois_additional(multi, items, ev_opt);
        } else {
          if (ev_single.ckpt.empty()) throw std::invalid_argument("mois-collective needs --single-model");
          const ICMFormerPredictor single(load_single(ev_single));
          s = evaluate_mois_collective(single, multi, items, ev_opt);
        }
      }
      s.metadata["model"] = ev_model.ckpt;
      s.metadata["data"] = ev_data;
      emit_report(s, ev_out);
      std::cout << to_string(regime) << ": " << s.n_objects << " objects";
      for (std::size_t i = 0; i < s.targets.size(); ++i)
        std::cout << ", NoC" << static_cast<int>(std::lround(s.targets[i] * 100)) << " " << s.noc[i] << " NoF "
                  << s.nof[i];
      std::cout << ", mIoU@1 " << (s.miou.empty() ? 0.0 : s.miou[0]) << " -> " << ev_out << "\n";
    } else if (*sv) {
      auto single = std::make_shared<ICMFormerPredictor>(load_single(sv_single));
      auto multi = std::make_shared<ICMFormerPPPredictor>(load_multi(sv_multi));
      SegmentationService service(single, multi, sv_cfg);
      if (const std::size_t n = service.load_sessions()) std::cerr << "restored " << n << " sessions\n";
      std::cerr << "listening on " << sv_cfg.host << ":" << sv_cfg.port << "\n";
      serve(service);
    } else if (*pr) {
      const ModelConfig mc = pr_profile == "full" ? ModelConfig::full()
                             : pr_profile == "tiny" ? ModelConfig::tiny()
                                                    : ModelConfig::desk();
      auto report = [](const auto& store) {
        std::map<std::string, std::int64_t> groups;
        std::int64_t total = 0;
        for (std::size_t i = 0; i < store.size(); ++i) {
          const std::string& name = store.name(i);
          const auto n = static_cast<std::int64_t>(store.at(i).value.size());
          groups[name.substr(0, name.find('.'))] += n;
          total += n;
        }
        for (const auto& [g, n] : groups) std::cout << g << "\t" << n << "\n";
        std::cout << "total\t" << total << "\n";
      };
      if (pr_network == "icmformer")
        report(ICMFormer<float>(mc, 0).params());
      else
        report(ICMFormerPP<float>(mc, 0).params());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
