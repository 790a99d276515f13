#include "icseg/model_config.hpp"

#include <fstream>
#include <stdexcept>

namespace icseg {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
    fail("image_size must be a positive multiple of patch_size");
  if (image_size % 4 != 0) fail("image_size must be divisible by 4");
  if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (s1_depth < 0 || s2_depth < 0 || cross_depth < 0 || mlp_ratio < 1) fail("depths must be non-negative");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("dropout_rate must be in [0,1)");
  if (click_radius < 1) fail("click_radius must be >= 1");
  if (head_channels < 1 || head_mix_channels < 1 || detail_channels < 1) fail("head widths must be positive");
  if (eim_channels.empty()) fail("eim_channels must not be empty");
  for (int c : eim_channels)
    if (c < 1) fail("eim_channels must be positive");
  const int stride = 1 << eim_channels.size();
  if (eim_crop_size % stride != 0 || image_size % stride != 0)
    fail("image_size and eim_crop_size must be divisible by the encoder stride");
  if (eim_proj_channels < 1) fail("eim_proj_channels must be positive");
  if (eim_scales.empty()) fail("eim_scales must not be empty");
  for (double s : eim_scales)
    if (!(s > 0)) fail("eim_scales must be positive");
  if (eim_softmax_axis != "kernel" && eim_softmax_axis != "spatial") fail("eim_softmax_axis must be kernel or spatial");
  if (eim_reduce != "project" && eim_reduce != "mean") fail("eim_reduce must be project or mean");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.profile = "full";
  c.image_size = 448;
  c.patch_size = 16;
  c.embed_dim = 768;
  c.num_heads = 12;
  c.s1_depth = 6;
  c.s2_depth = 6;
  c.cross_depth = 3;
  c.dropout_rate = 0.1;
  c.click_radius = 5;
  c.head_channels = 256;
  c.head_mix_channels = 64;
  c.eim_channels = {64, 128, 512};
  c.eim_proj_channels = 256;
  c.eim_crop_size = 224;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.profile = "tiny";
  c.image_size = 32;
  c.patch_size = 8;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.s1_depth = 1;
  c.s2_depth = 1;
  c.cross_depth = 1;
  c.head_channels = 8;
  c.head_mix_channels = 8;
  c.detail_channels = 4;
  c.eim_channels = {4, 8, 8};
  c.eim_proj_channels = 8;
  c.eim_crop_size = 16;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"profile", c.profile},
                     {"image_size", c.image_size},
                     {"patch_size", c.patch_size},
                     {"embed_dim", c.embed_dim},
                     {"num_heads", c.num_heads},
                     {"s1_depth", c.s1_depth},
                     {"s2_depth", c.s2_depth},
                     {"cross_depth", c.cross_depth},
                     {"mlp_ratio", c.mlp_ratio},
                     {"dropout_rate", c.dropout_rate},
                     {"click_radius", c.click_radius},
                     {"head_channels", c.head_channels},
                     {"head_mix_channels", c.head_mix_channels},
                     {"head_detail", c.head_detail},
                     {"detail_channels", c.detail_channels},
                     {"use_eim", c.use_eim},
                     {"eim_channels", c.eim_channels},
                     {"eim_proj_channels", c.eim_proj_channels},
                     {"eim_crop_size", c.eim_crop_size},
                     {"eim_scales", c.eim_scales},
                     {"eim_softmax_axis", c.eim_softmax_axis},
                     {"eim_reduce", c.eim_reduce}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d = j.value("profile", std::string("desk")) == "full" ? ModelConfig::full() : ModelConfig::desk();
  c = d;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("profile", c.profile);
  get("image_size", c.image_size);
  get("patch_size", c.patch_size);
  get("embed_dim", c.embed_dim);
  get("num_heads", c.num_heads);
  get("s1_depth", c.s1_depth);
  get("s2_depth", c.s2_depth);
  get("cross_depth", c.cross_depth);
  get("mlp_ratio", c.mlp_ratio);
  get("dropout_rate", c.dropout_rate);
  get("click_radius", c.click_radius);
  get("head_channels", c.head_channels);
  get("head_mix_channels", c.head_mix_channels);
  get("head_detail", c.head_detail);
  get("detail_channels", c.detail_channels);
  get("use_eim", c.use_eim);
  get("eim_channels", c.eim_channels);
  get("eim_proj_channels", c.eim_proj_channels);
  get("eim_crop_size", c.eim_crop_size);
  get("eim_scales", c.eim_scales);
  get("eim_softmax_axis", c.eim_softmax_axis);
  get("eim_reduce", c.eim_reduce);
  c.validate();
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(in).get<ModelConfig>();
}

void save_model_config(const ModelConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << nlohmann::json(c).dump(2) << "\n";
}

}  // namespace icseg
