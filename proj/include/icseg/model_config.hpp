#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace icseg {

struct ModelConfig {
  std::string profile = "desk";
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 128;
  int num_heads = 4;
  int s1_depth = 4;
  int s2_depth = 2;
  int cross_depth = 2;
  int mlp_ratio = 4;
  double dropout_rate = 0.0;
  int click_radius = 3;

  // segmentation head
  int head_channels = 64;
  int head_mix_channels = 32;
  bool head_detail = true;
  int detail_channels = 16;

  // exemplar-informed module
  bool use_eim = true;
  std::vector<int> eim_channels{16, 32, 64};
  int eim_proj_channels = 32;
  int eim_crop_size = 32;
  std::vector<double> eim_scales{0.8, 1.0, 1.2};
  /// "kernel": softmax over exemplar kernels at each image position;
  /// "spatial": softmax over image positions for each kernel.
  std::string eim_softmax_axis = "kernel";
  /// "project": K response channels mapped to D by a learned layer;
  /// "mean": responses averaged over K first.
  std::string eim_reduce = "project";

  int grid() const { return image_size / patch_size; }
  int tokens() const { return grid() * grid(); }
  int head_grid() const { return image_size / 4; }

  void validate() const;

  static ModelConfig desk();
  static ModelConfig full();
  /// Very small network for fast tests and service smoke runs.
  static ModelConfig tiny();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

ModelConfig load_model_config(const std::string& path);
void save_model_config(const ModelConfig& c, const std::string& path);

}  // namespace icseg
