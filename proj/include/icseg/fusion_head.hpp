#pragma once

#include <string>
#include <vector>

#include "icseg/blocks.hpp"

namespace icseg {

/// concat(F_e, F_r) -> 1x1 -> depth-wise 3x3 -> 1x1, plus a 1x1 skip from the
/// concatenation; the two paths are summed.
template <typename S>
struct ChannelFusion {
  Linear<S> reduce, expand, skip;
  DepthwiseConv3x3<S> depthwise;

  static ChannelFusion make(ParameterStore<S>& store, const std::string& path, int dim, std::mt19937_64& rng) {
    ChannelFusion f;
    f.reduce = Linear<S>::make(store, path + ".reduce", 2 * dim, dim, Init::trunc_normal, rng);
    f.depthwise = DepthwiseConv3x3<S>::make(store, path + ".depthwise", dim, rng);
    f.expand = Linear<S>::make(store, path + ".expand", dim, dim, Init::trunc_normal, rng);
    f.skip = Linear<S>::make(store, path + ".skip", 2 * dim, dim, Init::trunc_normal, rng);
    return f;
  }

  /// Closed-form parameter count for width D.
  static std::int64_t parameter_count(std::int64_t d) {
    return (2 * d * d + d) + (9 * d + d) + (d * d + d) + (2 * d * d + d);
  }

  Var<S> operator()(Tape<S>& t, Var<S> f_e, Var<S> f_r, int grid) const {
    if (f_e.rows() != f_r.rows() || f_e.cols() != f_r.cols())
      throw std::invalid_argument("channel_fusion: exemplar and recall features differ in shape");
    if (f_e.rows() != static_cast<Eigen::Index>(grid) * grid)
      throw std::invalid_argument("channel_fusion: token count does not match the grid");
    const Var<S> cat = ad::concat_cols<S>({f_e, f_r});
    const Var<S> main = expand(t, depthwise(t, reduce(t, cat), grid, grid));
    return ad::add(main, skip(t, cat));
  }
};

/// Hierarchical head: each tap is unified to C_h channels, upsampled x2 by a
/// transposed convolution (then bilinearly if needed) to the 1/4-resolution
/// grid, concatenated and mixed per position. An optional full-resolution
/// detail branch (3x3 conv over the network input stack) joins before the last
/// per-pixel layers. Returns logits, (H*W) x 1.
template <typename S>
struct SegmentationHead {
  std::vector<Linear<S>> unify;
  std::vector<TransposedConv2x2<S>> upsample;
  Linear<S> mix, mix_out;
  bool detail = false;
  Conv2d<S> detail_conv;
  Linear<S> final_hidden, final_out;

  static SegmentationHead make(ParameterStore<S>& store, const std::string& path, int taps, int dim, int channels,
                               int mix_channels, bool with_detail, int detail_in, int detail_channels,
                               std::mt19937_64& rng) {
    SegmentationHead h;
    for (int i = 0; i < taps; ++i) {
      h.unify.push_back(
          Linear<S>::make(store, path + ".unify" + std::to_string(i), dim, channels, Init::trunc_normal, rng));
      h.upsample.push_back(TransposedConv2x2<S>::make(store, path + ".up" + std::to_string(i), channels, channels, rng));
    }
    h.mix = Linear<S>::make(store, path + ".mix", taps * channels, mix_channels, Init::he, rng);
    h.detail = with_detail;
    if (with_detail) {
      h.detail_conv = Conv2d<S>::make(store, path + ".detail", detail_in, detail_channels, 3, 1, 1, Init::he, rng);
      h.final_hidden =
          Linear<S>::make(store, path + ".final_hidden", mix_channels + detail_channels, mix_channels, Init::he, rng);
      h.final_out = Linear<S>::make(store, path + ".final_out", mix_channels, 1, Init::trunc_normal, rng);
    } else {
      h.mix_out = Linear<S>::make(store, path + ".mix_out", mix_channels, 1, Init::trunc_normal, rng);
    }
    return h;
  }

  /// taps: N x D token grids (grid x grid). detail_input: (H*W) x C raster at
  /// target resolution (ignored without the detail branch).
  Var<S> operator()(Tape<S>& t, const std::vector<Var<S>>& taps, int grid, int quarter, const Var<S>* detail_input,
                    int target_h, int target_w) const {
    if (taps.empty()) throw std::invalid_argument("segmentation_head: no feature maps");
    if (taps.size() != unify.size()) throw std::invalid_argument("segmentation_head: wrong number of taps");
    std::vector<Var<S>> levels;
    for (std::size_t i = 0; i < taps.size(); ++i) {
      Var<S> x = upsample[i](t, unify[i](t, taps[i]), grid, grid);
      levels.push_back(ad::resize_bilinear(x, 2 * grid, 2 * grid, quarter, quarter));
    }
    const Var<S> mixed = ad::relu(mix(t, ad::concat_cols(levels)));
    if (!detail) return ad::resize_bilinear(mix_out(t, mixed), quarter, quarter, target_h, target_w);
    if (!detail_input) throw std::invalid_argument("segmentation_head: detail branch needs the input stack");
    const Var<S> up = ad::resize_bilinear(mixed, quarter, quarter, target_h, target_w);
    const Var<S> fine = ad::relu(detail_conv(t, *detail_input, target_h, target_w, nullptr, nullptr));
    return final_out(t, ad::relu(final_hidden(t, ad::concat_cols<S>({up, fine}))));
  }
};

}  // namespace icseg
