#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "icseg/blocks.hpp"
#include "icseg/geometry.hpp"

namespace icseg {

struct ExemplarCrop {
  Image crop;
  double scale = 1.0;
  BoundingBox source_bbox;
};

/// Tight box scaled about its center by `scale` and clipped to `bounds`.
BoundingBox scale_bbox(const BoundingBox& box, double scale, Shape bounds);

/// One crop per scale around the exemplar mask.
std::vector<ExemplarCrop> crop_exemplar(const Image& image, const BinaryMask& mask,
                                        const std::vector<double>& scales = {0.8, 1.0, 1.2});

/// R_f = image kernels correlated with exemplar kernels: (HoWo x C) . (K x C)^T.
template <typename S>
Var<S> correlate(Var<S> feat_o_p, Var<S> feat_e_p) {
  if (feat_o_p.cols() != feat_e_p.cols()) throw std::invalid_argument("correlate: channel counts differ");
  return ad::matmul_nt(feat_o_p, feat_e_p);
}

/// Softmax(R_f / sqrt(He*We*Ce)) along the kernel axis (per image position)
/// or, with spatial = true, along the image positions (per kernel).
template <typename S>
Var<S> normalize_response(Var<S> raw, int he, int we, int ce, bool spatial = false) {
  if (!raw.value().allFinite()) throw std::invalid_argument("normalize_response: non-finite response");
  if (he < 1 || we < 1 || ce < 1) throw std::invalid_argument("normalize_response: sizes must be positive");
  const Var<S> scaled = ad::scale(raw, S(1) / std::sqrt(static_cast<S>(he) * we * ce));
  if (!spatial) return ad::softmax_rows(scaled);
  return ad::transpose(ad::softmax_rows(ad::transpose(scaled)));
}

/// Strided 3x3 conv stack with ReLU: each stage halves the resolution.
template <typename S>
struct FeatureEncoder {
  std::vector<Conv2d<S>> stages;

  static FeatureEncoder make(ParameterStore<S>& store, const std::string& path, const std::vector<int>& channels,
                             std::mt19937_64& rng) {
    FeatureEncoder e;
    int in = 3;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      e.stages.push_back(
          Conv2d<S>::make(store, path + ".conv" + std::to_string(i), in, channels[i], 3, 2, 1, Init::he, rng));
      in = channels[i];
    }
    return e;
  }

  int stride() const { return 1 << stages.size(); }
  int channels() const { return stages.back().lin.out(); }

  Var<S> operator()(Tape<S>& t, Var<S> x, int height, int width, int* out_h, int* out_w) const {
    if (height < stride() || width < stride() || height % stride() != 0 || width % stride() != 0)
      throw std::invalid_argument("extract_features: input " + std::to_string(height) + "x" + std::to_string(width) +
                                  " not divisible by encoder stride " + std::to_string(stride()));
    int h = height, w = width;
    for (const auto& s : stages) x = ad::relu(s(t, x, h, w, &h, &w));
    *out_h = h;
    *out_w = w;
    return x;
  }
};

/// Exemplar-informed module: exemplar kernels correlated against whole-image
/// features, normalised, and merged into the recall queries.
template <typename S>
struct ExemplarModule {
  FeatureEncoder<S> encoder;
  Linear<S> proj_image, proj_exemplar, merge;
  int crop_size = 32;
  bool spatial_softmax = false;
  bool reduce_mean = false;

  struct Output {
    Var<S> guided;    ///< N x D additive query offset
    Var<S> raw;       ///< HoWo x K correlation
    Var<S> response;  ///< normalised response
    int ho = 0, wo = 0, he = 0, we = 0;
  };

  static ExemplarModule make(ParameterStore<S>& store, const std::string& path, const std::vector<int>& channels,
                             int proj_channels, int crop_size, int embed_dim, const std::string& softmax_axis,
                             const std::string& reduce, std::mt19937_64& rng) {
    ExemplarModule m;
    m.encoder = FeatureEncoder<S>::make(store, path + ".encoder", channels, rng);
    m.proj_image = Linear<S>::make(store, path + ".proj_image", channels.back(), proj_channels, Init::trunc_normal, rng);
    m.proj_exemplar =
        Linear<S>::make(store, path + ".proj_exemplar", channels.back(), proj_channels, Init::trunc_normal, rng);
    m.crop_size = crop_size;
    const int side = crop_size >> channels.size();
    const int k = side * side;
    m.spatial_softmax = softmax_axis == "spatial";
    m.reduce_mean = reduce == "mean";
    m.merge = Linear<S>::make(store, path + ".merge", m.reduce_mean ? 1 : k, embed_dim, Init::zero, rng);
    return m;
  }

  /// image: (H*W) x 3; crops: crop_size^2 x 3 each (one per scale).
  Output operator()(Tape<S>& t, Var<S> image, int height, int width, const std::vector<Var<S>>& crops,
                    int token_grid) const {
    if (crops.empty()) throw std::invalid_argument("exemplar module: no exemplar crops");
    Output o;
    const Var<S> feat_o = encoder(t, image, height, width, &o.ho, &o.wo);
    std::vector<Var<S>> per_scale;
    for (const auto& c : crops) per_scale.push_back(encoder(t, c, crop_size, crop_size, &o.he, &o.we));
    Var<S> feat_e = per_scale.front();
    for (std::size_t i = 1; i < per_scale.size(); ++i) feat_e = ad::add(feat_e, per_scale[i]);
    feat_e = ad::scale(feat_e, S(1) / static_cast<S>(per_scale.size()));

    o.raw = correlate(proj_image(t, feat_o), proj_exemplar(t, feat_e));
    o.response = normalize_response(o.raw, o.he, o.we, encoder.channels(), spatial_softmax);
    Var<S> r = reduce_mean ? ad::mean_cols(o.response) : o.response;
    r = ad::resize_bilinear(r, o.ho, o.wo, token_grid, token_grid);
    o.guided = merge(t, r);
    return o;
  }
};

/// Adds the guided query to the recall queries.
template <typename S>
Var<S> guided_query_merge(Var<S> guided, Var<S> recall_queries) {
  if (guided.rows() != recall_queries.rows() || guided.cols() != recall_queries.cols())
    throw std::invalid_argument("guided_query_merge: grid mismatch");
  return ad::add(recall_queries, guided);
}

}  // namespace icseg
