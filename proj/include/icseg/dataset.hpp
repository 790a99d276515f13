#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "icseg/click_simulator.hpp"
#include "icseg/rle.hpp"
#include "icseg/types.hpp"
#include "json.hpp"

namespace icseg {

/// Malformed annotation file. `where` is a JSON pointer to the offending node.
class CocoError : public std::runtime_error {
 public:
  CocoError(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

struct CocoImage {
  std::int64_t id = 0;
  std::string file_name;
  int height = 0;
  int width = 0;
};

struct CocoCategory {
  std::int64_t id = 0;
  std::string name;
};

struct CocoAnnotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  bool iscrowd = false;
  /// Decoded segmentation; empty when decoding failed (see `error`).
  std::optional<Rle> rle;
  std::string error;
};

struct CocoDataset {
  std::vector<CocoImage> images;
  std::vector<CocoCategory> categories;
  std::vector<CocoAnnotation> annotations;

  const CocoImage* image(std::int64_t id) const;
};

/// Parses COCO-format JSON. Polygon and RLE (compressed or uncompressed)
/// segmentations are accepted; an undecodable segmentation is kept with
/// `error` set so the builder can skip and report it. Structural problems
/// throw CocoError.
CocoDataset parse_coco(const nlohmann::json& j);
CocoDataset load_coco(const std::string& path);
nlohmann::json coco_to_json(const CocoDataset& d);

struct MoisSample {
  std::int64_t image_id = 0;
  std::string file_name;
  int height = 0;
  int width = 0;
  std::int64_t category_id = 0;
  std::vector<std::int64_t> annotation_ids;
  std::vector<Rle> masks;  ///< all same-category objects, including the exemplar
  int exemplar_index = 0;
  ClickSet exemplar_clicks;

  const Rle& exemplar_mask() const { return masks.at(exemplar_index); }
  /// Throws std::invalid_argument when a sample invariant fails.
  void validate() const;
};

struct MoisOptions {
  std::uint64_t min_area = 400;
  int max_clicks = 20;
  /// Click spacing at 448 px; shrunk proportionally for smaller images.
  SimulationConstraints constraints;
  bool include_crowd = false;
};

struct MoisBuild {
  std::vector<MoisSample> samples;
  std::vector<std::string> skipped;  ///< one line per annotation that failed to decode
  std::size_t dropped_small = 0;
  std::size_t dropped_crowd = 0;
};

/// One sample per (image, category) with at least two masks of area >=
/// min_area. Exemplar and clicks are drawn from a seed derived from
/// (seed, image id, category id), so output does not depend on file order.
MoisBuild build_mois(const CocoDataset& d, std::uint64_t seed, const MoisOptions& opt = {});

struct DatasetStats {
  std::size_t n_samples = 0;
  std::size_t n_images = 0;
  double mean_objects = 0.0;
};

DatasetStats dataset_stats(const std::vector<MoisSample>& samples);

/// JSON-lines sample files, one sample per line.
inline constexpr const char* kMoisSchema = "icseg.mois/1";
nlohmann::json sample_to_json(const MoisSample& s);
MoisSample sample_from_json(const nlohmann::json& j);
void write_samples(const std::vector<MoisSample>& samples, const std::string& path);
std::vector<MoisSample> read_samples(const std::string& path);

// ---------------------------------------------------------------------------
// Synthetic shapes

enum class ShapeKind { disk, square, triangle };
std::string to_string(ShapeKind k);

struct SynthOptions {
  int image_size = 64;
  int min_instances = 2;
  int max_instances = 6;
  /// Smallest allowed mask area. 0 selects 400 px scaled by image area
  /// relative to 448 x 448.
  std::uint64_t min_area = 0;
  /// Shape circumradius range as a fraction of image_size.
  double min_extent = 0.07;
  double max_extent = 0.14;
  int placement_tries = 200;

  std::uint64_t effective_min_area() const;
  /// build_mois options whose area threshold matches this generator.
  MoisOptions mois_options() const;
};

struct SynthImage {
  Image image;
  std::vector<BinaryMask> masks;
  std::vector<ShapeKind> kinds;
};

/// One image of 2-6 non-overlapping shapes; at least one shape kind appears
/// twice. Each kind has one colour/texture per image. Deterministic in seed.
SynthImage synth_image(std::uint64_t seed, const SynthOptions& opt = {});

/// n images with their COCO annotations (categories 1=disk, 2=square, 3=triangle).
struct SynthSet {
  std::vector<SynthImage> images;
  CocoDataset coco;
};
SynthSet synth_shapes(int n_images, std::uint64_t seed, const SynthOptions& opt = {});

/// Writes images/<id>.png and annotations.json under dir.
void write_synth_set(const SynthSet& set, const std::string& dir);

/// Loads the image a sample refers to, relative to `image_root`.
Image load_sample_image(const MoisSample& s, const std::string& image_root);

}  // namespace icseg
