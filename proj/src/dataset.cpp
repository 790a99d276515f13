#include "icseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "icseg/geometry.hpp"
#include "icseg/image_io.hpp"
#include "icseg/morphology.hpp"
#include "icseg/seed.hpp"

namespace icseg {

using nlohmann::json;

namespace {

std::string ptr(const std::string& base, std::size_t i) { return base + "/" + std::to_string(i); }

const json& field(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object()) throw CocoError(where, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw CocoError(where, "missing field '" + key + "'");
  return *it;
}

std::int64_t int_field(const json& obj, const std::string& key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_number_integer()) throw CocoError(where + "/" + key, "expected an integer");
  return v.get<std::int64_t>();
}

const json& array_or_empty(const json& j, const std::string& key) {
  static const json empty = json::array();
  const auto it = j.find(key);
  if (it == j.end()) return empty;
  if (!it->is_array()) throw CocoError("/" + key, "expected an array");
  return *it;
}

// Decodes one segmentation; throws std::runtime_error on bad content.
Rle decode_segmentation(const json& seg, int h, int w) {
  if (seg.is_array()) {
    if (seg.empty()) throw std::runtime_error("empty polygon list");
    std::vector<Rle> parts;
    for (const auto& poly : seg) {
      if (!poly.is_array()) throw std::runtime_error("polygon is not an array");
      std::vector<double> xy;
      for (const auto& v : poly) {
        if (!v.is_number()) throw std::runtime_error("polygon coordinate is not a number");
        xy.push_back(v.get<double>());
      }
      if (xy.size() < 6 || xy.size() % 2 != 0) throw std::runtime_error("polygon needs an even count of >= 6 values");
      parts.push_back(rle_from_polygon(xy, h, w));
    }
    return rle_merge(parts);
  }
  if (!seg.is_object()) throw std::runtime_error("segmentation is neither polygons nor RLE");
  const auto size = seg.find("size");
  const auto counts = seg.find("counts");
  if (size == seg.end() || counts == seg.end()) throw std::runtime_error("RLE needs size and counts");
  if (!size->is_array() || size->size() != 2) throw std::runtime_error("RLE size must be [height, width]");
  const int rh = (*size)[0].get<int>();
  const int rw = (*size)[1].get<int>();
  if (rh != h || rw != w) throw std::runtime_error("RLE size differs from the image size");
  if (counts->is_string()) return rle_from_string(counts->get<std::string>(), h, w);
  if (!counts->is_array()) throw std::runtime_error("RLE counts must be a string or an array");
  Rle r{h, w, {}};
  std::uint64_t total = 0;
  for (const auto& c : *counts) {
    if (!c.is_number_integer() || c.get<std::int64_t>() < 0) throw std::runtime_error("RLE count is not a non-negative integer");
    r.counts.push_back(c.get<std::uint32_t>());
    total += r.counts.back();
  }
  if (total != static_cast<std::uint64_t>(h) * w) throw std::runtime_error("RLE counts do not cover the image");
  return r;
}

}  // namespace

const CocoImage* CocoDataset::image(std::int64_t id) const {
  for (const auto& im : images)
    if (im.id == id) return &im;
  return nullptr;
}

CocoDataset parse_coco(const json& j) {
  if (!j.is_object()) throw CocoError("", "annotation file must be a JSON object");
  CocoDataset d;
  std::map<std::int64_t, std::size_t> image_index;
  const json& images = array_or_empty(j, "images");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = ptr("/images", i);
    CocoImage im;
    im.id = int_field(images[i], "id", where);
    im.height = static_cast<int>(int_field(images[i], "height", where));
    im.width = static_cast<int>(int_field(images[i], "width", where));
    if (im.height <= 0 || im.width <= 0) throw CocoError(where, "image size must be positive");
    if (images[i].contains("file_name")) im.file_name = images[i]["file_name"].get<std::string>();
    if (!image_index.emplace(im.id, d.images.size()).second) throw CocoError(where, "duplicate image id");
    d.images.push_back(std::move(im));
  }
  const json& cats = array_or_empty(j, "categories");
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string where = ptr("/categories", i);
    CocoCategory c;
    c.id = int_field(cats[i], "id", where);
    if (cats[i].contains("name")) c.name = cats[i]["name"].get<std::string>();
    d.categories.push_back(std::move(c));
  }
  const json& anns = array_or_empty(j, "annotations");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = ptr("/annotations", i);
    CocoAnnotation a;
    a.id = int_field(anns[i], "id", where);
    a.image_id = int_field(anns[i], "image_id", where);
    a.category_id = int_field(anns[i], "category_id", where);
    if (anns[i].contains("iscrowd")) a.iscrowd = anns[i]["iscrowd"].get<int>() != 0;
    const auto it = image_index.find(a.image_id);
    if (it == image_index.end()) throw CocoError(where + "/image_id", "unknown image id " + std::to_string(a.image_id));
    const CocoImage& im = d.images[it->second];
    const json& seg = field(anns[i], "segmentation", where);
    try {
      a.rle = decode_segmentation(seg, im.height, im.width);
    } catch (const std::exception& e) {
      a.error = where + "/segmentation: " + e.what();
    }
    d.annotations.push_back(std::move(a));
  }
  return d;
}

CocoDataset load_coco(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CocoError("", std::string("invalid JSON: ") + e.what());
  }
  return parse_coco(j);
}

json coco_to_json(const CocoDataset& d) {
  json j;
  j["images"] = json::array();
  for (const auto& im : d.images)
    j["images"].push_back({{"id", im.id}, {"file_name", im.file_name}, {"height", im.height}, {"width", im.width}});
  j["categories"] = json::array();
  for (const auto& c : d.categories) j["categories"].push_back({{"id", c.id}, {"name", c.name}});
  j["annotations"] = json::array();
  for (const auto& a : d.annotations) {
    if (!a.rle) throw std::invalid_argument("coco_to_json: annotation " + std::to_string(a.id) + " has no mask");
    const BoundingBox b = tight_bbox(rle_decode(*a.rle));
    j["annotations"].push_back({{"id", a.id},
                                {"image_id", a.image_id},
                                {"category_id", a.category_id},
                                {"iscrowd", a.iscrowd ? 1 : 0},
                                {"area", a.rle->area()},
                                {"bbox", {b.col0, b.row0, b.width(), b.height()}},
                                {"segmentation",
                                 {{"size", {a.rle->height, a.rle->width}}, {"counts", rle_to_string(*a.rle)}}}});
  }
  return j;
}

void MoisSample::validate() const {
  if (masks.size() < 2) throw std::invalid_argument("mois sample: fewer than two masks");
  if (annotation_ids.size() != masks.size()) throw std::invalid_argument("mois sample: ids and masks differ in count");
  if (exemplar_index < 0 || exemplar_index >= static_cast<int>(masks.size()))
    throw std::invalid_argument("mois sample: exemplar index out of range");
  for (const auto& m : masks) {
    if (m.height != height || m.width != width) throw std::invalid_argument("mois sample: mask size differs");
    if (m.area() == 0) throw std::invalid_argument("mois sample: empty mask");
  }
  for (std::size_t i = 0; i < masks.size(); ++i)
    for (std::size_t k = i + 1; k < masks.size(); ++k)
      if (masks[i] == masks[k]) throw std::invalid_argument("mois sample: duplicate masks");
  if (exemplar_clicks.empty() || exemplar_clicks.size() > 20)
    throw std::invalid_argument("mois sample: exemplar click count outside [1, 20]");
  validate_clicks(exemplar_clicks, height, width);
}

MoisBuild build_mois(const CocoDataset& d, std::uint64_t seed, const MoisOptions& opt) {
  if (opt.max_clicks < 1 || opt.max_clicks > opt.constraints.max_total_clicks)
    throw std::invalid_argument("build_mois: max_clicks outside [1, constraints.max_total_clicks]");
  MoisBuild out;
  std::vector<const CocoAnnotation*> sorted;
  for (const auto& a : d.annotations) sorted.push_back(&a);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<const CocoAnnotation*>> groups;
  std::set<std::pair<std::int64_t, std::int64_t>> broken;
  for (const auto* a : sorted) {
    const auto key = std::make_pair(a->image_id, a->category_id);
    if (a->iscrowd && !opt.include_crowd) {
      ++out.dropped_crowd;
      continue;
    }
    if (!a->rle) {
      out.skipped.push_back("annotation " + std::to_string(a->id) + ": " + a->error);
      broken.insert(key);
      continue;
    }
    if (a->rle->area() < opt.min_area) {
      ++out.dropped_small;
      continue;
    }
    groups[key].push_back(a);
  }

  std::map<std::int64_t, const CocoImage*> image_by_id;
  for (const auto& im : d.images) image_by_id.emplace(im.id, &im);
  for (const auto& [key, anns] : groups) {
    if (anns.size() < 2 || broken.count(key)) continue;
    const auto found = image_by_id.find(key.first);
    if (found == image_by_id.end()) throw std::invalid_argument("build_mois: unknown image id " + std::to_string(key.first));
    const CocoImage* im = found->second;
    MoisSample s;
    s.image_id = key.first;
    s.category_id = key.second;
    s.file_name = im->file_name;
    s.height = im->height;
    s.width = im->width;
    for (const auto* a : anns) {
      s.annotation_ids.push_back(a->id);
      s.masks.push_back(*a->rle);
    }
    std::mt19937_64 rng(derive_seed({seed, static_cast<std::uint64_t>(key.first), static_cast<std::uint64_t>(key.second)}));
    s.exemplar_index = std::uniform_int_distribution<int>(0, static_cast<int>(s.masks.size()) - 1)(rng);
    const int n_total = std::uniform_int_distribution<int>(1, opt.max_clicks)(rng);
    const double factor = std::min(1.0, std::min(s.height, s.width) / 448.0);
    s.exemplar_clicks =
        random_click_simulation(rle_decode(s.exemplar_mask()), n_total, opt.constraints.scaled(factor), rng()).clicks;
    out.samples.push_back(std::move(s));
  }
  return out;
}

DatasetStats dataset_stats(const std::vector<MoisSample>& samples) {
  DatasetStats st;
  st.n_samples = samples.size();
  std::set<std::int64_t> images;
  std::size_t objects = 0;
  for (const auto& s : samples) {
    images.insert(s.image_id);
    objects += s.masks.size();
  }
  st.n_images = images.size();
  st.mean_objects = samples.empty() ? 0.0 : static_cast<double>(objects) / samples.size();
  return st;
}

json sample_to_json(const MoisSample& s) {
  json masks = json::array();
  for (const auto& m : s.masks) masks.push_back({{"size", {m.height, m.width}}, {"counts", rle_to_string(m)}});
  json clicks = json::array();
  for (const auto& c : s.exemplar_clicks)
    clicks.push_back({{"row", c.row}, {"col", c.col}, {"polarity", to_string(c.polarity)}});
  return {{"schema", kMoisSchema},
          {"image_id", s.image_id},
          {"file_name", s.file_name},
          {"height", s.height},
          {"width", s.width},
          {"category_id", s.category_id},
          {"annotation_ids", s.annotation_ids},
          {"exemplar_index", s.exemplar_index},
          {"masks", masks},
          {"exemplar_clicks", clicks}};
}

MoisSample sample_from_json(const json& j) {
  if (j.value("schema", std::string()) != kMoisSchema)
    throw std::invalid_argument("sample: unsupported schema '" + j.value("schema", std::string()) + "'");
  MoisSample s;
  s.image_id = j.at("image_id").get<std::int64_t>();
  s.file_name = j.at("file_name").get<std::string>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.category_id = j.at("category_id").get<std::int64_t>();
  s.annotation_ids = j.at("annotation_ids").get<std::vector<std::int64_t>>();
  s.exemplar_index = j.at("exemplar_index").get<int>();
  for (const auto& m : j.at("masks"))
    s.masks.push_back(rle_from_string(m.at("counts").get<std::string>(), m.at("size")[0].get<int>(),
                                      m.at("size")[1].get<int>()));
  for (const auto& c : j.at("exemplar_clicks"))
    push_click(s.exemplar_clicks, c.at("row").get<int>(), c.at("col").get<int>(),
               polarity_from_string(c.at("polarity").get<std::string>()));
  s.validate();
  return s;
}

void write_samples(const std::vector<MoisSample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<MoisSample> read_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<MoisSample> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

namespace {

using Rgb = Eigen::Vector3f;

struct Look {
  Rgb color;
  Rgb accent;
  int texture = 0;  // 0 flat, 1 stripes, 2 checker
  double period = 4;
  double angle = 0;
};

Rgb random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.05f, 0.95f);
  return {u(rng), u(rng), u(rng)};
}

Rgb distinct_color(std::mt19937_64& rng, const std::vector<Rgb>& others, float min_dist) {
  Rgb c = random_color(rng);
  for (int tries = 0; tries < 100; ++tries) {
    bool ok = true;
    for (const auto& o : others) ok = ok && (c - o).norm() >= min_dist;
    if (ok) break;
    c = random_color(rng);
  }
  return c;
}

BinaryMask rasterize(ShapeKind kind, int size, double cr, double cc, double extent, double angle) {
  BinaryMask m = empty_mask({size, size});
  const double ca = std::cos(angle), sa = std::sin(angle);
  // triangle vertices (circumradius = extent)
  double vy[3], vx[3];
  for (int k = 0; k < 3; ++k) {
    const double a = angle + k * 2.0 * std::numbers::pi / 3.0;
    vy[k] = cr + extent * std::sin(a);
    vx[k] = cc + extent * std::cos(a);
  }
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double y = r + 0.5 - cr, x = c + 0.5 - cc;
      bool in = false;
      switch (kind) {
        case ShapeKind::disk: in = x * x + y * y <= extent * extent; break;
        case ShapeKind::square: {
          const double u = ca * x + sa * y, v = -sa * x + ca * y;
          in = std::abs(u) <= extent && std::abs(v) <= extent;
          break;
        }
        case ShapeKind::triangle: {
          const double py = r + 0.5, px = c + 0.5;
          double s[3];
          for (int k = 0; k < 3; ++k) {
            const int n = (k + 1) % 3;
            s[k] = (vx[n] - vx[k]) * (py - vy[k]) - (vy[n] - vy[k]) * (px - vx[k]);
          }
          in = (s[0] >= 0 && s[1] >= 0 && s[2] >= 0) || (s[0] <= 0 && s[1] <= 0 && s[2] <= 0);
          break;
        }
      }
      m(r, c) = in;
    }
  return m;
}

BinaryMask largest_component(const BinaryMask& m) {
  const Components cc = connected_components(m);
  if (cc.count() <= 1) return m;
  const auto best = std::max_element(cc.areas.begin(), cc.areas.end()) - cc.areas.begin();
  return cc.component(static_cast<int>(best) + 1);
}

BinaryMask dilate(const BinaryMask& m) {
  BinaryMask out = m;
  const int h = static_cast<int>(m.rows()), w = static_cast<int>(m.cols());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (m(r, c))
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr >= 0 && rr < h && cc >= 0 && cc < w) out(rr, cc) = true;
          }
  return out;
}

float texture_value(const Look& l, int r, int c) {
  const double u = std::cos(l.angle) * c + std::sin(l.angle) * r;
  switch (l.texture) {
    case 1: return std::fmod(std::floor(u / l.period), 2.0) == 0 ? 0.f : 1.f;
    case 2: return (static_cast<int>(std::floor(r / l.period)) + static_cast<int>(std::floor(c / l.period))) % 2 == 0 ? 0.f : 1.f;
    default: return 0.f;
  }
}

}  // namespace

std::uint64_t SynthOptions::effective_min_area() const {
  if (min_area > 0) return min_area;
  return static_cast<std::uint64_t>(std::ceil(400.0 * image_size * image_size / (448.0 * 448.0)));
}

MoisOptions SynthOptions::mois_options() const {
  MoisOptions m;
  m.min_area = effective_min_area();
  return m;
}

SynthImage synth_image(std::uint64_t seed, const SynthOptions& opt) {
  if (opt.image_size < 16) throw std::invalid_argument("synth_image: image_size must be >= 16");
  if (opt.min_instances < 2 || opt.max_instances < opt.min_instances)
    throw std::invalid_argument("synth_image: need 2 <= min_instances <= max_instances");
  if (!(opt.min_extent > 0) || opt.max_extent < opt.min_extent || opt.max_extent > 0.45)
    throw std::invalid_argument("synth_image: need 0 < min_extent <= max_extent <= 0.45");
  const int size = opt.image_size;
  const std::uint64_t min_area = opt.effective_min_area();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int attempt = 0;; ++attempt) {
    int n = std::uniform_int_distribution<int>(opt.min_instances, opt.max_instances)(rng) - attempt;
    n = std::max(n, 2);
    const auto repeated = static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, 2)(rng));
    std::vector<ShapeKind> wanted{repeated, repeated};
    while (static_cast<int>(wanted.size()) < n)
      wanted.push_back(static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, 2)(rng)));

    SynthImage out;
    BinaryMask occupied = empty_mask({size, size});
    for (std::size_t i = 0; i < wanted.size(); ++i) {
      for (int t = 0; t < opt.placement_tries; ++t) {
        const double extent = size * (opt.min_extent + (opt.max_extent - opt.min_extent) * unit(rng));
        const double margin = extent + 1;
        const double cr = margin + unit(rng) * (size - 2 * margin);
        const double cc = margin + unit(rng) * (size - 2 * margin);
        BinaryMask m = rasterize(wanted[i], size, cr, cc, extent, unit(rng) * 2 * std::numbers::pi);
        m = largest_component(m);  // sharp tips can leave diagonal-only pixels
        if (static_cast<std::uint64_t>(m.count()) < min_area) continue;
        if ((dilate(m) && occupied).any()) continue;
        occupied = occupied || m;
        out.masks.push_back(m);
        out.kinds.push_back(wanted[i]);
        break;
      }
    }
    int counts[3] = {0, 0, 0};
    for (auto k : out.kinds) ++counts[static_cast<int>(k)];
    if (std::max({counts[0], counts[1], counts[2]}) < 2 && attempt < 50) continue;
    if (out.masks.size() < 2) throw std::runtime_error("synth_image: could not place two shapes");

    // appearance: background plus one look per kind
    Look bg;
    bg.color = random_color(rng);
    bg.accent = random_color(rng);
    bg.texture = std::uniform_int_distribution<int>(0, 2)(rng);
    bg.period = 3 + 5 * unit(rng);
    bg.angle = unit(rng) * std::numbers::pi;
    std::vector<Rgb> used{bg.color};
    Look looks[3];
    for (auto& l : looks) {
      l.color = distinct_color(rng, used, 0.45f);
      used.push_back(l.color);
      l.accent = l.color + 0.25f * (random_color(rng) - Rgb::Constant(0.5f));
      l.texture = std::uniform_int_distribution<int>(0, 2)(rng);
      l.period = 2 + 3 * unit(rng);
      l.angle = unit(rng) * std::numbers::pi;
    }
    std::normal_distribution<float> noise(0.f, 0.03f);
    out.image = Image(size, size);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        const Look* look = &bg;
        float mix = 0.3f;
        for (std::size_t i = 0; i < out.masks.size(); ++i)
          if (out.masks[i](r, c)) {
            look = &looks[static_cast<int>(out.kinds[i])];
            mix = 0.5f;
          }
        const float t = texture_value(*look, r, c);
        const Rgb px = look->color + mix * t * (look->accent - look->color);
        for (int ch = 0; ch < 3; ++ch)  // 8-bit levels, so a PNG round trip is lossless
          out.image(r, c, ch) = std::round(std::clamp(px[ch] + noise(rng), 0.f, 1.f) * 255.f) / 255.f;
      }
    return out;
  }
}

SynthSet synth_shapes(int n_images, std::uint64_t seed, const SynthOptions& opt) {
  if (n_images < 1) throw std::invalid_argument("synth_shapes: n_images must be >= 1");
  SynthSet set;
  set.coco.categories = {{1, "disk"}, {2, "square"}, {3, "triangle"}};
  std::int64_t ann_id = 1;
  for (int i = 0; i < n_images; ++i) {
    SynthImage im = synth_image(derive_seed({seed, static_cast<std::uint64_t>(i)}), opt);
    const std::int64_t id = i + 1;
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06d.png", i + 1);
    set.coco.images.push_back({id, name, im.image.height(), im.image.width()});
    for (std::size_t k = 0; k < im.masks.size(); ++k) {
      CocoAnnotation a;
      a.id = ann_id++;
      a.image_id = id;
      a.category_id = static_cast<int>(im.kinds[k]) + 1;
      a.rle = rle_encode(im.masks[k]);
      set.coco.annotations.push_back(std::move(a));
    }
    set.images.push_back(std::move(im));
  }
  return set;
}

void write_synth_set(const SynthSet& set, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  for (std::size_t i = 0; i < set.images.size(); ++i)
    write_png(set.images[i].image, (fs::path(dir) / set.coco.images[i].file_name).string());
  std::ofstream out(fs::path(dir) / "annotations.json");
  out << coco_to_json(set.coco).dump();
  if (!out) throw std::runtime_error("cannot write annotations under " + dir);
}

Image load_sample_image(const MoisSample& s, const std::string& image_root) {
  const Image im = read_image((std::filesystem::path(image_root) / s.file_name).string());
  if (im.height() != s.height || im.width() != s.width)
    throw std::runtime_error("image " + s.file_name + " does not match its annotation size");
  return im;
}

}  // namespace icseg
