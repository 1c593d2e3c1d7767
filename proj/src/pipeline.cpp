#include "galaxyedit/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

namespace galaxyedit {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string>& default_blocklist() {
  static const std::vector<std::string> words = {
      // body parts
      "hand", "hands", "arm", "arms", "leg", "legs", "foot", "feet", "finger", "fingers", "face", "head", "eye", "eyes",
      "ear", "ears", "nose", "mouth", "hair", "neck", "skin",
      // apparel
      "shirt", "jacket", "coat", "hat", "cap", "pants", "jeans", "shoe", "shoes", "dress", "sleeve", "glasses",
      // colors
      "red", "green", "blue", "yellow", "orange", "purple", "pink", "brown", "black", "white", "gray", "grey",
      // verbs
      "sit", "sitting", "stand", "standing", "walk", "walking", "run", "running", "hold", "holding", "eat", "eating",
      "play", "playing",
      // generic nouns
      "thing", "object", "stuff", "background", "area", "scene", "image", "picture"};
  return words;
}

namespace {

std::vector<std::string> label_tokens(const std::string& label) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : label) {
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace

std::set<std::string> load_blocklist(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open blocklist " + path.string());
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::transform(line.begin(), line.end(), line.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.insert(line);
  }
  return out;
}

FilterPolicy FilterPolicy::defaults() {
  FilterPolicy p;
  p.keyword_blocklist.insert(default_blocklist().begin(), default_blocklist().end());
  return p;
}

FilterPolicy FilterPolicy::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("policy: expected a JSON object");
  if (j.contains("blocklist") && j.contains("keyword_blocklist"))
    throw ConfigError("policy: give either 'blocklist' (a file) or 'keyword_blocklist' (a list), not both");
  FilterPolicy p = defaults();
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    try {
      if (k == "min_area_fraction") p.min_area_fraction = v.get<double>();
      else if (k == "max_area_fraction") p.max_area_fraction = v.get<double>();
      else if (k == "clip_accept_threshold") p.clip_accept_threshold = v.get<double>();
      else if (k == "dilation_kernel") p.dilation_kernel = v.get<int>();
      else if (k == "detector_threshold") p.detector_threshold = v.get<double>();
      else if (k == "max_local_std") p.max_local_std = v.get<double>();
      else if (k == "max_edge_density") p.max_edge_density = v.get<double>();
      else if (k == "quality_canny_low") p.quality_canny_low = v.get<double>();
      else if (k == "quality_canny_high") p.quality_canny_high = v.get<double>();
      else if (k == "blocklist") {
        const fs::path bp = v.get<std::string>();
        p.keyword_blocklist = load_blocklist(bp.is_absolute() ? bp : base_dir / bp);
      } else if (k == "keyword_blocklist") {
        const auto words = v.get<std::vector<std::string>>();
        p.keyword_blocklist = {words.begin(), words.end()};
      } else {
        throw ConfigError("policy: unknown key '" + k + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError("policy: bad value for '" + k + "': " + e.what());
    }
  }
  p.validate();
  return p;
}

FilterPolicy FilterPolicy::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open policy " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("policy " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

void FilterPolicy::validate() const {
  if (!(0 < min_area_fraction && min_area_fraction < max_area_fraction && max_area_fraction <= 1))
    throw ConfigError("policy: need 0 < min_area_fraction < max_area_fraction <= 1");
  if (dilation_kernel < 1 || dilation_kernel % 2 == 0) throw ConfigError("policy: dilation_kernel must be odd and >= 1");
  if (!(clip_accept_threshold >= -1 && clip_accept_threshold <= 1)) throw ConfigError("policy: clip_accept_threshold outside [-1, 1]");
  if (!(detector_threshold >= 0 && detector_threshold <= 1)) throw ConfigError("policy: detector_threshold outside [0, 1]");
  if (!(max_local_std >= 0) || !(max_edge_density >= 0 && max_edge_density <= 1))
    throw ConfigError("policy: quality bounds out of range");
  if (!(quality_canny_low >= 0 && quality_canny_low < quality_canny_high))
    throw ConfigError("policy: need 0 <= quality_canny_low < quality_canny_high");
}

bool filter_by_size(const ObjectRecord& obj, const FilterPolicy& pol) {
  return pol.min_area_fraction <= obj.area_fraction && obj.area_fraction <= pol.max_area_fraction;
}

bool filter_by_keywords(const ObjectRecord& obj, const FilterPolicy& pol) {
  for (const auto& t : label_tokens(obj.label))
    if (pol.keyword_blocklist.count(t)) return false;
  return true;
}

bool semantic_decision(double clip_pre, double clip_post, double tau) { return clip_pre >= tau && clip_post < clip_pre; }

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw ClientError("embedding dimension mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace

bool semantic_filter(ObjectRecord& obj, const Image& crop_pre, const Image& crop_post, const ModelClients& clients,
                     const FilterPolicy& pol) {
  const auto label = clients.embed_text(obj.label);
  obj.clip_pre = cosine(clients.embed_image(crop_pre), label);
  obj.clip_post = cosine(clients.embed_image(crop_post), label);
  return semantic_decision(*obj.clip_pre, *obj.clip_post, pol.clip_accept_threshold);
}

namespace {

/// Row-major float plane with replicate-border access.
struct Plane {
  int w = 0, h = 0;
  std::vector<double> v;
  Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, 0.0) {}
  double& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
  double get(int x, int y) const {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return v[static_cast<std::size_t>(y) * w + x];
  }
};

Plane gaussian_blur(const Plane& in, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double s = 0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-(i * i) / (2 * sigma * sigma));
  for (auto& x : k) x /= s;
  Plane tmp(in.w, in.h), out(in.w, in.h);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double a = 0;
      for (int i = -r; i <= r; ++i) a += k[i + r] * in.get(x + i, y);
      tmp.at(x, y) = a;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double a = 0;
      for (int i = -r; i <= r; ++i) a += k[i + r] * tmp.get(x, y + i);
      out.at(x, y) = a;
    }
  return out;
}

}  // namespace

Mask canny_edges(const Image& img, double low, double high) {
  if (!(low >= 0 && low < high)) throw std::invalid_argument("canny: need 0 <= low < high");
  if (img.empty()) throw ShapeError("canny: empty image");
  const Image g = to_gray(img);
  const int w = g.width, h = g.height;
  Plane gray(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) gray.at(x, y) = g.at(x, y, 0);
  const Plane s = gaussian_blur(gray, 1.4);

  Plane mag(w, h);
  std::vector<std::uint8_t> dir(static_cast<std::size_t>(w) * h);  // 0: horizontal gradient, 1: 45, 2: vertical, 3: 135
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (s.get(x + 1, y - 1) + 2 * s.get(x + 1, y) + s.get(x + 1, y + 1)) -
                        (s.get(x - 1, y - 1) + 2 * s.get(x - 1, y) + s.get(x - 1, y + 1));
      const double gy = (s.get(x - 1, y + 1) + 2 * s.get(x, y + 1) + s.get(x + 1, y + 1)) -
                        (s.get(x - 1, y - 1) + 2 * s.get(x, y - 1) + s.get(x + 1, y - 1));
      mag.at(x, y) = std::hypot(gx, gy);
      double angle = std::atan2(gy, gx) * 180.0 / M_PI;
      if (angle < 0) angle += 180.0;
      dir[static_cast<std::size_t>(y) * w + x] =
          angle < 22.5 || angle >= 157.5 ? 0 : angle < 67.5 ? 1 : angle < 112.5 ? 2 : 3;
    }

  // Non-maximum suppression along the gradient. On plateaus the pixel on the
  // backward side wins, so a symmetric ridge stays one pixel wide.
  static const int dx[4] = {1, 1, 0, -1};
  static const int dy[4] = {0, 1, 1, 1};
  Plane nms(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double m = mag.get(x, y);
      if (m < low) continue;
      const int d = dir[static_cast<std::size_t>(y) * w + x];
      auto val = [&](int xx, int yy) { return (xx < 0 || yy < 0 || xx >= w || yy >= h) ? 0.0 : mag.get(xx, yy); };
      const double fwd = val(x + dx[d], y + dy[d]);
      const double bwd = val(x - dx[d], y - dy[d]);
      if (m >= fwd && m > bwd) nms.at(x, y) = m;
    }

  Mask out(w, h);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (nms.get(x, y) >= high && !out.at(x, y)) {
        out.at(x, y) = 1;
        stack.emplace_back(x, y);
        while (!stack.empty()) {
          const auto [cx, cy] = stack.back();
          stack.pop_back();
          for (int oy = -1; oy <= 1; ++oy)
            for (int ox = -1; ox <= 1; ++ox) {
              const int nx = cx + ox, ny = cy + oy;
              if (nx < 0 || ny < 0 || nx >= w || ny >= h || out.at(nx, ny)) continue;
              if (nms.get(nx, ny) >= low && nms.get(nx, ny) > 0) {
                out.at(nx, ny) = 1;
                stack.emplace_back(nx, ny);
              }
            }
        }
      }
  return out;
}

std::pair<double, double> random_canny_thresholds(std::mt19937_64& rng) {
  const double low = std::uniform_real_distribution<double>(50.0, 150.0)(rng);
  const double high = low + std::uniform_real_distribution<double>(50.0, 150.0)(rng);
  return {low, high};
}

Image canny_image(const Image& img, double low, double high) {
  const Mask e = canny_edges(img, low, high);
  Image out(e.width, e.height, 3);
  for (std::size_t i = 0; i < e.bits.size(); ++i)
    if (e.bits[i]) out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = 255;
  return out;
}

QualityReport inpaint_quality(const Image& inpainted, const Mask& dilated, const FilterPolicy& pol) {
  if (dilated.width != inpainted.width || dilated.height != inpainted.height) throw ShapeError("inpaint_quality: size mismatch");
  // Interior: pixels whose 5x5 neighbourhood lies inside the mask, so the
  // seam at the mask border is not counted.
  Mask outside(dilated.width, dilated.height);
  for (std::size_t i = 0; i < outside.bits.size(); ++i) outside.bits[i] = dilated.bits[i] ? 0 : 1;
  const Mask near_outside = dilate_mask(outside, 5);
  const Image g = to_gray(inpainted);
  const Mask edges = canny_edges(inpainted, pol.quality_canny_low, pol.quality_canny_high);
  QualityReport r;
  double sum = 0, sq = 0;
  int n_edges = 0;
  for (int y = 0; y < dilated.height; ++y)
    for (int x = 0; x < dilated.width; ++x) {
      if (!dilated.at(x, y) || near_outside.at(x, y)) continue;
      const double v = g.at(x, y, 0);
      sum += v;
      sq += v * v;
      n_edges += edges.at(x, y);
      ++r.interior_pixels;
    }
  if (r.interior_pixels > 0) {
    const double mean = sum / r.interior_pixels;
    r.local_std = std::sqrt(std::max(0.0, sq / r.interior_pixels - mean * mean));
    r.edge_density = static_cast<double>(n_edges) / r.interior_pixels;
  }
  r.ok = r.local_std <= pol.max_local_std && r.edge_density <= pol.max_edge_density;
  return r;
}

EditUnit single_unit(const std::string& stem, int index, const ObjectRecord& obj) {
  EditUnit u;
  u.id = stem + "-o" + std::to_string(index);
  u.objects = {obj};
  u.combined_mask = obj.mask;
  u.label = obj.label;
  u.caption = obj.caption;
  u.bbox = obj.bbox;
  u.remove_instructions = {{simple_instruction(obj.label, Task::remove), "simple"}};
  u.add_instructions = {{simple_instruction(obj.label, Task::add), "simple"}};
  return u;
}

EditUnit group_unit(const std::string& stem, const InstanceGroup& g) {
  EditUnit u;
  std::string slug;
  for (const auto& t : label_tokens(g.class_label)) slug += (slug.empty() ? "" : "_") + t;
  u.id = stem + "-g" + slug + "-k" + std::to_string(g.k) + "-" + to_string(g.direction);
  for (int i : g.selected) u.objects.push_back(g.instances[i]);
  u.combined_mask = g.combined_mask;
  u.label = g.class_label;
  u.bbox = u.objects[0].bbox;
  for (const auto& o : u.objects) u.bbox = bbox_union(u.bbox, o.bbox);
  u.remove_instructions = {{multi_instance_instruction(g, Task::remove), "multi"}};
  u.add_instructions = {{multi_instance_instruction(g, Task::add), "multi"}};
  return u;
}

json QuarantineEntry::to_json() const { return {{"image", image}, {"unit", unit}, {"stage", stage}, {"error", error}}; }

BuildResult build_pairs(const Image& image, const std::string& source_rel, const std::vector<EditUnit>& units,
                        const ModelClients& clients, const FilterPolicy& pol, std::uint64_t seed) {
  BuildResult res;
  for (const auto& unit : units) {
    if (unit.combined_mask.width != image.width || unit.combined_mask.height != image.height)
      throw ShapeError("build_pairs: mask of " + unit.id + " does not match the image");
    BuiltPair p;
    p.unit = unit;
    p.dilated = dilate_mask(unit.combined_mask, pol.dilation_kernel);
    try {
      p.inpainted = clients.inpaint(image, p.dilated);
    } catch (const ClientError& e) {
      res.quarantine.push_back({source_rel, unit.id, "inpaint", e.what()});
      continue;
    }
    if (!inpaint_quality(p.inpainted, p.dilated, pol).ok) {
      ++res.quality_rejected;
      continue;
    }
    ObjectRecord scored = make_object_record(unit.label, unit.caption, unit.bbox, unit.combined_mask);
    try {
      if (!semantic_filter(scored, crop(image, unit.bbox), crop(p.inpainted, unit.bbox), clients, pol)) {
        ++res.semantic_rejected;
        continue;
      }
    } catch (const ClientError& e) {
      res.quarantine.push_back({source_rel, unit.id, "semantic", e.what()});
      continue;
    }

    const std::string target_rel = "targets/" + unit.id + ".png";
    const std::string mask_rel = "masks/" + unit.id + ".png";
    ManifestObject obj{unit.label, unit.caption, unit.bbox, scored.clip_pre, scored.clip_post, scored.area_fraction};
    const Provenance prov{kPipelineVersion, seed};

    p.remove.sample_id = unit.id + "-remove";
    p.remove.task = Task::remove;
    p.remove.source_path = source_rel;
    p.remove.target_path = target_rel;
    p.remove.mask_path = mask_rel;
    p.remove.instructions = unit.remove_instructions;
    p.remove.object = obj;
    p.remove.provenance = prov;
    p.remove.objects = unit.objects;
    p.remove.combined_mask = unit.combined_mask;

    p.add = p.remove;
    p.add.sample_id = unit.id + "-add";
    p.add.task = Task::add;
    std::swap(p.add.source_path, p.add.target_path);
    p.add.instructions = unit.add_instructions;
    res.pairs.push_back(std::move(p));
  }
  return res;
}

json PipelineStats::to_json() const {
  return {{"images", images},
          {"tagged", tagged},
          {"detections", detections},
          {"below_threshold", below_threshold},
          {"mask_fallbacks", mask_fallbacks},
          {"size_rejected", size_rejected},
          {"keyword_rejected", keyword_rejected},
          {"semantic_rejected", semantic_rejected},
          {"quality_rejected", quality_rejected},
          {"groups", groups},
          {"samples", samples},
          {"quarantined", quarantined}};
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Image as_rgb(Image img) {
  if (img.channels == 3) return img;
  Image out(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = img.pixels[i];
  return out;
}

}  // namespace

PipelineStats run_pipeline(const fs::path& images_dir, const fs::path& out_dir, const FilterPolicy& pol,
                           const ModelClients& clients, std::uint64_t seed) {
  pol.validate();
  if (!fs::is_directory(images_dir)) throw ConfigError("images directory not found: " + images_dir.string());
  std::vector<fs::path> inputs;
  for (const auto& e : fs::directory_iterator(images_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") inputs.push_back(e.path());
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) throw ConfigError("no PNG images in " + images_dir.string());

  for (const char* sub : {"images", "targets", "masks"}) fs::create_directories(out_dir / sub);
  PipelineStats st;
  std::vector<EditSample> manifest;
  std::vector<QuarantineEntry> quarantine;

  for (const auto& path : inputs) {
    ++st.images;
    const std::string stem = path.stem().string();
    const std::string source_rel = "images/" + stem + ".png";
    const std::string ref = path.string();
    Image img;
    try {
      img = as_rgb(read_png(path));
    } catch (const std::exception& e) {
      quarantine.push_back({source_rel, "", "read", e.what()});
      continue;
    }

    std::vector<std::string> labels;
    std::vector<Detection> dets;
    try {
      labels = clients.tag(img, ref);
      dets = clients.detect(img, ref, labels);
    } catch (const ClientError& e) {
      quarantine.push_back({source_rel, "", labels.empty() ? "tag" : "detect", e.what()});
      continue;
    }
    st.tagged += static_cast<int>(labels.size());
    st.detections += static_cast<int>(dets.size());

    std::vector<ObjectRecord> kept;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const auto& d = dets[i];
      const std::string unit = stem + "-d" + std::to_string(i);
      if (d.score < pol.detector_threshold) {
        ++st.below_threshold;
        continue;
      }
      Mask mask;
      std::string mask_source = "segmenter";
      try {
        mask = clients.segment(img, ref, d.bbox);
      } catch (const ClientError& e) {
        spdlog::warn("{}: segmenter failed ({}); using the box as mask", unit, e.what());
        mask = mask_from_bbox(img.width, img.height, d.bbox);
        mask_source = "bbox";
        ++st.mask_fallbacks;
      }
      std::string caption;
      try {
        caption = clients.caption(img, ref, d.bbox);
      } catch (const ClientError& e) {
        quarantine.push_back({source_rel, unit, "caption", e.what()});
        continue;
      }
      ObjectRecord r = make_object_record(d.label, caption, d.bbox, std::move(mask));
      r.mask_source = mask_source;
      r.score = d.score;
      if (!filter_by_size(r, pol)) {
        ++st.size_rejected;
        continue;
      }
      if (!filter_by_keywords(r, pol)) {
        ++st.keyword_rejected;
        continue;
      }
      kept.push_back(std::move(r));
    }

    std::vector<EditUnit> units;
    std::map<std::string, std::vector<ObjectRecord>> by_label;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      units.push_back(single_unit(stem, static_cast<int>(i), kept[i]));
      by_label[kept[i].label].push_back(kept[i]);
    }
    std::mt19937_64 rng(seed ^ fnv1a(stem));
    for (const auto& [label, inst] : by_label) {
      if (inst.size() < 2) continue;
      units.push_back(group_unit(stem, multi_instance_plan(inst, rng)));
      ++st.groups;
    }
    if (units.empty()) continue;

    auto built = build_pairs(img, source_rel, units, clients, pol, seed);
    st.semantic_rejected += built.semantic_rejected;
    st.quality_rejected += built.quality_rejected;
    quarantine.insert(quarantine.end(), built.quarantine.begin(), built.quarantine.end());
    if (built.pairs.empty()) continue;

    const auto src_bytes = encode_png(img);
    write_file(out_dir / source_rel, std::string(src_bytes.begin(), src_bytes.end()));
    // Mock clients resolve planted truth through the image path.
    if (fs::exists(sidecar_path(path)))
      fs::copy_file(sidecar_path(path), sidecar_path(out_dir / source_rel), fs::copy_options::overwrite_existing);
    for (auto& p : built.pairs) {
      const auto tgt = encode_png(p.inpainted);
      write_file(out_dir / p.remove.target_path, std::string(tgt.begin(), tgt.end()));
      const auto m = encode_png(mask_to_image(p.dilated));
      write_file(out_dir / p.remove.mask_path, std::string(m.begin(), m.end()));
      manifest.push_back(std::move(p.remove));
      manifest.push_back(std::move(p.add));
    }
  }

  st.samples = static_cast<int>(manifest.size());
  st.quarantined = static_cast<int>(quarantine.size());
  write_manifest(out_dir / "manifest.jsonl", manifest);
  std::string q;
  for (const auto& e : quarantine) q += e.to_json().dump() + "\n";
  write_file_atomic(out_dir / "quarantine.jsonl", q);
  spdlog::info("pipeline: {} images, {} samples, {} quarantined", st.images, st.samples, st.quarantined);
  return st;
}

}  // namespace galaxyedit
