#include "galaxyedit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

namespace galaxyedit {

using nlohmann::json;

const std::vector<ObjectClass>& object_classes() {
  static const std::vector<ObjectClass> classes = {
      {"cat", {235, 125, 20}, ShapeKind::disc, {"fluffy orange cat", "small ginger cat"}},
      {"dog", {150, 75, 10}, ShapeKind::rect, {"brown dog with floppy ears", "small brown dog"}},
      {"car", {215, 25, 30}, ShapeKind::rect, {"red sports car", "wooden vintage car"}},
      {"apple", {40, 200, 50}, ShapeKind::disc, {"green apple", "shiny green apple"}},
      {"bowl", {30, 80, 230}, ShapeKind::rect, {"blue ceramic bowl", "deep blue bowl"}},
      {"person", {150, 40, 200}, ShapeKind::rect, {"person in blue shirt", "person in purple coat"}},
      {"cow", {245, 235, 40}, ShapeKind::triangle, {"dark brown cow", "spotted cow"}},
      {"umbrella", {20, 210, 210}, ShapeKind::triangle, {"open umbrella", "striped umbrella"}},
      {"hand", {250, 190, 160}, ShapeKind::disc, {"raised hand"}},
  };
  return classes;
}

int find_class(const std::string& label) {
  const auto& cs = object_classes();
  for (std::size_t i = 0; i < cs.size(); ++i)
    if (cs[i].label == label) return static_cast<int>(i);
  return -1;
}

json to_json(const SceneTruth& t) {
  json objs = json::array();
  for (const auto& o : t.objects)
    objs.push_back({{"label", o.label},
                    {"caption", o.caption},
                    {"bbox", {o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1}},
                    {"score", o.score},
                    {"depth", o.depth}});
  return {{"schema", 1},
          {"width", t.width},
          {"height", t.height},
          {"labels", t.labels},
          {"objects", objs},
          {"depth", {{"d0", t.depth.d0}, {"du", t.depth.du}, {"dv", t.depth.dv}}}};
}

SceneTruth scene_truth_from_json(const json& j) {
  SceneTruth t;
  t.width = j.at("width").get<int>();
  t.height = j.at("height").get<int>();
  t.labels = j.at("labels").get<std::vector<std::string>>();
  for (const auto& o : j.at("objects")) {
    TruthObject obj;
    obj.label = o.at("label").get<std::string>();
    obj.caption = o.at("caption").get<std::string>();
    const auto b = o.at("bbox").get<std::vector<int>>();
    if (b.size() != 4) throw std::runtime_error("sidecar: bbox must have 4 entries");
    obj.bbox = {b[0], b[1], b[2], b[3]};
    obj.score = o.at("score").get<double>();
    obj.depth = o.at("depth").get<double>();
    t.objects.push_back(obj);
  }
  const auto& d = j.at("depth");
  t.depth = {d.at("d0").get<double>(), d.at("du").get<double>(), d.at("dv").get<double>()};
  return t;
}

std::filesystem::path sidecar_path(const std::filesystem::path& image) {
  auto p = image;
  p += ".truth.json";
  return p;
}

SceneTruth read_sidecar(const std::filesystem::path& image) {
  const auto bytes = read_file(sidecar_path(image));
  return scene_truth_from_json(json::parse(bytes.begin(), bytes.end()));
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "width") c.width = it->get<int>();
    else if (k == "height") c.height = it->get<int>();
    else if (k == "min_objects") c.min_objects = it->get<int>();
    else if (k == "max_objects") c.max_objects = it->get<int>();
    else if (k == "group_probability") c.group_probability = it->get<double>();
    else if (k == "tiny_probability") c.tiny_probability = it->get<double>();
    else if (k == "huge_probability") c.huge_probability = it->get<double>();
    else if (k == "low_score_probability") c.low_score_probability = it->get<double>();
    else throw ConfigError("synth config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

void SynthConfig::validate() const {
  if (width < 32 || height < 32) throw ConfigError("synth config: images must be at least 32x32");
  if (min_objects < 1 || max_objects < min_objects) throw ConfigError("synth config: need 1 <= min_objects <= max_objects");
  for (double p : {group_probability, tiny_probability, huge_probability, low_score_probability})
    if (p < 0.0 || p > 1.0) throw ConfigError("synth config: probabilities must lie in [0, 1]");
}

namespace {

bool inside_shape(ShapeKind s, const BBox& b, int x, int y) {
  if (x < b.x0 || x >= b.x1 || y < b.y0 || y >= b.y1) return false;
  switch (s) {
    case ShapeKind::rect:
      return true;
    case ShapeKind::disc: {
      const double cx = b.center_x() - 0.5, cy = b.center_y() - 0.5;
      const double rx = b.width() / 2.0, ry = b.height() / 2.0;
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeKind::triangle: {
      // Apex at top center, base along the bottom row.
      const double t = (y - b.y0 + 1.0) / b.height();
      const double half = 0.5 * b.width() * t;
      return std::abs(x + 0.5 - b.center_x()) <= half;
    }
  }
  return false;
}

void fill_shape(Image& img, const ObjectClass& cls, const BBox& b) {
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x)
      if (inside_shape(cls.shape, b, x, y))
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = cls.color[c];
}

bool overlaps(const BBox& b, const std::vector<TruthObject>& objs, int gap) {
  for (const auto& o : objs) {
    if (b.x0 < o.bbox.x1 + gap && o.bbox.x0 < b.x1 + gap && b.y0 < o.bbox.y1 + gap && o.bbox.y0 < b.y1 + gap) return true;
  }
  return false;
}

}  // namespace

SynthScene make_scene(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto randint = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const int W = cfg.width, H = cfg.height;
  SynthScene s;
  s.image = Image(W, H, 3);
  // Muted two-tone background with a fine texture.
  const int g0 = randint(90, 150);
  const std::array<int, 3> top{g0 + randint(-12, 12), g0 + randint(-12, 12), g0 + randint(-12, 12)};
  const std::array<int, 3> bot{top[0] - randint(10, 30), top[1] - randint(10, 30), top[2] - randint(10, 30)};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double f = static_cast<double>(y) / (H - 1);
      const int tex = ((x / 4 + y / 4) % 2) ? 4 : -4;
      for (int c = 0; c < 3; ++c)
        s.image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(
            static_cast<int>(std::lround(top[c] * (1 - f) + bot[c] * f)) + tex + randint(-3, 3), 0, 255));
    }

  auto& truth = s.truth;
  truth.width = W;
  truth.height = H;
  truth.depth = {2.0 + 4.0 * unit(rng), (unit(rng) - 0.5) * 0.01, -(0.5 + unit(rng)) * 2.0 / H};

  const auto& classes = object_classes();
  const int n_target = randint(cfg.min_objects, cfg.max_objects);
  const int unit_size = std::min(W, H);

  auto place = [&](int cls_idx, const BBox& b) {
    const auto& cls = classes[cls_idx];
    TruthObject o;
    o.label = cls.label;
    o.caption = cls.captions[randint(0, static_cast<int>(cls.captions.size()) - 1)];
    o.bbox = b;
    o.score = unit(rng) < cfg.low_score_probability ? 0.1 + 0.2 * unit(rng) : 0.5 + 0.5 * unit(rng);
    o.depth = truth.depth.at(b.center_x(), b.center_y());
    fill_shape(s.image, cls, b);
    truth.objects.push_back(o);
  };

  int attempts = 0;
  while (static_cast<int>(truth.objects.size()) < n_target && attempts++ < 200) {
    const int cls_idx = randint(0, static_cast<int>(classes.size()) - 1);
    const double r = unit(rng);
    int sz;
    if (r < cfg.tiny_probability) sz = std::max(2, unit_size / 32);
    else if (r < cfg.tiny_probability + cfg.huge_probability) sz = unit_size * 3 / 4;
    else sz = randint(unit_size / 10, unit_size / 4);
    const int remaining = n_target - static_cast<int>(truth.objects.size());
    if (remaining >= 2 && unit(rng) < cfg.group_probability && sz < unit_size / 5) {
      // A row or column of same-class instances.
      const int count = std::min(remaining, randint(2, 3));
      const bool horizontal = unit(rng) < 0.5;
      const int span = count * sz + (count - 1) * (sz / 2 + 2);
      if (span >= (horizontal ? W : H) - 2) continue;
      const int x0 = horizontal ? randint(1, W - span - 1) : randint(1, W - sz - 1);
      const int y0 = horizontal ? randint(1, H - sz - 1) : randint(1, H - span - 1);
      std::vector<BBox> boxes;
      for (int k = 0; k < count; ++k) {
        const int off = k * (sz + sz / 2 + 2);
        boxes.push_back(horizontal ? BBox{x0 + off, y0, x0 + off + sz, y0 + sz} : BBox{x0, y0 + off, x0 + sz, y0 + off + sz});
      }
      bool clash = false;
      for (const auto& b : boxes) clash = clash || overlaps(b, truth.objects, 2);
      if (clash) continue;
      for (const auto& b : boxes) place(cls_idx, b);
      continue;
    }
    const int w = std::min(W - 2, std::max(2, sz + randint(-sz / 5, sz / 5)));
    const int h = std::min(H - 2, sz);
    BBox box;
    box.x0 = randint(1, W - w - 1);
    box.y0 = randint(1, H - h - 1);
    box.x1 = box.x0 + w;
    box.y1 = box.y0 + h;
    if (overlaps(box, truth.objects, 2)) continue;
    place(cls_idx, box);
  }

  std::set<std::string> labels;
  for (const auto& o : truth.objects) labels.insert(o.label);
  truth.labels.assign(labels.begin(), labels.end());
  return s;
}

std::vector<std::filesystem::path> synth_corpus(int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                                                const SynthConfig& cfg) {
  if (n < 1) throw ConfigError("synth: n must be >= 1");
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> paths;
  std::vector<std::uint64_t> seeds(n);
  {
    std::mt19937_64 master(seed);
    for (auto& s : seeds) s = master();
  }
  for (int i = 0; i < n; ++i) {
    const auto scene = make_scene(cfg, seeds[i]);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d.png", i);
    const auto path = out_dir / name;
    write_png(path, scene.image);
    write_file(sidecar_path(path), to_json(scene.truth).dump(2) + "\n");
    paths.push_back(path);
  }
  return paths;
}

EditPairSet EditPairSet::subset(int begin, int end) const {
  if (begin < 0 || end > size() || begin > end) throw std::out_of_range("EditPairSet::subset");
  EditPairSet out;
  const int n = end - begin;
  out.source = Tensor<float>(n, source.c(), source.h(), source.w());
  out.target = Tensor<float>(n, target.c(), target.h(), target.w());
  const std::size_t per = static_cast<std::size_t>(source.c()) * source.h() * source.w();
  std::copy_n(source.sample(begin), per * n, out.source.data());
  std::copy_n(target.sample(begin), per * n, out.target.data());
  out.instructions.assign(instructions.begin() + begin, instructions.begin() + end);
  out.tasks.assign(tasks.begin() + begin, tasks.begin() + end);
  return out;
}

EditPairSet make_edit_pairs(int n, int size, std::uint64_t seed) {
  if (n < 1 || size < 16) throw ConfigError("make_edit_pairs: need n >= 1 and size >= 16");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  // Saturated colors against pastel gradients keep objects distinct.
  static const std::array<std::array<float, 3>, 4> kColors{
      {{0.9f, 0.1f, 0.1f}, {0.1f, 0.8f, 0.2f}, {0.1f, 0.2f, 0.9f}, {0.95f, 0.85f, 0.1f}}};
  static const char* kColorNames[] = {"red", "green", "blue", "yellow"};
  static const char* kShapeNames[] = {"square", "ball"};
  struct Obj {
    int shape, color;
    BBox box;
  };

  EditPairSet set;
  set.source = Tensor<float>(n, 3, size, size);
  set.target = Tensor<float>(n, 3, size, size);
  const int plane = size * size;
  for (int i = 0; i < n; ++i) {
    std::array<float, 3> top, bot;
    for (int k = 0; k < 3; ++k) {
      top[k] = 0.2f + 0.6f * unit(rng);
      bot[k] = 0.2f + 0.6f * unit(rng);
    }
    std::vector<Obj> objs(1 + rng() % 2);
    for (auto& o : objs) {
      o.shape = static_cast<int>(rng() % 2);
      o.color = static_cast<int>(rng() % 4);
      const int sz = size / 4 + static_cast<int>(rng() % (size / 4));
      o.box.x0 = static_cast<int>(rng() % (size - sz));
      o.box.y0 = static_cast<int>(rng() % (size - sz));
      o.box.x1 = o.box.x0 + sz;
      o.box.y1 = o.box.y0 + sz;
    }
    const bool add = rng() % 2;
    auto render = [&](bool with_first, float* out) {
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const float f = static_cast<float>(y) / (size - 1);
          std::array<float, 3> c;
          for (int k = 0; k < 3; ++k) c[k] = top[k] * (1 - f) + bot[k] * f;
          for (std::size_t j = 0; j < objs.size(); ++j) {
            if (j == 0 && !with_first) continue;
            if (inside_shape(objs[j].shape == 0 ? ShapeKind::rect : ShapeKind::disc, objs[j].box, x, y))
              c = kColors[objs[j].color];
          }
          for (int k = 0; k < 3; ++k) out[k * plane + y * size + x] = c[k] * 2.0f - 1.0f;
        }
    };
    render(!add, set.source.sample(i));
    render(add, set.target.sample(i));
    const std::string what = std::string(kColorNames[objs[0].color]) + " " + kShapeNames[objs[0].shape];
    set.instructions.push_back(add ? "add a " + what : "remove the " + what);
    set.tasks.push_back(add ? "add" : "remove");
  }
  return set;
}

}  // namespace galaxyedit
