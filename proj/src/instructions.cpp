#include "galaxyedit/instructions.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <regex>

namespace galaxyedit {

namespace {

std::string lower_trim(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool ends_with(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

/// Drops a leading a/an/the.
std::string fold_article(const std::string& phrase) {
  for (const char* art : {"a ", "an ", "the "}) {
    const std::string a(art);
    if (phrase.rfind(a, 0) == 0) return phrase.substr(a.size());
  }
  return phrase;
}

}  // namespace

std::string indefinite_article(const std::string& word) {
  if (word.empty()) return "a";
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(word[0])));
  return std::string("aeiou").find(c) != std::string::npos ? "an" : "a";
}

std::string pluralize(const std::string& noun) {
  static const std::map<std::string, std::string> irregular = {
      {"person", "people"}, {"man", "men"},     {"woman", "women"}, {"child", "children"}, {"mouse", "mice"},
      {"foot", "feet"},     {"tooth", "teeth"}, {"goose", "geese"}, {"sheep", "sheep"},    {"fish", "fish"},
      {"deer", "deer"},     {"knife", "knives"}, {"leaf", "leaves"}};
  if (noun.empty()) return noun;
  // Multi-word labels pluralize their last word.
  const auto sp = noun.rfind(' ');
  if (sp != std::string::npos) return noun.substr(0, sp + 1) + pluralize(noun.substr(sp + 1));
  if (const auto it = irregular.find(noun); it != irregular.end()) return it->second;
  for (const char* suf : {"s", "x", "z", "ch", "sh"})
    if (ends_with(noun, suf)) return noun + "es";
  if (noun.size() >= 2 && noun.back() == 'y' && std::string("aeiou").find(noun[noun.size() - 2]) == std::string::npos)
    return noun.substr(0, noun.size() - 1) + "ies";
  return noun + "s";
}

std::string number_word(int k) {
  static const char* words[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};
  if (k >= 0 && k <= 10) return words[k];
  return std::to_string(k);
}

std::string simple_instruction(const std::string& label, Task task) {
  const std::string l = lower_trim(label);
  if (l.empty()) throw std::invalid_argument("simple_instruction: empty label");
  return task == Task::add ? "add " + indefinite_article(l) + " " + l : "remove the " + l;
}

std::string attribute_instruction(const std::string& label, const std::string& caption, Task task) {
  const std::string phrase = fold_article(lower_trim(caption));
  if (phrase.empty()) return simple_instruction(label, task);
  return task == Task::add ? "add " + indefinite_article(phrase) + " " + phrase : "remove the " + phrase;
}

Intrinsics Intrinsics::default_for(int width, int height) {
  const double f = std::max(width, height);
  return {f, f, width / 2.0, height / 2.0};
}

PointCloud project_to_pointcloud(const DepthMap& depth, const Mask& mask, const Intrinsics& k) {
  if (mask.width != depth.width || mask.height != depth.height) throw ShapeError("project_to_pointcloud: mask/depth size mismatch");
  if (!(k.fx > 0 && k.fy > 0)) throw ConfigError("project_to_pointcloud: focal lengths must be positive");
  PointCloud pc;
  for (int v = 0; v < mask.height; ++v)
    for (int u = 0; u < mask.width; ++u) {
      if (!mask.at(u, v)) continue;
      const double d = depth.at(u, v);
      if (!(d > 0) || !std::isfinite(d)) {
        ++pc.skipped;
        continue;
      }
      pc.points.push_back({(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d});
    }
  return pc;
}

namespace {

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * (v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace

SceneObject3D make_scene_object(ObjectRecord record, std::vector<Point3> points) {
  if (points.empty()) throw ShapeError("scene object '" + record.label + "' has no 3D points");
  SceneObject3D o;
  o.record = std::move(record);
  o.points = std::move(points);
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<double> vals;
    vals.reserve(o.points.size());
    double sum = 0;
    for (const auto& p : o.points) {
      vals.push_back(p[axis]);
      sum += p[axis];
    }
    o.bbox_min[axis] = percentile(vals, 0.05);
    o.bbox_max[axis] = percentile(vals, 0.95);
    o.centroid[axis] = sum / static_cast<double>(o.points.size());
  }
  return o;
}

std::string to_string(Predicate p) {
  switch (p) {
    case Predicate::left: return "left";
    case Predicate::right: return "right";
    case Predicate::above: return "above";
    case Predicate::below: return "below";
    case Predicate::front: return "front";
    case Predicate::behind: return "behind";
  }
  return "";
}

std::string relation_phrase(Predicate p) {
  switch (p) {
    case Predicate::left: return "to the left of";
    case Predicate::right: return "to the right of";
    case Predicate::above: return "above";
    case Predicate::below: return "below";
    case Predicate::front: return "in front of";
    case Predicate::behind: return "behind";
  }
  return "";
}

Predicate inverse(Predicate p) {
  switch (p) {
    case Predicate::left: return Predicate::right;
    case Predicate::right: return Predicate::left;
    case Predicate::above: return Predicate::below;
    case Predicate::below: return Predicate::above;
    case Predicate::front: return Predicate::behind;
    case Predicate::behind: return Predicate::front;
  }
  return p;
}

std::optional<Predicate> assign_predicate(const SceneObject3D& a, const SceneObject3D& b, double margin) {
  std::array<double, 3> score{};
  std::array<double, 3> delta{};
  for (int axis = 0; axis < 3; ++axis) {
    delta[axis] = a.centroid[axis] - b.centroid[axis];
    const double extent = 0.5 * ((a.bbox_max[axis] - a.bbox_min[axis]) + (b.bbox_max[axis] - b.bbox_min[axis]));
    score[axis] = std::abs(delta[axis]) / std::max(extent, 1e-9);
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int i, int j) { return score[i] > score[j]; });
  if (!(score[order[0]] - score[order[1]] > margin)) return std::nullopt;
  const int axis = order[0];
  const bool neg = delta[axis] < 0;
  if (axis == 0) return neg ? Predicate::left : Predicate::right;
  if (axis == 1) return neg ? Predicate::above : Predicate::below;
  return neg ? Predicate::front : Predicate::behind;
}

std::optional<std::string> spatial_instruction(const std::string& subject_label, Predicate pred,
                                               const std::string& anchor_caption, Task task) {
  const std::string anchor = fold_article(lower_trim(anchor_caption));
  const std::string label = lower_trim(subject_label);
  if (anchor.empty() || label.empty()) return std::nullopt;
  const std::string head = task == Task::add ? "add " + indefinite_article(label) + " " + label : "remove the " + label;
  return head + " " + relation_phrase(pred) + " the " + anchor;
}

LabelResult caption_to_label(const std::string& caption, const ModelClients& clients) {
  if (lower_trim(caption).empty()) throw std::invalid_argument("caption_to_label: empty caption");
  try {
    return {clients.extract_label(caption), false};
  } catch (const ClientError& e) {
    spdlog::warn("label extraction failed ({}); using the head-noun rule", e.what());
    return {head_noun(caption), true};
  }
}

std::string to_string(Layout l) { return l == Layout::horizontal ? "horizontal" : "vertical"; }

std::string to_string(Direction d) {
  switch (d) {
    case Direction::left: return "left";
    case Direction::right: return "right";
    case Direction::top: return "top";
    case Direction::bottom: return "bottom";
  }
  return "";
}

Layout infer_layout(const std::vector<ObjectRecord>& instances) {
  if (instances.size() < 2) throw std::invalid_argument("multi-instance: need at least 2 instances");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& o : instances) {
    xmin = std::min(xmin, o.bbox.center_x());
    xmax = std::max(xmax, o.bbox.center_x());
    ymin = std::min(ymin, o.bbox.center_y());
    ymax = std::max(ymax, o.bbox.center_y());
  }
  return (xmax - xmin) >= (ymax - ymin) ? Layout::horizontal : Layout::vertical;
}

InstanceGroup plan_group(const std::vector<ObjectRecord>& instances, Direction direction, int k) {
  const Layout layout = infer_layout(instances);
  const int n = static_cast<int>(instances.size());
  if (k < 1 || k > n) throw std::invalid_argument("multi-instance: k must lie in [1, " + std::to_string(n) + "]");
  const std::string label = instances[0].label;
  for (const auto& o : instances)
    if (o.label != label) throw std::invalid_argument("multi-instance: mixed labels '" + label + "' and '" + o.label + "'");

  InstanceGroup g;
  g.class_label = label;
  g.instances = instances;
  g.layout = layout;
  g.k = k;
  g.direction = direction;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto key = [&](int i) {
    const auto& b = instances[i].bbox;
    switch (direction) {
      case Direction::left: return b.center_x();
      case Direction::right: return -b.center_x();
      case Direction::top: return b.center_y();
      case Direction::bottom: return -b.center_y();
    }
    return 0.0;
  };
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return key(a) < key(b); });
  g.selected.assign(idx.begin(), idx.begin() + k);
  g.combined_mask = instances[g.selected[0]].mask;
  for (int j = 1; j < k; ++j) g.combined_mask = mask_or(g.combined_mask, instances[g.selected[j]].mask);
  return g;
}

InstanceGroup multi_instance_plan(const std::vector<ObjectRecord>& instances, std::mt19937_64& rng) {
  const Layout layout = infer_layout(instances);
  const bool first = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
  const Direction d = layout == Layout::horizontal ? (first ? Direction::left : Direction::right)
                                                   : (first ? Direction::top : Direction::bottom);
  const int k = std::uniform_int_distribution<int>(1, static_cast<int>(instances.size()))(rng);
  return plan_group(instances, d, k);
}

std::string multi_instance_instruction(const std::string& label, int k, Direction direction, Task task) {
  const std::string l = lower_trim(label);
  if (l.empty()) throw std::invalid_argument("multi_instance_instruction: empty label");
  const std::string what = number_word(k) + " " + (k == 1 ? l : pluralize(l));
  return task == Task::add ? "add " + what : "remove " + what + " from the " + to_string(direction);
}

std::string multi_instance_instruction(const InstanceGroup& g, Task task) {
  return multi_instance_instruction(g.class_label, g.k, g.direction, task);
}

namespace {

void append_unique(std::vector<Instruction>& list, Instruction ins, int& added) {
  if (std::find(list.begin(), list.end(), ins) != list.end()) return;
  list.push_back(std::move(ins));
  ++added;
}

struct GroupId {
  std::string label;
  int k = 0;
  Direction dir = Direction::left;
};

std::optional<GroupId> parse_group_id(const std::string& id) {
  static const std::regex re(R"(-g([a-z0-9_]+)-k([0-9]+)-(left|right|top|bottom)-(add|remove)$)");
  std::smatch m;
  if (!std::regex_search(id, m, re)) return std::nullopt;
  GroupId g;
  g.label = m[1].str();
  std::replace(g.label.begin(), g.label.end(), '_', ' ');
  g.k = std::stoi(m[2].str());
  const std::string d = m[3].str();
  g.dir = d == "left" ? Direction::left : d == "right" ? Direction::right : d == "top" ? Direction::top : Direction::bottom;
  return g;
}

std::string twin_key(const EditSample& s) {
  const std::string suf = "-" + to_string(s.task);
  return s.sample_id.substr(0, s.sample_id.size() - suf.size());
}

}  // namespace

InstructionGenStats generate_instructions(const std::filesystem::path& manifest, const ModelClients& clients,
                                          const InstructionGenConfig& cfg) {
  for (const auto& s : cfg.strategies)
    if (s != "simple" && s != "attribute" && s != "spatial" && s != "multi")
      throw ConfigError("instructions: unknown strategy '" + s + "'");
  auto samples = read_manifest(manifest);
  const auto root = manifest.parent_path();
  InstructionGenStats stats;
  stats.records = static_cast<int>(samples.size());

  // Spatial geometry comes from the remove records of single objects, keyed by source image.
  std::map<std::string, std::vector<int>> by_image;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i)
    if (samples[i].task == Task::remove && !parse_group_id(samples[i].sample_id)) by_image[samples[i].source_path].push_back(i);

  std::map<std::string, std::vector<Instruction>> spatial_by_key;  // twin key -> per-task texts
  if (cfg.strategies.count("spatial")) {
    for (const auto& [src, idxs] : by_image) {
      if (idxs.size() < 2) {
        stats.spatial_skipped += static_cast<int>(idxs.size());
        continue;
      }
      const Image img = read_png(root / src);
      const DepthMap depth = clients.estimate_depth(img, (root / src).string());
      const Intrinsics intr = cfg.intrinsics.value_or(Intrinsics::default_for(img.width, img.height));
      std::vector<SceneObject3D> objs;
      std::vector<int> owner;
      for (int i : idxs) {
        ObjectRecord r = make_object_record(samples[i].object.label, samples[i].object.caption, samples[i].object.bbox,
                                            mask_from_bbox(img.width, img.height, samples[i].object.bbox));
        auto pc = project_to_pointcloud(depth, r.mask, intr);
        if (pc.points.empty()) {
          ++stats.spatial_skipped;
          continue;
        }
        objs.push_back(make_scene_object(std::move(r), std::move(pc.points)));
        owner.push_back(i);
      }
      for (std::size_t a = 0; a < objs.size(); ++a) {
        // Anchor: nearest other object by centroid distance; ties keep the earlier record.
        int best = -1;
        double best_d = 1e300;
        for (std::size_t b = 0; b < objs.size(); ++b) {
          if (a == b) continue;
          double d = 0;
          for (int ax = 0; ax < 3; ++ax) d += std::pow(objs[a].centroid[ax] - objs[b].centroid[ax], 2);
          if (d < best_d) {
            best_d = d;
            best = static_cast<int>(b);
          }
        }
        const auto pred = best >= 0 ? assign_predicate(objs[a], objs[best], cfg.margin) : std::nullopt;
        const std::string& anchor_caption = best >= 0 ? objs[best].record.caption : std::string();
        if (!pred || anchor_caption.empty() || objs[a].record.caption.empty()) {
          ++stats.spatial_skipped;
          continue;
        }
        const auto label = caption_to_label(objs[a].record.caption, clients);
        if (label.fallback) ++stats.label_fallbacks;
        auto& out = spatial_by_key[twin_key(samples[owner[a]])];
        for (Task t : {Task::remove, Task::add})
          if (auto text = spatial_instruction(label.label, *pred, anchor_caption, t)) out.push_back({*text, to_string(t)});
      }
    }
  }

  for (auto& s : samples) {
    if (const auto g = parse_group_id(s.sample_id)) {
      if (cfg.strategies.count("multi"))
        append_unique(s.instructions, {multi_instance_instruction(g->label, g->k, g->dir, s.task), "multi"}, stats.added);
      continue;
    }
    if (cfg.strategies.count("simple"))
      append_unique(s.instructions, {simple_instruction(s.object.label, s.task), "simple"}, stats.added);
    if (cfg.strategies.count("attribute") && !s.object.caption.empty())
      append_unique(s.instructions, {attribute_instruction(s.object.label, s.object.caption, s.task), "attribute"},
                    stats.added);
    if (const auto it = spatial_by_key.find(twin_key(s)); it != spatial_by_key.end())
      for (const auto& [text, task] : it->second)
        if (task == to_string(s.task)) append_unique(s.instructions, {text, "spatial"}, stats.added);
  }
  write_manifest(manifest, samples);
  return stats;
}

}  // namespace galaxyedit
