#include "galaxyedit/records.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace galaxyedit {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(Task t) { return t == Task::add ? "add" : "remove"; }

Task parse_task(const std::string& s) {
  if (s == "add") return Task::add;
  if (s == "remove") return Task::remove;
  throw ConfigError("unknown task '" + s + "' (expected add or remove)");
}

std::string to_string(ObjectSource s) {
  return s == ObjectSource::dataset_annotation ? "dataset_annotation" : "open_set_tagger";
}

void ObjectRecord::update_area() {
  const double total = static_cast<double>(mask.width) * mask.height;
  area_fraction = total > 0 ? static_cast<double>(mask.popcount()) / total : 0.0;
}

void ObjectRecord::validate(int width, int height) const {
  if (label.empty()) throw ShapeError("object record has an empty label");
  if (!bbox.valid_in(width, height))
    throw ShapeError("object '" + label + "': bbox [" + std::to_string(bbox.x0) + "," + std::to_string(bbox.y0) + "," +
                     std::to_string(bbox.x1) + "," + std::to_string(bbox.y1) + "] outside " + std::to_string(width) +
                     "x" + std::to_string(height));
  if (mask.width != width || mask.height != height) throw ShapeError("object '" + label + "': mask size mismatch");
  const double expect = static_cast<double>(mask.popcount()) / (static_cast<double>(width) * height);
  if (area_fraction != expect) throw ShapeError("object '" + label + "': area_fraction does not match the mask");
}

ObjectRecord make_object_record(std::string label, std::string caption, const BBox& bbox, Mask mask, ObjectSource source) {
  ObjectRecord r;
  r.label = std::move(label);
  r.caption = std::move(caption);
  r.bbox = bbox;
  r.mask = std::move(mask);
  r.source = source;
  r.update_area();
  return r;
}

namespace {

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::optional<double> read_optional(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

ordered_json to_json(const EditSample& s) {
  ordered_json instr = ordered_json::array();
  for (const auto& i : s.instructions) instr.push_back({{"text", i.text}, {"strategy", i.strategy}});
  const auto& o = s.object;
  return {{"sample_id", s.sample_id},
          {"task", to_string(s.task)},
          {"source_path", s.source_path},
          {"target_path", s.target_path},
          {"mask_path", s.mask_path},
          {"instructions", instr},
          {"object",
           {{"label", o.label},
            {"caption", o.caption},
            {"bbox", {o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1}},
            {"clip_pre", optional_number(o.clip_pre)},
            {"clip_post", optional_number(o.clip_post)},
            {"area_fraction", o.area_fraction}}},
          {"provenance", {{"pipeline_version", s.provenance.pipeline_version}, {"seed", s.provenance.seed}}}};
}

EditSample edit_sample_from_json(const json& j) {
  EditSample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.task = parse_task(j.at("task").get<std::string>());
  s.source_path = j.at("source_path").get<std::string>();
  s.target_path = j.at("target_path").get<std::string>();
  s.mask_path = j.at("mask_path").get<std::string>();
  for (const auto& i : j.at("instructions"))
    s.instructions.push_back({i.at("text").get<std::string>(), i.at("strategy").get<std::string>()});
  const auto& o = j.at("object");
  s.object.label = o.at("label").get<std::string>();
  s.object.caption = o.at("caption").get<std::string>();
  const auto b = o.at("bbox").get<std::vector<int>>();
  if (b.size() != 4) throw ShapeError("manifest: bbox must have 4 entries");
  s.object.bbox = {b[0], b[1], b[2], b[3]};
  s.object.clip_pre = read_optional(o.at("clip_pre"));
  s.object.clip_post = read_optional(o.at("clip_post"));
  s.object.area_fraction = o.at("area_fraction").get<double>();
  const auto& p = j.at("provenance");
  s.provenance.pipeline_version = p.at("pipeline_version").get<std::string>();
  s.provenance.seed = p.at("seed").get<std::uint64_t>();
  return s;
}

std::vector<EditSample> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  std::vector<EditSample> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(edit_sample_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::string manifest_text(const std::vector<EditSample>& samples) {
  std::string out;
  for (const auto& s : samples) out += to_json(s).dump() + "\n";
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<EditSample>& samples) {
  write_file_atomic(path, manifest_text(samples));
}

namespace {

bool is_relative_inside(const std::string& p) {
  if (p.empty()) return false;
  const std::filesystem::path fp(p);
  if (fp.is_absolute()) return false;
  for (const auto& part : fp)
    if (part == "..") return false;
  return true;
}

}  // namespace

std::vector<std::string> validate_manifest(const std::filesystem::path& path) {
  std::vector<std::string> v;
  std::ifstream in(path);
  if (!in) return {"cannot open " + path.string()};
  const auto root = path.parent_path();
  static const std::vector<std::string> kTop = {"sample_id",  "task",         "source_path", "target_path",
                                                "mask_path",  "instructions", "object",      "provenance"};
  static const std::vector<std::string> kObject = {"label", "caption", "bbox", "clip_pre", "clip_post", "area_fraction"};
  static const std::set<std::string> kStrategies = {"simple", "attribute", "spatial", "multi"};

  std::set<std::string> ids;
  std::map<std::string, std::pair<std::string, std::string>> removes, adds;  // id stem -> (source, target)
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string where = "line " + std::to_string(n) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      v.push_back(where + "not valid JSON");
      continue;
    }
    if (!j.is_object()) {
      v.push_back(where + "not an object");
      continue;
    }
    auto exact_keys = [&](const json& obj, const std::vector<std::string>& keys, const std::string& what) {
      bool ok = true;
      for (const auto& k : keys)
        if (!obj.contains(k)) {
          v.push_back(where + what + " missing field '" + k + "'");
          ok = false;
        }
      for (auto it = obj.begin(); it != obj.end(); ++it)
        if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
          v.push_back(where + what + " has unexpected field '" + it.key() + "'");
          ok = false;
        }
      return ok;
    };
    if (!exact_keys(j, kTop, "record")) continue;
    if (!j["object"].is_object() || !exact_keys(j["object"], kObject, "object")) continue;
    if (!j["provenance"].is_object() || !exact_keys(j["provenance"], {"pipeline_version", "seed"}, "provenance")) continue;

    EditSample s;
    try {
      s = edit_sample_from_json(j);
    } catch (const std::exception& e) {
      v.push_back(where + "type error: " + e.what());
      continue;
    }
    if (s.sample_id.empty() || !ids.insert(s.sample_id).second) v.push_back(where + "duplicate or empty sample_id");
    const std::string suffix = "-" + to_string(s.task);
    if (s.sample_id.size() < suffix.size() || s.sample_id.compare(s.sample_id.size() - suffix.size(), suffix.size(), suffix) != 0)
      v.push_back(where + "sample_id does not end with the task");
    if (s.instructions.empty()) v.push_back(where + "no instructions");
    for (const auto& i : s.instructions) {
      if (i.text.empty()) v.push_back(where + "empty instruction text");
      if (!kStrategies.count(i.strategy)) v.push_back(where + "unknown strategy '" + i.strategy + "'");
    }
    if (s.provenance.pipeline_version.empty()) v.push_back(where + "empty pipeline_version");
    if (!(s.object.area_fraction >= 0.0 && s.object.area_fraction <= 1.0)) v.push_back(where + "area_fraction outside [0,1]");
    for (const auto* p : {&s.source_path, &s.target_path, &s.mask_path}) {
      if (!is_relative_inside(*p)) {
        v.push_back(where + "path '" + *p + "' is not relative to the manifest");
        continue;
      }
      if (!std::filesystem::exists(root / *p)) v.push_back(where + "missing file '" + *p + "'");
    }
    if (std::filesystem::exists(root / s.source_path)) {
      try {
        const Image src = read_png(root / s.source_path);
        if (!s.object.bbox.valid_in(src.width, src.height)) v.push_back(where + "bbox outside the source image");
        if (std::filesystem::exists(root / s.mask_path)) {
          const Image m = read_png(root / s.mask_path);
          if (m.channels != 1 || m.width != src.width || m.height != src.height)
            v.push_back(where + "mask must be single-channel and match the source size");
          for (auto px : m.pixels)
            if (px != 0 && px != 255) {
              v.push_back(where + "mask has values other than 0 and 255");
              break;
            }
        }
        if (src.channels != 3) v.push_back(where + "source image is not RGB");
      } catch (const std::exception& e) {
        v.push_back(where + "unreadable image: " + e.what());
      }
    }
    const std::string stem = s.sample_id.substr(0, s.sample_id.size() - std::min(s.sample_id.size(), suffix.size()));
    (s.task == Task::remove ? removes : adds)[stem] = {s.source_path, s.target_path};
  }
  // Every add sample is the byte-wise swap of a remove sample.
  for (const auto& [stem, st] : adds) {
    const auto it = removes.find(stem);
    if (it == removes.end()) {
      v.push_back("add sample " + stem + "-add has no remove twin");
      continue;
    }
    const auto& [rsrc, rtgt] = it->second;
    auto same_bytes = [&](const std::string& a, const std::string& b) {
      if (!std::filesystem::exists(root / a) || !std::filesystem::exists(root / b)) return false;
      return read_file(root / a) == read_file(root / b);
    };
    if (!same_bytes(st.first, rtgt) || !same_bytes(st.second, rsrc))
      v.push_back("add sample " + stem + "-add is not a swap of its remove twin");
  }
  return v;
}

}  // namespace galaxyedit
