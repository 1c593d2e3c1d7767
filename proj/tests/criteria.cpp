#include "criteria.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "galaxyedit/diffusion.hpp"
#include "galaxyedit/image.hpp"

namespace criteria {

using namespace galaxyedit;
namespace fs = std::filesystem;

namespace {

template <typename T>
Tensor<T> randn(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<T> t(s);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : t.vec()) v = static_cast<T>(d(rng));
  return t;
}

double max_abs(const Tensor<float>& t) {
  double m = 0;
  for (float v : t.vec()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

}  // namespace

double init_identity_error(FusionMode mode, int n_inputs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  UNetConfig ucfg;
  AdapterConfig ac;
  ac.mode = mode;
  ac.seed = seed + 1;
  const auto a = AdapterAssembly<float>::build(BaseUNet<float>(ucfg, seed + 2), ac);
  constexpr int kBatch = 4;
  constexpr int kSize = 16;
  double worst = 0;
  for (int done = 0; done < n_inputs; done += kBatch) {
    const int b = std::min(kBatch, n_inputs - done);
    const auto z = randn<float>({b, 3, kSize, kSize}, rng);
    const auto ctrl = randn<float>({b, 3, kSize, kSize}, rng);
    const auto text = randn<float>({b, ucfg.text_dim, 1, 1}, rng, 0.3);
    std::vector<int> t;
    for (int i = 0; i < b; ++i) t.push_back(static_cast<int>(rng() % 200));
    const auto joint = forward_joint(a, z, t, ctrl, text);
    const auto base = base_forward(a.base, z, t, text);
    double diff = 0;
    for (std::size_t i = 0; i < joint.size(); ++i)
      diff = std::max(diff, std::abs(static_cast<double>(joint[i]) - base[i]));
    worst = std::max(worst, diff / std::max(max_abs(base), 1e-12));
  }
  return worst;
}

Tensor<double> volterra_bruteforce(const Tensor<double>& x, const VolterraLayerParams<double>& p) {
  const int co = p.c_out(), ci = p.c_in(), k = p.kernel(), pad = p.padding, s = p.stride;
  const int ho = (x.h() + 2 * pad - k) / s + 1, wo = (x.w() + 2 * pad - k) / s + 1;
  const int taps = ci * k * k;
  Tensor<double> y(x.n(), co, ho, wo);
  std::vector<double> patch(taps);
  for (int b = 0; b < x.n(); ++b)
    for (int o = 0; o < co; ++o) {
      // Full quadratic kernel for this output channel.
      std::vector<double> K(static_cast<std::size_t>(taps) * taps, 0.0), lin(taps, 0.0);
      for (int i = 0; i < taps; ++i) {
        const int c = i / (k * k), dy = (i / k) % k, dx = i % k;
        lin[i] = p.w1.at(o, c, dy, dx);
        for (int j = 0; j < taps; ++j) {
          const int c2 = j / (k * k), dy2 = (j / k) % k, dx2 = j % k;
          double acc = 0;
          for (int q = 0; q < p.rank_q; ++q) acc += p.w2a[q].at(o, c, dy, dx) * p.w2b[q].at(o, c2, dy2, dx2);
          K[static_cast<std::size_t>(i) * taps + j] = acc;
        }
      }
      for (int yy = 0; yy < ho; ++yy)
        for (int xx = 0; xx < wo; ++xx) {
          for (int i = 0; i < taps; ++i) {
            const int c = i / (k * k), dy = (i / k) % k, dx = i % k;
            const int sy = yy * s + dy - pad, sx = xx * s + dx - pad;
            patch[i] = (sy < 0 || sy >= x.h() || sx < 0 || sx >= x.w()) ? 0.0 : x.at(b, c, sy, sx);
          }
          double v = 0;
          for (int i = 0; i < taps; ++i) {
            v += lin[i] * patch[i];
            for (int j = 0; j < taps; ++j) v += K[static_cast<std::size_t>(i) * taps + j] * patch[i] * patch[j];
          }
          y.at(b, o, yy, xx) = v;
        }
    }
  return y;
}

namespace {

VolterraLayerParams<double> random_layer(int ci, int co, int k, int q, std::mt19937_64& rng) {
  auto p = init_zero<double>(ci, co, k, q);
  p.for_each_kernel([&](const std::string&, Tensor<double>& t) { t = randn<double>(t.shape(), rng, 0.5); });
  return p;
}

}  // namespace

double volterra_oracle_error(int inputs_per_config, int max_c, int max_q, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (int ci = 1; ci <= max_c; ++ci)
    for (int co = 1; co <= max_c; ++co)
      for (int q = 1; q <= max_q; ++q) {
        const auto p = random_layer(ci, co, 1, q, rng);
        for (int n = 0; n < inputs_per_config; ++n) {
          const auto x = randn<double>({1, ci, 3, 4}, rng);
          const auto got = volterra_forward(x, p);
          const auto want = volterra_bruteforce(x, p);
          for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
        }
      }
  return worst;
}

namespace {

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1.0}); }

void each_bridge_entry(FusionBlock<double>& blk, FusionBlock<double>& grads,
                       const std::function<void(const std::string&, double&, double)>& f) {
  const std::pair<Bridge<double>*, Bridge<double>*> pairs[] = {{&blk.bridge_bc, &grads.bridge_bc},
                                                               {&blk.bridge_cb, &grads.bridge_cb}};
  const char* names[] = {"bc", "cb"};
  for (int b = 0; b < 2; ++b) {
    auto& pv = std::get<VolterraLayerParams<double>>(*pairs[b].first);
    auto& gv = std::get<VolterraLayerParams<double>>(*pairs[b].second);
    std::vector<Tensor<double>*> ps, gs;
    std::vector<std::string> ns;
    pv.for_each_kernel([&](const std::string& n, Tensor<double>& t) {
      ps.push_back(&t);
      ns.push_back(n);
    });
    gv.for_each_kernel([&](const std::string&, Tensor<double>& t) { gs.push_back(&t); });
    for (std::size_t t = 0; t < ps.size(); ++t)
      for (std::size_t i = 0; i < ps[t]->size(); ++i)
        f(std::string(names[b]) + "." + ns[t] + "[" + std::to_string(i) + "]", (*ps[t])[i], (*gs[t])[i]);
  }
  f("w", blk.fusion_weight_w, grads.fusion_weight_w);
}

}  // namespace

GradReport fusion_gradient_check(std::uint64_t seed, double eps) {
  std::mt19937_64 rng(seed);
  GradReport rep;
  constexpr int cb = 2, cc = 2;
  auto blk = FusionBlock<double>::make(FusionMode::volterra, cb, cc, 2, 1);
  for (Bridge<double>* b : {&blk.bridge_bc, &blk.bridge_cb})
    std::get<VolterraLayerParams<double>>(*b).for_each_kernel(
        [&](const std::string&, Tensor<double>& t) { t = randn<double>(t.shape(), rng, 0.5); });
  blk.fusion_weight_w = 0.37;
  const auto fb = randn<double>({2, cb, 3, 3}, rng), fc = randn<double>({2, cc, 3, 3}, rng);
  const auto rb = randn<double>(fb.shape(), rng), rc = randn<double>(fc.shape(), rng);

  // L = <rb, x_b> + <rc, x_c>
  auto loss = [&](const FusionBlock<double>& k) {
    const auto xb = fuse_into_base(fb, fc, k);
    const auto xc = fuse_into_control(fc, fb, k);
    double s = 0;
    for (std::size_t i = 0; i < xb.size(); ++i) s += rb[i] * xb[i];
    for (std::size_t i = 0; i < xc.size(); ++i) s += rc[i] * xc[i];
    return s;
  };

  auto grads = zero_grad_like(blk);
  FusionCache<double> cache_b, cache_c;
  fuse_into_base(fb, fc, blk, &cache_b);
  fuse_into_control(fc, fb, blk, &cache_c);
  Tensor<double> d_fb(fb.shape()), d_fc(fc.shape());
  fuse_into_base_backward(fb, fc, blk, cache_b, rb, &grads, &d_fb, &d_fc);
  fuse_into_control_backward(fc, fb, blk, cache_c, rc, &grads, &d_fc, &d_fb);

  each_bridge_entry(blk, grads, [&](const std::string& name, double& v, double analytic) {
    const double keep = v;
    v = keep + eps;
    const double up = loss(blk);
    v = keep - eps;
    const double down = loss(blk);
    v = keep;
    const double numeric = (up - down) / (2 * eps);
    ++rep.n_params;
    if (!std::isfinite(analytic) || !std::isfinite(numeric)) rep.finite = false;
    const double e = rel_err(analytic, numeric);
    if (e > rep.max_relative_error) {
      rep.max_relative_error = e;
      rep.worst = name;
    }
  });

  // A standalone 3x3 layer exercises the spatial taps and padding.
  const auto p = random_layer(1, 2, 3, 2, rng);
  const auto gc = gradient_check(p, randn<double>({1, 1, 4, 4}, rng), eps);
  rep.n_params += param_count(p);
  if (!gc.ok) rep.finite = false;
  if (gc.max_relative_error > rep.max_relative_error) {
    rep.max_relative_error = gc.max_relative_error;
    rep.worst = "layer." + gc.worst_parameter;
  }
  return rep;
}

namespace {

struct OracleObject {
  double lo[3], hi[3], c[3];
};

double naive_percentile(std::vector<double> v, double p) {
  for (std::size_t i = 1; i < v.size(); ++i)
    for (std::size_t j = i; j > 0 && v[j - 1] > v[j]; --j) std::swap(v[j - 1], v[j]);
  const double pos = p * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = lo + 1 < v.size() ? lo + 1 : lo;
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

OracleObject oracle_object(const DepthMap& depth, const Mask& mask, const Intrinsics& k) {
  std::vector<double> axes[3];
  for (int v = 0; v < mask.height; ++v)
    for (int u = 0; u < mask.width; ++u) {
      if (!mask.at(u, v)) continue;
      const double d = depth.at(u, v);
      if (!(d > 0)) continue;
      axes[0].push_back((u - k.cx) * d / k.fx);
      axes[1].push_back((v - k.cy) * d / k.fy);
      axes[2].push_back(d);
    }
  OracleObject o{};
  for (int a = 0; a < 3; ++a) {
    o.lo[a] = naive_percentile(axes[a], 0.05);
    o.hi[a] = naive_percentile(axes[a], 0.95);
    double s = 0;
    for (double x : axes[a]) s += x;
    o.c[a] = s / static_cast<double>(axes[a].size());
  }
  return o;
}

std::optional<Predicate> oracle_predicate(const OracleObject& a, const OracleObject& b, double margin) {
  double score[3], delta[3];
  for (int ax = 0; ax < 3; ++ax) {
    delta[ax] = a.c[ax] - b.c[ax];
    double ext = 0.5 * ((a.hi[ax] - a.lo[ax]) + (b.hi[ax] - b.lo[ax]));
    if (ext < 1e-9) ext = 1e-9;
    score[ax] = std::abs(delta[ax]) / ext;
  }
  int best = 0;
  for (int ax = 1; ax < 3; ++ax)
    if (score[ax] > score[best]) best = ax;
  double second = -1;
  for (int ax = 0; ax < 3; ++ax)
    if (ax != best && score[ax] > second) second = score[ax];
  if (!(score[best] - second > margin)) return std::nullopt;
  static const Predicate neg[3] = {Predicate::left, Predicate::above, Predicate::front};
  static const Predicate pos[3] = {Predicate::right, Predicate::below, Predicate::behind};
  return delta[best] < 0 ? neg[best] : pos[best];
}

BBox random_box(int w, int h, int min_side, int max_side, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> side(min_side, max_side);
  const int bw = side(rng), bh = side(rng);
  const int x0 = std::uniform_int_distribution<int>(0, w - bw)(rng);
  const int y0 = std::uniform_int_distribution<int>(0, h - bh)(rng);
  return {x0, y0, x0 + bw, y0 + bh};
}

Mask blob_mask(int w, int h, const BBox& b, std::mt19937_64& rng) {
  Mask m = mask_from_bbox(w, h, b);
  std::bernoulli_distribution hole(0.15);
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x)
      if (hole(rng)) m.at(x, y) = 0;
  m.at(b.x0, b.y0) = 1;
  return m;
}

}  // namespace

SpatialReport spatial_oracle(int n_scenes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SpatialReport rep;
  constexpr int W = 64, H = 48;
  const Intrinsics K = Intrinsics::default_for(W, H);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double margins[] = {0.1, 0.3, 0.5};
  for (int s = 0; s < n_scenes; ++s) {
    const double d0 = 3.0 + 4.0 * u01(rng), du = 0.02 * (u01(rng) - 0.5), dv = 0.02 * (u01(rng) - 0.5);
    DepthMap depth;
    depth.width = W;
    depth.height = H;
    depth.values.resize(static_cast<std::size_t>(W) * H);
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u) depth.values[static_cast<std::size_t>(v) * W + u] = d0 + du * u + dv * v;
    Mask masks[2];
    for (int o = 0; o < 2; ++o) {
      const BBox b = random_box(W, H, 4, 20, rng);
      masks[o] = blob_mask(W, H, b, rng);
      const double offset = -0.5 + 4.0 * u01(rng);
      for (int v = b.y0; v < b.y1; ++v)
        for (int u = b.x0; u < b.x1; ++u)
          if (masks[o].at(u, v)) depth.values[static_cast<std::size_t>(v) * W + u] += offset;
    }
    const double margin = margins[s % 3];

    std::vector<SceneObject3D> objs;
    std::vector<OracleObject> oracle;
    for (int o = 0; o < 2; ++o) {
      auto pc = project_to_pointcloud(depth, masks[o], K);
      ObjectRecord r = make_object_record("obj" + std::to_string(o), "", mask_bbox(masks[o]), masks[o]);
      objs.push_back(make_scene_object(r, std::move(pc.points)));
      oracle.push_back(oracle_object(depth, masks[o], K));
    }
    const auto got = assign_predicate(objs[0], objs[1], margin);
    const auto want = oracle_predicate(oracle[0], oracle[1], margin);
    const auto back = assign_predicate(objs[1], objs[0], margin);
    ++rep.scenes;
    if (got == want) ++rep.agree;
    if (got.has_value()) ++rep.decided;
    const bool anti = got.has_value() == back.has_value() && (!got || *back == inverse(*got));
    if (anti) ++rep.antisymmetric;
  }
  return rep;
}

MultiReport multi_instance_oracle(int n_sets, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MultiReport rep;
  constexpr int W = 96, H = 64;
  for (int s = 0; s < n_sets; ++s) {
    const int n = std::uniform_int_distribution<int>(2, 6)(rng);
    std::vector<ObjectRecord> inst;
    for (int i = 0; i < n; ++i) {
      // Alternate wide rows and tall columns so both layouts occur.
      BBox b = random_box(W, H, 3, 14, rng);
      if (s % 2 == 1) {
        const int shift = std::uniform_int_distribution<int>(-2, 2)(rng);
        const int x0 = std::clamp(40 + shift, 0, W - b.width());
        b = {x0, b.y0, x0 + b.width(), b.y1};
      }
      Mask m = blob_mask(W, H, b, rng);
      inst.push_back(make_object_record("car", "", mask_bbox(m), m));
    }
    std::mt19937_64 plan_rng(seed * 31 + s);
    const InstanceGroup g = multi_instance_plan(inst, plan_rng);

    double xs[2] = {1e300, -1e300}, ys[2] = {1e300, -1e300};
    for (const auto& o : inst) {
      xs[0] = std::min(xs[0], o.bbox.center_x());
      xs[1] = std::max(xs[1], o.bbox.center_x());
      ys[0] = std::min(ys[0], o.bbox.center_y());
      ys[1] = std::max(ys[1], o.bbox.center_y());
    }
    const Layout layout = (xs[1] - xs[0]) >= (ys[1] - ys[0]) ? Layout::horizontal : Layout::vertical;
    const bool dir_ok = layout == Layout::horizontal
                            ? (g.direction == Direction::left || g.direction == Direction::right)
                            : (g.direction == Direction::top || g.direction == Direction::bottom);
    ++rep.sets;
    if (g.layout == layout && dir_ok && g.k >= 1 && g.k <= n) ++rep.layout_ok;

    // Sort-and-take by repeated extremum scan; ties go to the earlier instance.
    std::vector<int> want;
    std::vector<bool> used(n, false);
    for (int t = 0; t < g.k; ++t) {
      int pick = -1;
      for (int i = 0; i < n; ++i) {
        if (used[i]) continue;
        if (pick < 0) {
          pick = i;
          continue;
        }
        const auto& a = inst[i].bbox;
        const auto& p = inst[pick].bbox;
        bool better = false;
        switch (g.direction) {
          case Direction::left: better = a.center_x() < p.center_x(); break;
          case Direction::right: better = a.center_x() > p.center_x(); break;
          case Direction::top: better = a.center_y() < p.center_y(); break;
          case Direction::bottom: better = a.center_y() > p.center_y(); break;
        }
        if (better) pick = i;
      }
      used[pick] = true;
      want.push_back(pick);
    }
    if (g.selected == want) ++rep.selection_ok;

    bool mask_ok = g.combined_mask.width == W && g.combined_mask.height == H;
    for (int y = 0; mask_ok && y < H; ++y)
      for (int x = 0; x < W; ++x) {
        std::uint8_t v = 0;
        for (int i : want) v = v | inst[i].mask.at(x, y);
        if (g.combined_mask.at(x, y) != v) {
          mask_ok = false;
          break;
        }
      }
    if (mask_ok) ++rep.mask_ok;
  }
  return rep;
}

const Plant& paper_rating_plant() {
  // 10 items per task, 2 evaluators: 20 ratings per (model, task), 40 for ground truth.
  static const Plant p = {
      {"IP2P", "remove", 1, 9},         {"IP2P", "remove", 2, 11},          // 31/20 = 1.55
      {"IP2P", "add", 1, 3},            {"IP2P", "add", 2, 17},             // 37/20 = 1.85
      {"Inst-Inpaint", "remove", 2, 3}, {"Inst-Inpaint", "remove", 3, 17},  // 57/20 = 2.85
      {"PIPE", "add", 3, 5},            {"PIPE", "add", 4, 15},             // 75/20 = 3.75
      {"GalaxyEdit", "remove", 3, 1},   {"GalaxyEdit", "remove", 4, 19},    // 79/20 = 3.95
      {"GalaxyEdit", "add", 4, 19},     {"GalaxyEdit", "add", 5, 1},        // 81/20 = 4.05
      {kGroundTruthTag, "remove", 4, 5}, {kGroundTruthTag, "remove", 5, 15},
      {kGroundTruthTag, "add", 4, 5},    {kGroundTruthTag, "add", 5, 15},   // 190/40 = 4.75
  };
  return p;
}

const std::vector<std::string>& model_tags() {
  static const std::vector<std::string> t = {"IP2P", "Inst-Inpaint", "PIPE", "GalaxyEdit", kGroundTruthTag,
                                             "ground truth", "galaxy", "inpaint"};
  return t;
}

namespace {

constexpr int kItemsPerTask = 10;
constexpr int kEvaluators = 2;

std::map<std::pair<std::string, std::string>, std::vector<int>> expand(const Plant& plant) {
  std::map<std::pair<std::string, std::string>, std::vector<int>> out;
  for (const auto& [model, task, rating, count] : plant)
    for (int i = 0; i < count; ++i) out[{model, task}].push_back(rating);
  return out;
}

}  // namespace

SampleSet write_fixture_samples(const fs::path& dir, const Plant& plant) {
  fs::create_directories(dir / "img");
  std::map<std::string, std::vector<std::string>> models_by_task;
  for (const auto& [model, task, rating, count] : plant) {
    auto& v = models_by_task[task];
    if (std::find(v.begin(), v.end(), model) == v.end()) v.push_back(model);
  }
  nlohmann::json items = nlohmann::json::array();
  int file = 0;
  // File names carry the model tag so a path leak shows up in the audit.
  auto tiny_png = [&](std::uint8_t shade, const std::string& tag) {
    const std::string name = "img/" + tag + "-" + std::to_string(file++) + ".png";
    write_png(dir / name, Image(4, 4, 3, shade));
    return name;
  };
  for (const auto& [task, models] : models_by_task)
    for (int i = 0; i < kItemsPerTask; ++i) {
      nlohmann::json cands = nlohmann::json::array();
      for (const auto& m : models) cands.push_back({{"model", m}, {"image", tiny_png(static_cast<std::uint8_t>(file), m)}});
      items.push_back({{"item_id", task.substr(0, 1) + std::to_string(i)},
                       {"task", task},
                       {"instruction", task + " the object number " + std::to_string(i)},
                       {"source", tiny_png(7, "source")},
                       {"candidates", cands}});
    }
  const nlohmann::json j = {{"items", items}};
  write_file(dir / "samples.json", j.dump(2));
  return SampleSet::from_file(dir / "samples.json");
}

AggregateReport submit_plant(RatingService& svc, const Plant& plant) {
  auto ratings = expand(plant);
  std::map<std::pair<std::string, std::string>, std::size_t> used;
  for (int e = 0; e < kEvaluators; ++e) {
    const auto sess = svc.create_session("evaluator-" + std::to_string(e), 1000 + e);
    const std::string sid = sess.at("session_id").get<std::string>();
    for (;;) {
      const auto next = svc.next_item(sid);
      if (next.at("done").get<bool>()) break;
      const auto& item = next.at("item");
      const std::string item_id = item.at("item_id").get<std::string>();
      const EvalItem* ei = svc.samples().find(item_id);
      for (const auto& c : item.at("candidates")) {
        if (!c.at("rating").is_null()) continue;
        const std::string blind = c.at("blind_id").get<std::string>();
        std::string model;
        for (const auto& cand : ei->candidates)
          if (blind_token(svc.store().secret(), sid, item_id, cand.model) == blind) model = cand.model;
        const auto key = std::make_pair(model, ei->task);
        const int r = ratings.at(key).at(used[key]++);
        svc.submit_rating({{"session_id", sid}, {"item_id", item_id}, {"blind_id", blind}, {"rating", r}});
      }
    }
  }
  return svc.report();
}

}  // namespace criteria
