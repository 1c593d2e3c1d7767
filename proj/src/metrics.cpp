#include "galaxyedit/metrics.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "galaxyedit/records.hpp"

namespace galaxyedit {

using nlohmann::json;
namespace fs = std::filesystem;

PixelDistance pixel_distance(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ShapeError("pixel_distance: shape mismatch " + std::to_string(a.width) + "x" + std::to_string(a.height) + "x" +
                     std::to_string(a.channels) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                     std::to_string(b.channels));
  if (a.pixels.empty()) throw ShapeError("pixel_distance: empty images");
  double s1 = 0, s2 = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = (static_cast<double>(a.pixels[i]) - b.pixels[i]) / 255.0;
    s1 += std::abs(d);
    s2 += d * d;
  }
  const double n = static_cast<double>(a.pixels.size());
  return {s1 / n, s2 / n};
}

double embedding_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("embedding_similarity: dimension mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 0.0;
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

EmbeddingSet EmbeddingSet::from_rows(const std::vector<std::vector<double>>& rows, std::string provider_id) {
  EmbeddingSet s;
  s.provider_id = std::move(provider_id);
  if (rows.empty()) return s;
  const auto d = rows[0].size();
  s.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw ShapeError("EmbeddingSet: ragged rows");
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::isfinite(rows[i][j])) throw NumericError("EmbeddingSet: non-finite entry");
      s.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return s;
}

MomentAccumulator::MomentAccumulator(int dim) : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::MatrixXd::Zero(dim, dim)) {}

void MomentAccumulator::add(const Eigen::VectorXd& x) {
  if (n_ == 0 && mean_.size() == 0) {
    mean_ = Eigen::VectorXd::Zero(x.size());
    m2_ = Eigen::MatrixXd::Zero(x.size(), x.size());
  }
  if (x.size() != mean_.size()) throw ShapeError("MomentAccumulator: dimension mismatch");
  ++n_;
  const Eigen::VectorXd delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (x - mean_).transpose();
}

void MomentAccumulator::merge(const MomentAccumulator& o) {
  if (o.n_ == 0) return;
  if (n_ == 0) {
    *this = o;
    return;
  }
  if (o.dim() != dim()) throw ShapeError("MomentAccumulator: dimension mismatch");
  const double na = static_cast<double>(n_), nb = static_cast<double>(o.n_), n = na + nb;
  const Eigen::VectorXd delta = o.mean_ - mean_;
  mean_ += delta * (nb / n);
  m2_ += o.m2_ + delta * delta.transpose() * (na * nb / n);
  n_ += o.n_;
}

Eigen::MatrixXd MomentAccumulator::covariance() const {
  if (n_ < 2) throw ShapeError("covariance needs at least 2 samples, got " + std::to_string(n_));
  Eigen::MatrixXd c = m2_ / static_cast<double>(n_ - 1);
  return 0.5 * (c + c.transpose());
}

GaussianStats gaussian_stats(const EmbeddingSet& s) {
  const auto n = s.vectors.rows();
  if (n < 2) throw ShapeError("frechet_distance: need N >= 2 vectors, got " + std::to_string(n));
  MomentAccumulator acc(static_cast<int>(s.vectors.cols()));
  for (Eigen::Index i = 0; i < n; ++i) acc.add(s.vectors.row(i).transpose());
  return {acc.mean(), acc.covariance()};
}

namespace {

/// Eigenvalues of a symmetric matrix with tiny negatives clamped to 0.
Eigen::VectorXd clamped_eigenvalues(const Eigen::VectorXd& ev, const char* what) {
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd out = ev;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) >= 0) continue;
    if (ev(i) < -1e-10 * scale)
      throw NumericError(std::string("frechet_distance: ") + what + " has eigenvalue " + std::to_string(ev(i)) +
                         " below tolerance");
    out(i) = 0.0;
  }
  return out;
}

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
  const Eigen::VectorXd ev = clamped_eigenvalues(es.eigenvalues(), "covariance");
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianStats& x, const GaussianStats& y) {
  const auto d = x.mu.size();
  if (d == 0 || y.mu.size() != d || x.sigma.rows() != d || x.sigma.cols() != d || y.sigma.rows() != d ||
      y.sigma.cols() != d)
    throw ShapeError("frechet_distance: dimension mismatch");
  const Eigen::MatrixXd sx = sym_sqrt(x.sigma);
  const Eigen::MatrixXd m = sx * y.sigma * sx;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
  const double tr_root = clamped_eigenvalues(es.eigenvalues(), "covariance product").cwiseSqrt().sum();
  const double fid = (x.mu - y.mu).squaredNorm() + x.sigma.trace() + y.sigma.trace() - 2.0 * tr_root;
  return std::max(0.0, fid);
}

double frechet_distance(const EmbeddingSet& x, const EmbeddingSet& y) {
  if (x.vectors.cols() != y.vectors.cols()) throw ShapeError("frechet_distance: dimension mismatch");
  return frechet_distance(gaussian_stats(x), gaussian_stats(y));
}

EmbeddingProviders EmbeddingProviders::mock(std::uint64_t seed) {
  EmbeddingProviders p;
  p.clip = ModelClients::all_mock(seed);
  p.dino = ModelClients::all_mock(seed + 1);
  return p;
}

EmbeddingProviders EmbeddingProviders::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("providers: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "clip" && it.key() != "dino" && it.key() != "seed")
      throw ConfigError("providers: unknown key '" + it.key() + "'");
  const std::uint64_t seed = j.value("seed", std::uint64_t{0});
  EmbeddingProviders p = mock(seed);
  auto load = [&](const char* key, ModelClients& out, std::string& id, std::uint64_t s) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (v.is_string() && v.get<std::string>() == "mock") return;
    out = ModelClients::from_config(json{{"embedder", v}}, s);
    id = v.value("endpoint", std::string(key));
  };
  load("clip", p.clip, p.clip_id, seed);
  load("dino", p.dino, p.dino_id, seed + 1);
  return p;
}

EmbeddingProviders EmbeddingProviders::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open providers file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError("providers " + path.string() + ": " + e.what());
  }
}

json MetricReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"provider_id", provider_id},
          {"n_samples", n_samples},
          {"metrics",
           {{"l1", opt(l1)}, {"l2", opt(l2)}, {"clip_t", opt(clip_t)}, {"clip_i", opt(clip_i)}, {"dino", opt(dino)},
            {"fid", opt(fid)}}},
          {"missing", missing},
          {"notes", notes}};
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "sample_id,task,l1,l2,clip_t,clip_i,dino\n";
  for (const auto& s : samples)
    os << s.sample_id << ',' << s.task << ',' << s.l1 << ',' << s.l2 << ',' << s.clip_t << ',' << s.clip_i << ','
       << s.dino << '\n';
  return os.str();
}

MetricReport evaluate_manifest(const fs::path& manifest, const fs::path& pred_dir, const EmbeddingProviders& providers,
                               const std::string& task) {
  if (!task.empty()) parse_task(task);
  const auto samples = read_manifest(manifest);
  const auto root = manifest.parent_path();
  MetricReport r;
  r.provider_id = providers.provider_id();
  r.notes = {"pixel distances use values in [0,1]",
             "clip_t is raw similarity; lower is better for remove, higher for add",
             "fid uses the clip provider embeddings, not Inception features"};
  std::vector<std::vector<double>> pred_emb, tgt_emb;
  double s_l1 = 0, s_l2 = 0, s_ct = 0, s_ci = 0, s_d = 0;
  for (const auto& s : samples) {
    if (!task.empty() && to_string(s.task) != task) continue;
    const fs::path pred_path = pred_dir / (s.sample_id + ".png");
    if (!fs::exists(pred_path)) {
      r.missing.push_back(s.sample_id);
      continue;
    }
    const Image pred = read_png(pred_path);
    Image tgt = read_png(root / s.target_path);
    if (tgt.width != pred.width || tgt.height != pred.height) tgt = resize(tgt, pred.width, pred.height);
    if (tgt.channels != pred.channels) throw ShapeError("evaluate: channel mismatch for " + s.sample_id);
    SampleMetrics m;
    m.sample_id = s.sample_id;
    m.task = to_string(s.task);
    const auto pd = pixel_distance(pred, tgt);
    m.l1 = pd.l1;
    m.l2 = pd.l2;
    const auto cp = providers.clip.embed_image(pred), ct = providers.clip.embed_image(tgt);
    m.clip_i = embedding_similarity(cp, ct);
    m.clip_t = s.instructions.empty() ? 0.0 : embedding_similarity(cp, providers.clip.embed_text(s.instructions[0].text));
    m.dino = embedding_similarity(providers.dino.embed_image(pred), providers.dino.embed_image(tgt));
    pred_emb.push_back(cp);
    tgt_emb.push_back(ct);
    s_l1 += m.l1;
    s_l2 += m.l2;
    s_ct += m.clip_t;
    s_ci += m.clip_i;
    s_d += m.dino;
    r.samples.push_back(std::move(m));
  }
  r.n_samples = static_cast<int>(r.samples.size());
  if (r.n_samples > 0) {
    const double n = r.n_samples;
    r.l1 = s_l1 / n;
    r.l2 = s_l2 / n;
    r.clip_t = s_ct / n;
    r.clip_i = s_ci / n;
    r.dino = s_d / n;
  }
  if (r.n_samples >= 2)
    r.fid = frechet_distance(EmbeddingSet::from_rows(pred_emb, providers.clip_id),
                             EmbeddingSet::from_rows(tgt_emb, providers.clip_id));
  else
    r.notes.push_back("fid needs at least 2 samples");
  if (!r.missing.empty()) spdlog::warn("evaluate: {} predictions missing", r.missing.size());
  return r;
}

}  // namespace galaxyedit
