#include "protoalign/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include "protoalign/binary_io.hpp"
#include "protoalign/error.hpp"

namespace protoalign::synth {

void SynthConfig::validate() const {
  if (num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
  if (dim_a == 0 || dim_b == 0 || latent_dim == 0) throw ConfigError("synth: dimensions must be positive");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("synth: noise_sigma must be >= 0");
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw ConfigError("synth: jitter must be >= 0");
  if (samples_train + samples_eval == 0) throw ConfigError("synth: need at least one sample");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"num_classes", c.num_classes}, {"dim_a", c.dim_a},
                     {"dim_b", c.dim_b},             {"latent_dim", c.latent_dim},
                     {"jitter", c.jitter},           {"noise_sigma", c.noise_sigma},
                     {"samples_train", c.samples_train}, {"samples_eval", c.samples_eval},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "num_classes") it->get_to(c.num_classes);
    else if (k == "dim_a") it->get_to(c.dim_a);
    else if (k == "dim_b") it->get_to(c.dim_b);
    else if (k == "latent_dim") it->get_to(c.latent_dim);
    else if (k == "jitter") it->get_to(c.jitter);
    else if (k == "noise_sigma") it->get_to(c.noise_sigma);
    else if (k == "samples_train") it->get_to(c.samples_train);
    else if (k == "samples_eval") it->get_to(c.samples_eval);
    else if (k == "seed") it->get_to(c.seed);
    else throw ConfigError("synth: unknown key '" + k + "'");
  }
}

PairedDataset PairedDataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw ShapeError("PairedDataset::slice: range out of bounds");
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  return gather(idx);
}

PairedDataset PairedDataset::gather(const std::vector<std::size_t>& indices) const {
  PairedDataset out;
  out.view_a = Matrix(indices.size(), view_a.cols());
  out.view_b = Matrix(indices.size(), view_b.cols());
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= size()) throw ShapeError("PairedDataset::gather: index out of range");
    std::copy(view_a.row(i).begin(), view_a.row(i).end(), out.view_a.row(r).begin());
    std::copy(view_b.row(i).begin(), view_b.row(i).end(), out.view_b.row(r).begin());
    out.labels.push_back(labels[i]);
  }
  out.num_train = indices.size();
  return out;
}

PairedDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t latent = cfg.latent_dim;

  Matrix anchors(cfg.num_classes, latent);
  for (double& v : anchors.data()) v = normal(rng);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(latent));
  Matrix wa(cfg.dim_a, latent), wb(cfg.dim_b, latent);
  for (double& v : wa.data()) v = normal(rng) * map_scale;
  for (double& v : wb.data()) v = normal(rng) * map_scale;

  const std::size_t n = cfg.samples_train + cfg.samples_eval;
  PairedDataset ds;
  ds.view_a = Matrix(n, cfg.dim_a);
  ds.view_b = Matrix(n, cfg.dim_b);
  ds.labels.resize(n);
  ds.num_train = cfg.samples_train;

  std::vector<double> z(latent);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % cfg.num_classes;
    ds.labels[i] = static_cast<std::uint32_t>(cls);
    for (std::size_t l = 0; l < latent; ++l) z[l] = anchors(cls, l) + cfg.jitter * normal(rng);
    for (std::size_t r = 0; r < cfg.dim_a; ++r) {
      double s = 0.0;
      for (std::size_t l = 0; l < latent; ++l) s += wa(r, l) * z[l];
      ds.view_a(i, r) = s + cfg.noise_sigma * normal(rng);
    }
    for (std::size_t r = 0; r < cfg.dim_b; ++r) {
      double s = 0.0;
      for (std::size_t l = 0; l < latent; ++l) s += wb(r, l) * z[l];
      ds.view_b(i, r) = s + cfg.noise_sigma * normal(rng);
    }
  }
  return ds;
}

std::pair<double, double> recall_at_k(const Matrix& emb_a, const Matrix& emb_b, std::size_t k) {
  if (!emb_a.same_shape(emb_b)) throw ShapeError("recall_at_k: embedding shapes differ");
  const std::size_t n = emb_a.rows();
  if (n == 0) throw ShapeError("recall_at_k: empty embeddings");
  if (k == 0 || k > n)
    throw DomainError("recall_at_k: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
  const Matrix sim = matmul_transposed_b(emb_a, emb_b);

  std::size_t hits_ab = 0, hits_ba = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = sim(i, i);
    std::size_t rank_ab = 0, rank_ba = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (sim(i, j) > s || (sim(i, j) == s && j < i)) ++rank_ab;
      if (sim(j, i) > s || (sim(j, i) == s && j < i)) ++rank_ba;
    }
    hits_ab += rank_ab < k;
    hits_ba += rank_ba < k;
  }
  const double dn = static_cast<double>(n);
  return {static_cast<double>(hits_ab) / dn, static_cast<double>(hits_ba) / dn};
}

void save_dataset(const PairedDataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  io::BinaryWriter w(os);
  w.magic("CDAL");
  w.u32(kDatasetFormatVersion);
  w.u64(ds.num_train);
  w.u64(ds.num_eval());
  w.u64(ds.view_a.cols());
  w.u64(ds.view_b.cols());
  for (double v : ds.view_a.data()) w.f64(v);
  for (double v : ds.view_b.data()) w.f64(v);
  for (std::uint32_t l : ds.labels) w.u32(l);
  if (!os) throw FormatError("write to '" + path.string() + "' failed");
}

PairedDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open dataset '" + path.string() + "'");
  io::BinaryReader r(is);
  r.expect_magic("CDAL", "dataset " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kDatasetFormatVersion)
    throw FormatError("dataset " + path.string() + ": format version " + std::to_string(version) +
                      " is not supported (expected " + std::to_string(kDatasetFormatVersion) + ")");
  PairedDataset ds;
  ds.num_train = r.u64();
  const std::uint64_t n = ds.num_train + r.u64();
  const std::uint64_t da = r.u64();
  const std::uint64_t db = r.u64();
  if (n > (std::uint64_t{1} << 28) || da > 65536 || db > 65536) throw FormatError("dataset dimensions out of range");
  ds.view_a = Matrix(n, da);
  ds.view_b = Matrix(n, db);
  for (double& v : ds.view_a.data()) v = r.f64();
  for (double& v : ds.view_b.data()) v = r.f64();
  ds.labels.resize(n);
  for (auto& l : ds.labels) l = r.u32();
  return ds;
}

}  // namespace protoalign::synth
