#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "protoalign/matrix.hpp"

namespace protoalign::synth {

// Paired two-view generative model:
//   latent  = anchor[class] + jitter * N(0, I)
//   view_a  = W_a latent + noise_sigma * N(0, I)
//   view_b  = W_b latent + noise_sigma * N(0, I)
struct SynthConfig {
  std::size_t num_classes = 10;
  std::size_t dim_a = 32;
  std::size_t dim_b = 48;
  std::size_t latent_dim = 8;
  double jitter = 0.5;
  double noise_sigma = 0.1;
  std::size_t samples_train = 2000;
  std::size_t samples_eval = 500;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

// Rows 0..num_train-1 are training pairs, the rest are held out.
struct PairedDataset {
  Matrix view_a;
  Matrix view_b;
  std::vector<std::uint32_t> labels;
  std::size_t num_train = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t num_eval() const { return size() - num_train; }
  PairedDataset slice(std::size_t begin, std::size_t end) const;
  PairedDataset train_split() const { return slice(0, num_train); }
  // Falls back to the whole set when nothing is held out.
  PairedDataset eval_split() const { return num_eval() == 0 ? *this : slice(num_train, size()); }
  // Rows at `indices`, in order; num_train is set to indices.size().
  PairedDataset gather(const std::vector<std::size_t>& indices) const;
};

PairedDataset generate(const SynthConfig& cfg);

// Fraction of queries whose true counterpart ranks within the top k, for
// a->b and b->a. Ties in cosine score rank the lower index first.
std::pair<double, double> recall_at_k(const Matrix& emb_a, const Matrix& emb_b, std::size_t k);

// "CDAL" file: magic, u32 version, u64 num_train, u64 num_eval, u64 dim_a,
// u64 dim_b, f64 view_a (row-major), f64 view_b, u32 labels; all little-endian.
inline constexpr std::uint32_t kDatasetFormatVersion = 1;
void save_dataset(const PairedDataset& ds, const std::filesystem::path& path);
PairedDataset load_dataset(const std::filesystem::path& path);

}  // namespace protoalign::synth
