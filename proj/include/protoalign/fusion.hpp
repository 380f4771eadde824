#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "protoalign/autodiff.hpp"
#include "protoalign/mlp.hpp"

namespace protoalign::fusion {

// Maps a concatenated [image, text] embedding (2*d_c) to two logits:
// column 0 = "not matched", column 1 = "matched".
class FusionHead {
 public:
  FusionHead() = default;
  FusionHead(std::size_t embed_dim, std::size_t hidden, std::uint64_t seed);
  explicit FusionHead(Mlp net);

  ad::Tensor forward(const ad::Tensor& img, const ad::Tensor& txt) const;

  std::size_t embed_dim() const { return net_.in_dim() / 2; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
};

// One sampled negative text per image and one negative image per text.
struct ItmBatch {
  std::vector<std::size_t> negative_text_for_image;  // j(i) != i
  std::vector<std::size_t> negative_image_for_text;  // k(i) != i

  std::size_t batch_size() const { return negative_text_for_image.size(); }
};

// sim(i, j) = similarity of image i and text j. Row i draws j != i with
// probability softmax_{j != i}(sim(i, j) / temperature); column i draws the
// negative image k != i from softmax_{k != i}(sim(k, i) / temperature).
ItmBatch hard_negative_sample(const Matrix& sim, double temperature, std::mt19937_64& rng);

// Inverse-CDF draw from unnormalized nonnegative weights; never returns an
// index whose weight is zero.
std::size_t sample_index(const std::vector<double>& weights, std::mt19937_64& rng);

// Mean 2-class cross-entropy over B positive pairs (label 1) followed by B
// image-with-negative-text and B text-with-negative-image pairs (label 0).
ad::Tensor itm_loss(const FusionHead& head, const ad::Tensor& img, const ad::Tensor& txt,
                    const ItmBatch& batch);

}  // namespace protoalign::fusion
