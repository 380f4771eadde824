#include "protoalign/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "protoalign/error.hpp"

namespace protoalign::fusion {

FusionHead::FusionHead(std::size_t embed_dim, std::size_t hidden, std::uint64_t seed)
    : net_(2 * embed_dim, hidden, 2, seed) {}

FusionHead::FusionHead(Mlp net) : net_(std::move(net)) {
  if (net_.out_dim() != 2 || net_.in_dim() % 2 != 0)
    throw ShapeError("FusionHead: network must map 2*d_c inputs to 2 logits");
}

ad::Tensor FusionHead::forward(const ad::Tensor& img, const ad::Tensor& txt) const {
  if (img.cols() != embed_dim() || txt.cols() != embed_dim() || img.rows() != txt.rows())
    throw ShapeError("FusionHead: expected two B x " + std::to_string(embed_dim()) + " embeddings");
  return net_.forward(ad::concat_cols(img, txt));
}

std::size_t sample_index(const std::vector<double>& weights, std::mt19937_64& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0) || !std::isfinite(total)) throw DomainError("sample_index: weights must have positive finite sum");
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  std::size_t last_positive = weights.size();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    acc += weights[i];
    if (u < acc) return i;
  }
  return last_positive;  // u landed on the rounding tail of the cumulative sum
}

namespace {

std::vector<double> excluded_softmax_weights(const Matrix& sim, std::size_t fixed, bool along_row,
                                             double temperature) {
  const std::size_t n = sim.rows();
  auto at = [&](std::size_t other) { return along_row ? sim(fixed, other) : sim(other, fixed); };
  double m = -INFINITY;
  for (std::size_t j = 0; j < n; ++j)
    if (j != fixed) m = std::max(m, at(j));
  std::vector<double> w(n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    if (j != fixed) w[j] = std::exp((at(j) - m) / temperature);
  return w;
}

}  // namespace

ItmBatch hard_negative_sample(const Matrix& sim, double temperature, std::mt19937_64& rng) {
  if (sim.rows() != sim.cols()) throw ShapeError("hard_negative_sample: similarity matrix must be square");
  if (sim.rows() < 2)
    throw DomainError("hard_negative_sample: batch size must be at least 2, got " + std::to_string(sim.rows()));
  if (!(temperature > 0.0)) throw DomainError("hard_negative_sample: temperature must be positive");
  const std::size_t b = sim.rows();
  ItmBatch out;
  out.negative_text_for_image.resize(b);
  out.negative_image_for_text.resize(b);
  for (std::size_t i = 0; i < b; ++i)
    out.negative_text_for_image[i] = sample_index(excluded_softmax_weights(sim, i, true, temperature), rng);
  for (std::size_t i = 0; i < b; ++i)
    out.negative_image_for_text[i] = sample_index(excluded_softmax_weights(sim, i, false, temperature), rng);
  return out;
}

ad::Tensor itm_loss(const FusionHead& head, const ad::Tensor& img, const ad::Tensor& txt,
                    const ItmBatch& batch) {
  const std::size_t b = img.rows();
  if (txt.rows() != b || batch.negative_text_for_image.size() != b ||
      batch.negative_image_for_text.size() != b)
    throw ShapeError("itm_loss: batch of " + std::to_string(b) + " pairs does not match sampled negatives");

  std::vector<std::size_t> img_idx, txt_idx;
  img_idx.reserve(3 * b);
  txt_idx.reserve(3 * b);
  for (std::size_t i = 0; i < b; ++i) img_idx.push_back(i), txt_idx.push_back(i);
  for (std::size_t i = 0; i < b; ++i) img_idx.push_back(i), txt_idx.push_back(batch.negative_text_for_image[i]);
  for (std::size_t i = 0; i < b; ++i) img_idx.push_back(batch.negative_image_for_text[i]), txt_idx.push_back(i);

  const ad::Tensor logits = head.forward(ad::gather_rows(img, img_idx), ad::gather_rows(txt, txt_idx));
  Matrix labels(3 * b, 2);
  for (std::size_t r = 0; r < 3 * b; ++r) labels(r, r < b ? 1 : 0) = 1.0;
  return ad::soft_cross_entropy(logits, labels, 1.0);
}

}  // namespace protoalign::fusion
