#pragma once

#include <cstdint>
#include <string_view>

#include "protoalign/autodiff.hpp"
#include "protoalign/ot.hpp"

namespace protoalign::codebook {

// d_c x K matrix of learnable prototypes, one unit-norm prototype per column.
class Codebook {
 public:
  Codebook() = default;
  explicit Codebook(Matrix prototypes);

  // Columns drawn from N(0, 1) and normalized.
  static Codebook random(std::size_t dim, std::size_t codewords, std::uint64_t seed);

  std::size_t dim() const { return prototypes_.rows(); }
  std::size_t size() const { return prototypes_.cols(); }
  const ad::Tensor& prototypes() const { return prototypes_; }
  ad::Tensor& prototypes() { return prototypes_; }

  // Restores unit column norms after an optimizer step.
  void renormalize();

 private:
  ad::Tensor prototypes_;
};

// Which teacher plan supervises each student modality.
enum class Pairing {
  cross,  // text students target the image plan and vice versa
  same,   // each student targets its own modality's plan
};

Pairing parse_pairing(std::string_view s);
std::string_view to_string(Pairing p);

struct CodebookLossReport {
  ad::Tensor l_ot_image;
  ad::Tensor l_ot_text;
  ad::Tensor l_t2p;
  ad::Tensor l_i2p;
  ad::Tensor total;  // l_ot_image + l_ot_text + l_t2p + l_i2p, in that order
  ot::TransportPlan plan_image;
  ot::TransportPlan plan_text;
};

// Z C for unit feature rows; entries are cosines in [-1, 1].
ad::Tensor prototype_logits(const ad::Tensor& features, const Codebook& cb);

// Teacher features are detached on entry, so they never receive gradient.
// Cross-entropy targets are the teacher plans rescaled by N (unit row mass).
CodebookLossReport codebook_loss(const ad::Tensor& img_student, const ad::Tensor& txt_student,
                                 const ad::Tensor& img_teacher, const ad::Tensor& txt_teacher,
                                 const Codebook& cb, const ad::Tensor& gamma,
                                 const ot::IpotConfig& ipot_cfg, Pairing pairing = Pairing::cross);

// Same loss with externally supplied plans (no solver call).
CodebookLossReport codebook_loss_given_plans(const ad::Tensor& img_student, const ad::Tensor& txt_student,
                                             const ad::Tensor& img_teacher, const ad::Tensor& txt_teacher,
                                             const Codebook& cb, const ad::Tensor& gamma,
                                             const ot::TransportPlan& plan_image,
                                             const ot::TransportPlan& plan_text,
                                             Pairing pairing = Pairing::cross);

}  // namespace protoalign::codebook
