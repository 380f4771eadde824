#include "protoalign/codebook.hpp"

#include <algorithm>

#include <cmath>
#include <random>
#include <string>

#include "protoalign/error.hpp"

namespace protoalign::codebook {

Codebook::Codebook(Matrix prototypes) {
  if (prototypes.cols() < 1 || prototypes.rows() < 1) throw ShapeError("Codebook: empty prototype matrix");
  prototypes_ = ad::Tensor::parameter(std::move(prototypes));
}

Codebook Codebook::random(std::size_t dim, std::size_t codewords, std::uint64_t seed) {
  if (codewords < 2) throw DomainError("Codebook: need at least 2 codewords");
  std::mt19937_64 rng(seed);
  Matrix m(dim, codewords);
  for (std::size_t j = 0; j < codewords; ++j)
    for (std::size_t i = 0; i < dim; ++i) m(i, j) = std::normal_distribution<double>(0.0, 1.0)(rng);
  return Codebook(normalize_cols(m));
}

void Codebook::renormalize() {
  Matrix& m = prototypes_.mutable_value();
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double n2 = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) n2 += m(i, j) * m(i, j);
    if (!(n2 > 0.0)) throw DomainError("Codebook: prototype " + std::to_string(j) + " collapsed to zero");
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) *= inv;
  }
}

Pairing parse_pairing(std::string_view s) {
  if (s == "cross") return Pairing::cross;
  if (s == "same") return Pairing::same;
  throw ConfigError("pairing must be 'cross' or 'same', got '" + std::string(s) + "'");
}

std::string_view to_string(Pairing p) { return p == Pairing::cross ? "cross" : "same"; }

ad::Tensor prototype_logits(const ad::Tensor& features, const Codebook& cb) {
  if (features.cols() != cb.dim())
    throw ShapeError("prototype_logits: feature dim " + std::to_string(features.cols()) +
                     " vs codebook dim " + std::to_string(cb.dim()));
  return ad::matmul(features, cb.prototypes());
}

namespace {

Matrix plan_targets(const ot::TransportPlan& plan) {
  Matrix t = plan.values;
  const double n = static_cast<double>(t.rows());
  for (double& v : t.data()) v *= n;
  return t;
}

}  // namespace

namespace {

ot::CostMatrix solver_cost(const Matrix& d) {
  Matrix c = d;
  for (double& v : c.data()) v = std::max(0.0, v);
  return ot::CostMatrix(std::move(c));
}

void check_feature_shapes(const ad::Tensor& a, const ad::Tensor& b, const ad::Tensor& c, const ad::Tensor& d) {
  if (!a.value().same_shape(b.value()) || !a.value().same_shape(c.value()) || !a.value().same_shape(d.value()))
    throw ShapeError("codebook_loss: student/teacher feature shapes differ");
}

CodebookLossReport assemble(const ad::Tensor& img_student, const ad::Tensor& txt_student,
                            const ad::Tensor& cost_img, const ad::Tensor& cost_txt, const Codebook& cb,
                            const ad::Tensor& gamma, ot::TransportPlan plan_image, ot::TransportPlan plan_text,
                            Pairing pairing) {
  CodebookLossReport r;
  r.plan_image = std::move(plan_image);
  r.plan_text = std::move(plan_text);

  r.l_ot_image = ot::ot_objective(r.plan_image, cost_img);
  r.l_ot_text = ot::ot_objective(r.plan_text, cost_txt);

  const Matrix target_img = plan_targets(r.plan_image);
  const Matrix target_txt = plan_targets(r.plan_text);
  const Matrix& t2p_target = pairing == Pairing::cross ? target_img : target_txt;
  const Matrix& i2p_target = pairing == Pairing::cross ? target_txt : target_img;

  r.l_t2p = ad::soft_cross_entropy(prototype_logits(txt_student, cb), t2p_target, gamma);
  r.l_i2p = ad::soft_cross_entropy(prototype_logits(img_student, cb), i2p_target, gamma);

  const ad::Tensor terms[] = {r.l_ot_image, r.l_ot_text, r.l_t2p, r.l_i2p};
  const double ones[] = {1.0, 1.0, 1.0, 1.0};
  r.total = ad::weighted_sum(terms, ones);
  return r;
}

}  // namespace

CodebookLossReport codebook_loss(const ad::Tensor& img_student, const ad::Tensor& txt_student,
                                 const ad::Tensor& img_teacher, const ad::Tensor& txt_teacher,
                                 const Codebook& cb, const ad::Tensor& gamma,
                                 const ot::IpotConfig& ipot_cfg, Pairing pairing) {
  check_feature_shapes(img_student, txt_student, img_teacher, txt_teacher);
  const ad::Tensor cost_img = ot::cosine_cost(img_teacher.detach(), cb.prototypes());
  const ad::Tensor cost_txt = ot::cosine_cost(txt_teacher.detach(), cb.prototypes());
  ot::TransportPlan plan_image = ot::ipot(solver_cost(cost_img.value()), ipot_cfg);
  ot::TransportPlan plan_text = ot::ipot(solver_cost(cost_txt.value()), ipot_cfg);
  return assemble(img_student, txt_student, cost_img, cost_txt, cb, gamma, std::move(plan_image),
                  std::move(plan_text), pairing);
}

CodebookLossReport codebook_loss_given_plans(const ad::Tensor& img_student, const ad::Tensor& txt_student,
                                             const ad::Tensor& img_teacher, const ad::Tensor& txt_teacher,
                                             const Codebook& cb, const ad::Tensor& gamma,
                                             const ot::TransportPlan& plan_image,
                                             const ot::TransportPlan& plan_text, Pairing pairing) {
  check_feature_shapes(img_student, txt_student, img_teacher, txt_teacher);
  const ad::Tensor cost_img = ot::cosine_cost(img_teacher.detach(), cb.prototypes());
  const ad::Tensor cost_txt = ot::cosine_cost(txt_teacher.detach(), cb.prototypes());
  if (!plan_image.values.same_shape(cost_img.value()) || !plan_text.values.same_shape(cost_txt.value()))
    throw ShapeError("codebook_loss_given_plans: plan shape does not match N x K");
  return assemble(img_student, txt_student, cost_img, cost_txt, cb, gamma, plan_image, plan_text, pairing);
}

}  // namespace protoalign::codebook
