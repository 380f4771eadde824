#include "protoalign/distill.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "protoalign/error.hpp"

namespace protoalign::distill {

namespace {

constexpr double kUnitTol = 1e-6;

void require_unit_rows(const char* where, const Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double n2 = 0.0;
    for (double v : m.row(i)) n2 += v * v;
    if (std::abs(std::sqrt(n2) - 1.0) > kUnitTol)
      throw ContractError(std::string(where) + ": row " + std::to_string(i) + " is not unit-normalized");
  }
}

}  // namespace

MemoryQueue::MemoryQueue(std::size_t capacity, std::size_t dim) : storage_(capacity, dim) {
  if (capacity == 0 || dim == 0) throw CapacityError("MemoryQueue: capacity and dim must be positive");
}

void MemoryQueue::enqueue(const Matrix& feats) {
  if (feats.cols() != dim())
    throw ShapeError("MemoryQueue: feature dim " + std::to_string(feats.cols()) + " vs queue dim " +
                     std::to_string(dim()));
  if (feats.rows() > capacity())
    throw CapacityError("MemoryQueue: batch of " + std::to_string(feats.rows()) +
                        " rows exceeds capacity " + std::to_string(capacity()));
  require_unit_rows("MemoryQueue::enqueue", feats);
  for (std::size_t r = 0; r < feats.rows(); ++r) {
    std::copy(feats.row(r).begin(), feats.row(r).end(), storage_.row(cursor_).begin());
    cursor_ = (cursor_ + 1) % capacity();
  }
  filled_ = std::min(filled_ + feats.rows(), capacity());
}

Matrix MemoryQueue::contents() const {
  std::vector<double> data(storage_.data().begin(), storage_.data().begin() + filled_ * dim());
  return Matrix(filled_, dim(), std::move(data));
}

MemoryQueue MemoryQueue::restore(Matrix storage, std::size_t cursor, std::size_t filled) {
  if (storage.rows() == 0 || cursor >= storage.rows() || filled > storage.rows())
    throw FormatError("MemoryQueue: inconsistent restored state");
  MemoryQueue q;
  q.storage_ = std::move(storage);
  q.cursor_ = cursor;
  q.filled_ = filled;
  return q;
}

EncoderPair EncoderPair::from_student(Mlp student) {
  EncoderPair p;
  p.teacher = student.clone(false);
  p.student = std::move(student);
  return p;
}

ad::Tensor encode(const Mlp& net, const ad::Tensor& x) { return ad::l2_normalize_rows(net.forward(x)); }

void ema_update(EncoderPair& pair, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw DomainError("ema_update: alpha must lie in [0, 1], got " + std::to_string(alpha));
  auto tp = pair.teacher.parameters();
  const auto sp = std::as_const(pair.student).parameters();
  for (std::size_t k = 0; k < tp.size(); ++k) {
    Matrix& t = tp[k]->mutable_value();
    const Matrix& s = sp[k]->value();
    if (!t.same_shape(s)) throw ShapeError("ema_update: teacher/student parameter shapes differ");
    for (std::size_t i = 0; i < t.size(); ++i)
      t.data()[i] = alpha * t.data()[i] + (1.0 - alpha) * s.data()[i];
  }
}

ad::Tensor similarity_logits(const ad::Tensor& anchor, const ad::Tensor& positives,
                             const MemoryQueue& queue) {
  if (queue.empty())
    throw StateError("similarity_distribution: memory queue is empty; enqueue teacher features "
                     "(warm-up) before computing alignment distributions");
  if (!anchor.value().same_shape(positives.value()))
    throw ShapeError("similarity_distribution: anchor/positive shapes differ");
  if (anchor.cols() != queue.dim())
    throw ShapeError("similarity_distribution: feature dim " + std::to_string(anchor.cols()) +
                     " vs queue dim " + std::to_string(queue.dim()));
  require_unit_rows("similarity_distribution(anchor)", anchor.value());
  require_unit_rows("similarity_distribution(positives)", positives.value());
  const ad::Tensor pos = positives.detach();
  const ad::Tensor q = ad::Tensor::constant(queue.contents().transposed());
  return ad::concat_cols(ad::row_dot(anchor, pos), ad::matmul(anchor, q));
}

ad::Tensor similarity_distribution(const ad::Tensor& anchor, const ad::Tensor& positives,
                                   const MemoryQueue& queue, const ad::Tensor& gamma) {
  return ad::row_softmax(similarity_logits(anchor, positives, queue), gamma);
}

namespace {

ad::Tensor distill_term(const ad::Tensor& student_anchor, const ad::Tensor& teacher_anchor,
                        const ad::Tensor& teacher_positive, const MemoryQueue& queue,
                        const ad::Tensor& gamma, bool raw_targets) {
  const ad::Tensor student_logits = similarity_logits(student_anchor, teacher_positive, queue);
  const ad::Tensor teacher_logits = similarity_logits(teacher_anchor, teacher_positive, queue);
  const Matrix target = raw_targets
                            ? teacher_logits.value()
                            : ad::row_softmax(teacher_logits, gamma.item()).value();
  return ad::soft_cross_entropy(student_logits, target, gamma);
}

}  // namespace

AlignmentLossReport ica_loss(const ad::Tensor& img_student, const ad::Tensor& txt_student,
                             const ad::Tensor& img_teacher, const ad::Tensor& txt_teacher,
                             const MemoryQueue& q_img, const MemoryQueue& q_txt,
                             const ad::Tensor& gamma, bool raw_teacher_targets) {
  const ad::Tensor img_t = img_teacher.detach();
  const ad::Tensor txt_t = txt_teacher.detach();

  AlignmentLossReport r;
  r.l_t2i = distill_term(txt_student, txt_t, img_t, q_img, gamma, raw_teacher_targets);
  r.l_i2t = distill_term(img_student, img_t, txt_t, q_txt, gamma, raw_teacher_targets);
  r.l_i2i = distill_term(img_student, img_t, img_t, q_img, gamma, raw_teacher_targets);
  r.l_t2t = distill_term(txt_student, txt_t, txt_t, q_txt, gamma, raw_teacher_targets);

  const ad::Tensor terms[] = {r.l_t2i, r.l_i2t, r.l_i2i, r.l_t2t};
  const double ones[] = {1.0, 1.0, 1.0, 1.0};
  r.total = ad::weighted_sum(terms, ones);
  return r;
}

}  // namespace protoalign::distill
