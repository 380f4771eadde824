#pragma once

#include <cstddef>

#include "protoalign/autodiff.hpp"
#include "protoalign/mlp.hpp"

namespace protoalign::distill {

// Fixed-capacity FIFO ring of unit-norm teacher features.
class MemoryQueue {
 public:
  MemoryQueue() = default;
  MemoryQueue(std::size_t capacity, std::size_t dim);

  // Writes rows at the cursor with wraparound, overwriting the oldest rows.
  void enqueue(const Matrix& teacher_features);

  std::size_t capacity() const { return storage_.rows(); }
  std::size_t dim() const { return storage_.cols(); }
  std::size_t filled() const { return filled_; }
  std::size_t cursor() const { return cursor_; }
  bool empty() const { return filled_ == 0; }
  const Matrix& storage() const { return storage_; }

  // The filled region, rows 0..filled-1 of storage.
  Matrix contents() const;

  static MemoryQueue restore(Matrix storage, std::size_t cursor, std::size_t filled);

 private:
  Matrix storage_;
  std::size_t cursor_ = 0;
  std::size_t filled_ = 0;
};

// Student encoder plus a structurally identical teacher that only moves via
// ema_update.
struct EncoderPair {
  Mlp student;
  Mlp teacher;

  static EncoderPair from_student(Mlp student);
};

// Unit-normalized encoder output.
ad::Tensor encode(const Mlp& net, const ad::Tensor& x);

// teacher <- alpha * teacher + (1 - alpha) * student, elementwise.
// Accepts alpha in [0, 1]: 1 leaves the teacher unchanged, 0 copies the student.
void ema_update(EncoderPair& pair, double alpha);

// Row i: [anchor_i . positive_i, anchor_i . q_1, ..., anchor_i . q_filled].
ad::Tensor similarity_logits(const ad::Tensor& anchor, const ad::Tensor& positives,
                             const MemoryQueue& queue);
// Row-wise softmax of similarity_logits / gamma. The positive is candidate 0.
ad::Tensor similarity_distribution(const ad::Tensor& anchor, const ad::Tensor& positives,
                                   const MemoryQueue& queue, const ad::Tensor& gamma);

struct AlignmentLossReport {
  ad::Tensor l_t2i;
  ad::Tensor l_i2t;
  ad::Tensor l_i2i;
  ad::Tensor l_t2t;
  ad::Tensor total;  // l_t2i + l_i2t + l_i2i + l_t2t
};

// Four distillation terms. Student distributions use the student anchor and
// the teacher positive; targets use the teacher anchor against the same
// candidates. Targets are softmax(teacher logits / gamma) unless
// raw_teacher_targets is set, in which case the raw teacher similarities are
// used as-is.
AlignmentLossReport ica_loss(const ad::Tensor& img_student, const ad::Tensor& txt_student,
                             const ad::Tensor& img_teacher, const ad::Tensor& txt_teacher,
                             const MemoryQueue& q_img, const MemoryQueue& q_txt,
                             const ad::Tensor& gamma, bool raw_teacher_targets = false);

}  // namespace protoalign::distill
