#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "protoalign/autodiff.hpp"
#include "protoalign/codebook.hpp"
#include "protoalign/config.hpp"
#include "protoalign/distill.hpp"
#include "protoalign/fusion.hpp"

namespace protoalign {

// SGD (optional momentum, decoupled weight decay) or AdamW over a fixed,
// ordered parameter list.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, std::size_t num_params);

  void step(const std::vector<ad::Tensor*>& params, double lr, const TrainConfig& cfg);

  OptimizerKind kind() const { return kind_; }
  std::uint64_t steps_taken() const { return steps_; }
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void set_steps_taken(std::uint64_t s) { steps_ = s; }

 private:
  OptimizerKind kind_ = OptimizerKind::sgd;
  std::uint64_t steps_ = 0;
  std::vector<Matrix> m_;  // momentum / Adam first moment, lazily shaped
  std::vector<Matrix> v_;  // Adam second moment
};

// Everything a training run mutates.
struct ModelState {
  TrainConfig config;
  distill::EncoderPair image;
  distill::EncoderPair text;
  codebook::Codebook codebook;
  fusion::FusionHead head;
  ad::Tensor temperature;  // unconstrained 1x1; clamped to [1e-3, 1] at use
  distill::MemoryQueue queue_image;
  distill::MemoryQueue queue_text;
  Optimizer optimizer;
  std::uint64_t step = 0;

  static ModelState initialize(const TrainConfig& cfg);

  // Fixed order: image student, text student, codebook, head, temperature.
  std::vector<ad::Tensor*> trainable();
  ad::Tensor effective_temperature() const;
  double gamma() const;
};

inline constexpr double kMinTemperature = 1e-3;
inline constexpr double kMaxTemperature = 1.0;

// "CDCK" binary checkpoint: magic, u32 version, config JSON, step, then
// named parameter/queue/optimizer records. Version mismatch is a FormatError.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

// splitmix64-style mixing for deriving independent seeds from (seed, tag).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace protoalign
