#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

#include "protoalign/codebook.hpp"
#include "protoalign/ot.hpp"
#include "protoalign/synthdata.hpp"

namespace protoalign {

enum class LrSchedule { constant, cosine };
enum class OptimizerKind { sgd, adamw };

struct LossWeights {
  double ica = 1.0;
  double code = 1.0;
  double itm = 1.0;
};

struct TrainConfig {
  std::size_t d_c = 16;
  std::size_t codewords = 32;
  std::size_t queue_capacity = 256;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  std::size_t encoder_hidden = 128;
  std::size_t fusion_hidden = 32;

  double base_lr = 3e-2;
  double lr_min = 1e-4;
  std::size_t warmup_steps = 100;
  LrSchedule lr_schedule = LrSchedule::cosine;

  OptimizerKind optimizer = OptimizerKind::sgd;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Multiplies the learning rate of the temperature; 0 freezes it.
  double temperature_lr_scale = 0.0;

  double alpha = 0.995;
  double gamma_init = 0.3;
  LossWeights loss_weights;
  codebook::Pairing pairing = codebook::Pairing::cross;
  bool raw_teacher_targets = false;
  ot::IpotConfig ipot;

  std::uint64_t seed = 1;
  synth::SynthConfig data;

  std::size_t eval_every_epochs = 0;       // 0: evaluate only after the last step
  std::size_t checkpoint_every_steps = 0;  // 0: checkpoint only at the end

  // Throws ConfigError on any violated invariant.
  void validate() const;

  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const { return epochs * steps_per_epoch(); }
};

// Sets one field from its textual form. Accepted keys are the flat names
// written by to_json (e.g. "w_code", "ipot_epsilon", "data_noise_sigma").
// Unknown keys and malformed values raise ConfigError.
void set_config_field(TrainConfig& cfg, std::string_view key, std::string_view value);

nlohmann::json to_json(const TrainConfig& cfg);
// Flat object, or nested "ipot" / "data" / "loss_weights" objects.
TrainConfig config_from_json(const nlohmann::json& j);
// key=value lines ('#' comments allowed) or a JSON document.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace protoalign
