#include "protoalign/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "protoalign/error.hpp"

namespace protoalign {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("config: key '" + std::string(key) + "' expects " + expected + ", got '" +
                    std::string(value) + "'");
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  const auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc{} || res.ptr != last) {
    if constexpr (std::is_floating_point_v<T>) bad_value(key, value, "a number");
    else bad_value(key, value, "a nonnegative integer");
  }
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(out)) bad_value(key, value, "a finite number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

using Setter = std::function<void(TrainConfig&, std::string_view, std::string_view)>;

template <typename T>
Setter set_size(T TrainConfig::*field) {
  return [field](TrainConfig& c, std::string_view k, std::string_view v) {
    c.*field = parse_number<T>(k, v);
  };
}

Setter set_double(double TrainConfig::*field) {
  return [field](TrainConfig& c, std::string_view k, std::string_view v) {
    c.*field = parse_number<double>(k, v);
  };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"d_c", set_size(&TrainConfig::d_c)},
      {"K", set_size(&TrainConfig::codewords)},
      {"codewords", set_size(&TrainConfig::codewords)},
      {"queue_capacity", set_size(&TrainConfig::queue_capacity)},
      {"batch_size", set_size(&TrainConfig::batch_size)},
      {"epochs", set_size(&TrainConfig::epochs)},
      {"encoder_hidden", set_size(&TrainConfig::encoder_hidden)},
      {"fusion_hidden", set_size(&TrainConfig::fusion_hidden)},
      {"base_lr", set_double(&TrainConfig::base_lr)},
      {"lr_min", set_double(&TrainConfig::lr_min)},
      {"warmup_steps", set_size(&TrainConfig::warmup_steps)},
      {"lr_schedule",
       [](TrainConfig& c, std::string_view k, std::string_view v) {
         if (v == "constant") c.lr_schedule = LrSchedule::constant;
         else if (v == "cosine") c.lr_schedule = LrSchedule::cosine;
         else bad_value(k, v, "'constant' or 'cosine'");
       }},
      {"optimizer",
       [](TrainConfig& c, std::string_view k, std::string_view v) {
         if (v == "sgd") c.optimizer = OptimizerKind::sgd;
         else if (v == "adamw") c.optimizer = OptimizerKind::adamw;
         else bad_value(k, v, "'sgd' or 'adamw'");
       }},
      {"momentum", set_double(&TrainConfig::momentum)},
      {"weight_decay", set_double(&TrainConfig::weight_decay)},
      {"adam_beta1", set_double(&TrainConfig::adam_beta1)},
      {"adam_beta2", set_double(&TrainConfig::adam_beta2)},
      {"adam_eps", set_double(&TrainConfig::adam_eps)},
      {"temperature_lr_scale", set_double(&TrainConfig::temperature_lr_scale)},
      {"alpha", set_double(&TrainConfig::alpha)},
      {"gamma_init", set_double(&TrainConfig::gamma_init)},
      {"w_ica", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.loss_weights.ica = parse_number<double>(k, v);
       }},
      {"w_code", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.loss_weights.code = parse_number<double>(k, v);
       }},
      {"w_itm", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.loss_weights.itm = parse_number<double>(k, v);
       }},
      {"w_mlm",
       [](TrainConfig&, std::string_view k, std::string_view v) {
         if (parse_number<double>(k, v) != 0.0)
           throw ConfigError("config: masked language modeling is not supported; w_mlm must be 0");
       }},
      {"pairing", [](TrainConfig& c, std::string_view, std::string_view v) {
         c.pairing = codebook::parse_pairing(v);
       }},
      {"raw_teacher_targets", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.raw_teacher_targets = parse_bool(k, v);
       }},
      {"ipot_epsilon", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.ipot.epsilon = parse_number<double>(k, v);
       }},
      {"ipot_outer_iters", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.ipot.outer_iters = parse_number<int>(k, v);
       }},
      {"ipot_inner_iters", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.ipot.inner_iters = parse_number<int>(k, v);
       }},
      {"ipot_marginal_tol", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.ipot.marginal_tol = parse_number<double>(k, v);
       }},
      {"seed", set_size(&TrainConfig::seed)},
      {"eval_every_epochs", set_size(&TrainConfig::eval_every_epochs)},
      {"checkpoint_every_steps", set_size(&TrainConfig::checkpoint_every_steps)},
      {"data_num_classes", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.data.num_classes = parse_number<std::size_t>(k, v);
       }},
      {"data_dim_a", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.data.dim_a = parse_number<std::size_t>(k, v);
       }},
      {"data_dim_b", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.data.dim_b = parse_number<std::size_t>(k, v);
       }},
      {"data_latent_dim", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.data.latent_dim = parse_number<std::size_t>(k, v);
       }},
      {"data_jitter", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.data.jitter = parse_number<double>(k, v);
       }},
      {"data_noise_sigma", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.data.noise_sigma = parse_number<double>(k, v);
       }},
      {"data_samples_train", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.data.samples_train = parse_number<std::size_t>(k, v);
       }},
      {"data_samples_eval", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.data.samples_eval = parse_number<std::size_t>(k, v);
       }},
      {"data_seed", [](TrainConfig& c, std::string_view k, std::string_view v) {
         c.data.seed = parse_number<std::uint64_t>(k, v);
       }},
  };
  return table;
}

std::string json_scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw ConfigError("config: expected a scalar value, got " + v.dump());
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (d_c == 0 || codewords == 0 || queue_capacity == 0 || batch_size == 0 || epochs == 0 ||
      encoder_hidden == 0 || fusion_hidden == 0)
    fail("all counts must be positive");
  if (codewords < 2) fail("K must be >= 2");
  if (batch_size < 2) fail("batch_size must be >= 2 (hard negatives need another pair)");
  if (batch_size > queue_capacity) fail("batch_size must not exceed queue_capacity");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
  if (loss_weights.ica < 0.0 || loss_weights.code < 0.0 || loss_weights.itm < 0.0)
    fail("loss weights must be >= 0");
  if (!(base_lr > 0.0) || lr_min < 0.0 || lr_min > base_lr) fail("need 0 <= lr_min <= base_lr, base_lr > 0");
  if (!(gamma_init >= 1e-3 && gamma_init <= 1.0)) fail("gamma_init must lie in [1e-3, 1]");
  if (momentum < 0.0 || momentum >= 1.0) fail("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (temperature_lr_scale < 0.0) fail("temperature_lr_scale must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
      !(adam_eps > 0.0))
    fail("invalid AdamW hyperparameters");
  try {
    ipot.validate();
    data.validate();
  } catch (const DomainError& e) {
    fail(e.what());
  }
  if (data.dim_a < d_c || data.dim_b < d_c) fail("raw dimensions must be >= d_c");
  if (data.samples_train < batch_size) fail("samples_train must be >= batch_size");
}

std::size_t TrainConfig::steps_per_epoch() const { return data.samples_train / batch_size; }

void set_config_field(TrainConfig& cfg, std::string_view key, std::string_view value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("config: unknown key '" + std::string(key) + "'");
  it->second(cfg, key, trim(value));
}

nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"d_c", c.d_c},
      {"K", c.codewords},
      {"queue_capacity", c.queue_capacity},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"encoder_hidden", c.encoder_hidden},
      {"fusion_hidden", c.fusion_hidden},
      {"base_lr", c.base_lr},
      {"lr_min", c.lr_min},
      {"warmup_steps", c.warmup_steps},
      {"lr_schedule", c.lr_schedule == LrSchedule::cosine ? "cosine" : "constant"},
      {"optimizer", c.optimizer == OptimizerKind::sgd ? "sgd" : "adamw"},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"temperature_lr_scale", c.temperature_lr_scale},
      {"alpha", c.alpha},
      {"gamma_init", c.gamma_init},
      {"w_ica", c.loss_weights.ica},
      {"w_code", c.loss_weights.code},
      {"w_itm", c.loss_weights.itm},
      {"w_mlm", 0.0},
      {"pairing", std::string(codebook::to_string(c.pairing))},
      {"raw_teacher_targets", c.raw_teacher_targets},
      {"ipot_epsilon", c.ipot.epsilon},
      {"ipot_outer_iters", c.ipot.outer_iters},
      {"ipot_inner_iters", c.ipot.inner_iters},
      {"ipot_marginal_tol", c.ipot.marginal_tol},
      {"seed", c.seed},
      {"eval_every_epochs", c.eval_every_epochs},
      {"checkpoint_every_steps", c.checkpoint_every_steps},
      {"data_num_classes", c.data.num_classes},
      {"data_dim_a", c.data.dim_a},
      {"data_dim_b", c.data.dim_b},
      {"data_latent_dim", c.data.latent_dim},
      {"data_jitter", c.data.jitter},
      {"data_noise_sigma", c.data.noise_sigma},
      {"data_samples_train", c.data.samples_train},
      {"data_samples_eval", c.data.samples_eval},
      {"data_seed", c.data.seed},
  };
}

TrainConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: JSON document must be an object");
  TrainConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (it->is_object()) {
      std::string prefix;
      if (key == "ipot") prefix = "ipot_";
      else if (key == "data") prefix = "data_";
      else if (key == "loss_weights") prefix = "w_";
      else throw ConfigError("config: unknown section '" + key + "'");
      for (auto inner = it->begin(); inner != it->end(); ++inner)
        set_config_field(cfg, prefix + inner.key(), json_scalar_text(*inner));
    } else {
      set_config_field(cfg, key, json_scalar_text(*it));
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig parse_config(std::string_view text) {
  const std::string_view body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return config_from_json(j);
  }

  TrainConfig cfg;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string_view l = line;
    if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = trim(l);
    if (l.empty()) continue;
    const auto eq = l.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
    set_config_field(cfg, trim(l.substr(0, eq)), trim(l.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

}  // namespace protoalign
