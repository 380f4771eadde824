#include "protoalign/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "protoalign/binary_io.hpp"
#include "protoalign/error.hpp"

namespace protoalign {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Optimizer::Optimizer(OptimizerKind kind, std::size_t num_params)
    : kind_(kind), m_(num_params), v_(kind == OptimizerKind::adamw ? num_params : 0) {}

void Optimizer::step(const std::vector<ad::Tensor*>& params, double lr, const TrainConfig& cfg) {
  if (params.size() != m_.size()) throw StateError("Optimizer: parameter count changed between steps");
  ++steps_;
  const std::size_t last = params.size() - 1;  // temperature: no weight decay
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& w = params[p]->mutable_value();
    const Matrix& g = params[p]->grad();
    const double wd = p == last ? 0.0 : cfg.weight_decay;
    const double plr = p == last ? lr * cfg.temperature_lr_scale : lr;
    if (m_[p].empty()) m_[p] = Matrix::zeros_like(w);

    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g.data()[i] + wd * w.data()[i];
        double& mi = m_[p].data()[i];
        mi = cfg.momentum * mi + gi;
        w.data()[i] -= plr * mi;
      }
    } else {
      if (v_[p].empty()) v_[p] = Matrix::zeros_like(w);
      const double t = static_cast<double>(steps_);
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g.data()[i];
        double& mi = m_[p].data()[i];
        double& vi = v_[p].data()[i];
        mi = cfg.adam_beta1 * mi + (1.0 - cfg.adam_beta1) * gi;
        vi = cfg.adam_beta2 * vi + (1.0 - cfg.adam_beta2) * gi * gi;
        const double update = (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
        w.data()[i] -= plr * (update + wd * w.data()[i]);
      }
    }
  }
}

ModelState ModelState::initialize(const TrainConfig& cfg) {
  cfg.validate();
  ModelState s;
  s.config = cfg;
  s.image = distill::EncoderPair::from_student(
      Mlp(cfg.data.dim_a, cfg.encoder_hidden, cfg.d_c, derive_seed(cfg.seed, 1)));
  s.text = distill::EncoderPair::from_student(
      Mlp(cfg.data.dim_b, cfg.encoder_hidden, cfg.d_c, derive_seed(cfg.seed, 2)));
  s.codebook = codebook::Codebook::random(cfg.d_c, cfg.codewords, derive_seed(cfg.seed, 3));
  s.head = fusion::FusionHead(cfg.d_c, cfg.fusion_hidden, derive_seed(cfg.seed, 4));
  s.temperature = ad::Tensor::parameter(Matrix(1, 1, cfg.gamma_init));
  s.queue_image = distill::MemoryQueue(cfg.queue_capacity, cfg.d_c);
  s.queue_text = distill::MemoryQueue(cfg.queue_capacity, cfg.d_c);
  s.optimizer = Optimizer(cfg.optimizer, s.trainable().size());
  return s;
}

std::vector<ad::Tensor*> ModelState::trainable() {
  std::vector<ad::Tensor*> out;
  for (auto* p : image.student.parameters()) out.push_back(p);
  for (auto* p : text.student.parameters()) out.push_back(p);
  out.push_back(&codebook.prototypes());
  for (auto* p : head.net().parameters()) out.push_back(p);
  out.push_back(&temperature);
  return out;
}

ad::Tensor ModelState::effective_temperature() const {
  return ad::clamp(temperature, kMinTemperature, kMaxTemperature);
}

double ModelState::gamma() const {
  return std::clamp(temperature.item(), kMinTemperature, kMaxTemperature);
}

namespace {

void write_mlp(io::BinaryWriter& w, const std::string& name, const Mlp& net) {
  static const char* kParts[] = {"w1", "b1", "w2", "b2"};
  const auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    w.str(name + "." + kParts[k]);
    w.matrix(params[k]->value());
  }
}

Matrix read_named(io::BinaryReader& r, const std::string& expected) {
  const std::string name = r.str();
  if (name != expected)
    throw FormatError("checkpoint: expected record '" + expected + "', found '" + name + "'");
  return r.matrix();
}

Mlp read_mlp(io::BinaryReader& r, const std::string& name, const Mlp& shape_ref, bool learnable) {
  static const char* kParts[] = {"w1", "b1", "w2", "b2"};
  Mlp net = shape_ref.clone(learnable);
  const auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix m = read_named(r, name + "." + kParts[k]);
    if (!m.same_shape(params[k]->value()))
      throw FormatError("checkpoint: '" + name + "." + kParts[k] + "' shape does not match its config");
    params[k]->mutable_value() = std::move(m);
  }
  return net;
}

void write_queue(io::BinaryWriter& w, const std::string& name, const distill::MemoryQueue& q) {
  w.str(name);
  w.matrix(q.storage());
  w.u64(q.cursor());
  w.u64(q.filled());
}

distill::MemoryQueue read_queue(io::BinaryReader& r, const std::string& name, std::size_t capacity,
                                std::size_t dim) {
  Matrix storage = read_named(r, name);
  if (storage.rows() != capacity || storage.cols() != dim)
    throw FormatError("checkpoint: queue '" + name + "' shape does not match its config");
  const std::uint64_t cursor = r.u64();
  const std::uint64_t filled = r.u64();
  return distill::MemoryQueue::restore(std::move(storage), cursor, filled);
}

}  // namespace

void save_checkpoint(const ModelState& s, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + tmp.string() + "' for writing");
    io::BinaryWriter w(os);
    w.magic("CDCK");
    w.u32(kCheckpointFormatVersion);
    w.str(to_json(s.config).dump());
    w.u64(s.step);
    write_mlp(w, "image.student", s.image.student);
    write_mlp(w, "image.teacher", s.image.teacher);
    write_mlp(w, "text.student", s.text.student);
    write_mlp(w, "text.teacher", s.text.teacher);
    w.str("codebook");
    w.matrix(s.codebook.prototypes().value());
    write_mlp(w, "head", s.head.net());
    w.str("temperature");
    w.matrix(s.temperature.value());
    write_queue(w, "queue_image", s.queue_image);
    write_queue(w, "queue_text", s.queue_text);
    w.str("optimizer");
    w.u32(s.optimizer.kind() == OptimizerKind::sgd ? 0 : 1);
    w.u64(s.optimizer.steps_taken());
    w.u64(s.optimizer.first_moments().size());
    for (const auto& m : s.optimizer.first_moments()) w.matrix(m);
    w.u64(s.optimizer.second_moments().size());
    for (const auto& m : s.optimizer.second_moments()) w.matrix(m);
    if (!os) throw FormatError("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  io::BinaryReader r(is);
  r.expect_magic("CDCK", "checkpoint " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion)
    throw FormatError("checkpoint " + path.string() + ": format version " + std::to_string(version) +
                      " does not match supported version " + std::to_string(kCheckpointFormatVersion));

  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: corrupt config snapshot: ") + e.what());
  }
  ModelState s = ModelState::initialize(config_from_json(cfg_json));
  s.step = r.u64();
  s.image.student = read_mlp(r, "image.student", s.image.student, true);
  s.image.teacher = read_mlp(r, "image.teacher", s.image.teacher, false);
  s.text.student = read_mlp(r, "text.student", s.text.student, true);
  s.text.teacher = read_mlp(r, "text.teacher", s.text.teacher, false);
  Matrix protos = read_named(r, "codebook");
  if (protos.rows() != s.config.d_c || protos.cols() != s.config.codewords)
    throw FormatError("checkpoint: codebook shape does not match its config");
  s.codebook = codebook::Codebook(std::move(protos));
  s.head = fusion::FusionHead(read_mlp(r, "head", s.head.net(), true));
  Matrix temp = read_named(r, "temperature");
  if (temp.rows() != 1 || temp.cols() != 1) throw FormatError("checkpoint: temperature must be 1x1");
  s.temperature = ad::Tensor::parameter(std::move(temp));
  s.queue_image = read_queue(r, "queue_image", s.config.queue_capacity, s.config.d_c);
  s.queue_text = read_queue(r, "queue_text", s.config.queue_capacity, s.config.d_c);

  if (r.str() != "optimizer") throw FormatError("checkpoint: missing optimizer record");
  const std::uint32_t kind = r.u32();
  if ((kind == 0) != (s.config.optimizer == OptimizerKind::sgd))
    throw FormatError("checkpoint: optimizer kind does not match its config");
  s.optimizer.set_steps_taken(r.u64());
  const std::uint64_t nm = r.u64();
  if (nm != s.optimizer.first_moments().size()) throw FormatError("checkpoint: optimizer state size mismatch");
  for (auto& m : s.optimizer.first_moments()) m = r.matrix();
  const std::uint64_t nv = r.u64();
  if (nv != s.optimizer.second_moments().size()) throw FormatError("checkpoint: optimizer state size mismatch");
  for (auto& m : s.optimizer.second_moments()) m = r.matrix();
  return s;
}

}  // namespace protoalign
