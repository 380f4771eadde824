#include "protoalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "protoalign/error.hpp"

namespace protoalign {

namespace {

constexpr std::uint64_t kPermutationStream = 5;
constexpr std::uint64_t kStepStream = 6;

nlohmann::json recall_json(const RecallMetrics& r) {
  return {{"i2t_r1", r.a2b_r1}, {"i2t_r5", r.a2b_r5}, {"i2t_r10", r.a2b_r10},
          {"t2i_r1", r.b2a_r1}, {"t2i_r5", r.b2a_r5}, {"t2i_r10", r.b2a_r10}};
}

void require_finite(const char* name, double v, const MetricsRecord& partial) {
  if (std::isfinite(v)) return;
  std::ostringstream os;
  os << "non-finite loss term '" << name << "' (" << v << ") at step " << partial.step
     << "; state: " << to_json(partial).dump();
  throw NumericalError(os.str());
}

}  // namespace

nlohmann::json to_json(const MetricsRecord& m) {
  nlohmann::json j{{"kind", m.kind},
                   {"step", m.step},
                   {"l_t2i", m.l_t2i},
                   {"l_i2t", m.l_i2t},
                   {"l_i2i", m.l_i2i},
                   {"l_t2t", m.l_t2t},
                   {"l_ica", m.l_ica},
                   {"l_ot_image", m.l_ot_image},
                   {"l_ot_text", m.l_ot_text},
                   {"l_t2p", m.l_t2p},
                   {"l_i2p", m.l_i2p},
                   {"l_code", m.l_code},
                   {"l_itm", m.l_itm},
                   {"total", m.total},
                   {"usage_entropy", m.usage_entropy},
                   {"lr", m.lr},
                   {"gamma", m.gamma}};
  if (m.recall) j["recall"] = recall_json(*m.recall);
  return j;
}

double lr_at(std::uint64_t step, const TrainConfig& cfg) {
  const double s = static_cast<double>(step);
  const double warm = static_cast<double>(cfg.warmup_steps);
  if (step < cfg.warmup_steps) return cfg.lr_min + (cfg.base_lr - cfg.lr_min) * s / warm;
  if (cfg.lr_schedule == LrSchedule::constant) return cfg.base_lr;
  const double last = static_cast<double>(cfg.total_steps() == 0 ? 0 : cfg.total_steps() - 1);
  if (last <= warm) return cfg.base_lr;
  const double progress = std::min(1.0, (s - warm) / (last - warm));
  return cfg.lr_min + 0.5 * (cfg.base_lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(derive_seed(seed, kPermutationStream), epoch));
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

std::vector<std::size_t> batch_indices(const TrainConfig& cfg, std::uint64_t step) {
  const std::size_t spe = cfg.steps_per_epoch();
  const auto perm = epoch_permutation(cfg.seed, step / spe, cfg.data.samples_train);
  const std::size_t begin = (step % spe) * cfg.batch_size;
  return {perm.begin() + static_cast<std::ptrdiff_t>(begin),
          perm.begin() + static_cast<std::ptrdiff_t>(begin + cfg.batch_size)};
}

std::vector<std::size_t> prototype_usage(const Matrix& features, const Matrix& prototypes) {
  const Matrix logits = matmul(features, prototypes);
  std::vector<std::size_t> counts(prototypes.cols(), 0);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    counts[static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin())]++;
  }
  return counts;
}

double usage_entropy(const std::vector<std::size_t>& counts) {
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h;
}

static double batch_usage_entropy(const Matrix& img, const Matrix& txt, const Matrix& prototypes) {
  auto counts = prototype_usage(img, prototypes);
  const auto more = prototype_usage(txt, prototypes);
  for (std::size_t j = 0; j < counts.size(); ++j) counts[j] += more[j];
  return usage_entropy(counts);
}

MetricsRecord train_step(ModelState& state, const Matrix& view_a, const Matrix& view_b, StepTrace* trace) {
  const TrainConfig& cfg = state.config;
  if (view_a.rows() != view_b.rows() || view_a.rows() < 2)
    throw ShapeError("train_step: need at least two aligned pairs");

  MetricsRecord rec;
  rec.step = state.step;
  rec.lr = lr_at(state.step, cfg);

  const ad::Tensor xa = ad::Tensor::constant(view_a);
  const ad::Tensor xb = ad::Tensor::constant(view_b);

  // Teacher forward: constants all the way down, no graph is recorded.
  const ad::Tensor img_t = distill::encode(state.image.teacher, xa);
  const ad::Tensor txt_t = distill::encode(state.text.teacher, xb);
  const ad::Tensor img_s = distill::encode(state.image.student, xa);
  const ad::Tensor txt_s = distill::encode(state.text.student, xb);
  const ad::Tensor gamma = state.effective_temperature();
  rec.gamma = gamma.item();

  const auto code = codebook::codebook_loss(img_s, txt_s, img_t, txt_t, state.codebook, gamma, cfg.ipot,
                                            cfg.pairing);

  const bool align_active = !state.queue_image.empty() && !state.queue_text.empty();
  distill::AlignmentLossReport ica;
  if (align_active) {
    ica = distill::ica_loss(img_s, txt_s, img_t, txt_t, state.queue_image, state.queue_text, gamma,
                            cfg.raw_teacher_targets);
  } else {
    const ad::Tensor zero = ad::Tensor::scalar_constant(0.0);
    ica = {zero, zero, zero, zero, zero};
  }

  std::mt19937_64 rng(derive_seed(derive_seed(cfg.seed, kStepStream), state.step));
  const Matrix sim = matmul_transposed_b(img_s.value(), txt_s.value());
  fusion::ItmBatch negatives = fusion::hard_negative_sample(sim, rec.gamma, rng);
  const ad::Tensor itm = fusion::itm_loss(state.head, img_s, txt_s, negatives);

  state.queue_image.enqueue(img_t.value());
  state.queue_text.enqueue(txt_t.value());

  const ad::Tensor terms[] = {ica.total, code.total, itm};
  const double weights[] = {cfg.loss_weights.ica, cfg.loss_weights.code, cfg.loss_weights.itm};
  const ad::Tensor total = ad::weighted_sum(terms, weights);

  rec.l_t2i = ica.l_t2i.item();
  rec.l_i2t = ica.l_i2t.item();
  rec.l_i2i = ica.l_i2i.item();
  rec.l_t2t = ica.l_t2t.item();
  rec.l_ica = ica.total.item();
  rec.l_ot_image = code.l_ot_image.item();
  rec.l_ot_text = code.l_ot_text.item();
  rec.l_t2p = code.l_t2p.item();
  rec.l_i2p = code.l_i2p.item();
  rec.l_code = code.total.item();
  rec.l_itm = itm.item();
  rec.total = total.item();
  rec.usage_entropy = batch_usage_entropy(img_s.value(), txt_s.value(), state.codebook.prototypes().value());

  require_finite("l_ica", rec.l_ica, rec);
  require_finite("l_code", rec.l_code, rec);
  require_finite("l_itm", rec.l_itm, rec);
  require_finite("total", rec.total, rec);

  const auto params = state.trainable();
  for (auto* p : params) p->zero_grad();
  ad::backward(total);
  for (auto* p : params)
    if (!p->grad().all_finite()) throw NumericalError("non-finite gradient at step " + std::to_string(rec.step));
  state.optimizer.step(params, rec.lr, cfg);

  distill::ema_update(state.image, cfg.alpha);
  distill::ema_update(state.text, cfg.alpha);
  state.codebook.renormalize();
  ++state.step;

  if (trace) {
    trace->negatives = std::move(negatives);
    trace->alignment_active = align_active;
  }
  return rec;
}

EmbeddingPair embed(const ModelState& state, const synth::PairedDataset& data) {
  return {distill::encode(state.image.student, ad::Tensor::constant(data.view_a)).value(),
          distill::encode(state.text.student, ad::Tensor::constant(data.view_b)).value()};
}

MetricsRecord evaluate(const ModelState& state, const synth::PairedDataset& eval_data) {
  const TrainConfig& cfg = state.config;
  if (eval_data.view_a.cols() != cfg.data.dim_a || eval_data.view_b.cols() != cfg.data.dim_b)
    throw ConfigError("evaluate: dataset dimensions (" + std::to_string(eval_data.view_a.cols()) + ", " +
                      std::to_string(eval_data.view_b.cols()) + ") do not match the checkpoint (" +
                      std::to_string(cfg.data.dim_a) + ", " + std::to_string(cfg.data.dim_b) + ")");
  if (eval_data.size() == 0) throw ConfigError("evaluate: empty dataset");
  const EmbeddingPair e = embed(state, eval_data);

  MetricsRecord rec;
  rec.kind = "eval";
  rec.step = state.step;
  rec.lr = lr_at(state.step, cfg);
  rec.gamma = state.gamma();
  rec.usage_entropy = batch_usage_entropy(e.image, e.text, state.codebook.prototypes().value());

  const std::size_t n = eval_data.size();
  RecallMetrics r;
  std::tie(r.a2b_r1, r.b2a_r1) = synth::recall_at_k(e.image, e.text, std::min<std::size_t>(1, n));
  std::tie(r.a2b_r5, r.b2a_r5) = synth::recall_at_k(e.image, e.text, std::min<std::size_t>(5, n));
  std::tie(r.a2b_r10, r.b2a_r10) = synth::recall_at_k(e.image, e.text, std::min<std::size_t>(10, n));
  rec.recall = r;
  return rec;
}

MetricsRecord run_training(ModelState& state, const synth::PairedDataset& data, const RunOptions& opts) {
  const TrainConfig& cfg = state.config;
  if (data.num_train != cfg.data.samples_train)
    throw ConfigError("run_training: dataset has " + std::to_string(data.num_train) +
                      " training rows, config expects " + std::to_string(cfg.data.samples_train));
  const synth::PairedDataset train = data.train_split();
  const synth::PairedDataset eval = data.eval_split();

  std::filesystem::create_directories(opts.out_dir);
  const auto metrics_path = opts.out_dir / "metrics.jsonl";
  const auto ckpt_path = opts.out_dir / "checkpoint.bin";
  std::ofstream metrics(metrics_path, state.step == 0 ? std::ios::trunc : std::ios::app);
  if (!metrics) throw ConfigError("cannot write '" + metrics_path.string() + "'");

  const std::uint64_t total = cfg.total_steps();
  const std::size_t spe = cfg.steps_per_epoch();
  MetricsRecord last;
  auto emit = [&](const MetricsRecord& r) {
    metrics << to_json(r).dump() << '\n';
    metrics.flush();
    if (opts.on_record) opts.on_record(r);
    last = r;
  };

  while (state.step < total) {
    const auto idx = batch_indices(cfg, state.step);
    const synth::PairedDataset batch = train.gather(idx);
    emit(train_step(state, batch.view_a, batch.view_b));

    const bool epoch_end = state.step % spe == 0;
    const bool eval_due = state.step == total ||
                          (epoch_end && cfg.eval_every_epochs > 0 && (state.step / spe) % cfg.eval_every_epochs == 0);
    if (eval_due) emit(evaluate(state, eval));

    if (cfg.checkpoint_every_steps > 0 && state.step % cfg.checkpoint_every_steps == 0)
      save_checkpoint(state, ckpt_path);
    if (opts.stop_after_step && state.step >= *opts.stop_after_step && state.step < total) {
      save_checkpoint(state, ckpt_path);
      return last;
    }
  }
  save_checkpoint(state, ckpt_path);
  return last;
}

}  // namespace protoalign
