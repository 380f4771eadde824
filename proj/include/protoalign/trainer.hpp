#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "protoalign/model.hpp"
#include "protoalign/synthdata.hpp"

namespace protoalign {

struct RecallMetrics {
  double a2b_r1 = 0, a2b_r5 = 0, a2b_r10 = 0;  // image -> text
  double b2a_r1 = 0, b2a_r5 = 0, b2a_r10 = 0;  // text -> image
};

struct MetricsRecord {
  std::string kind = "train";  // "train" or "eval"
  std::uint64_t step = 0;
  double l_t2i = 0, l_i2t = 0, l_i2i = 0, l_t2t = 0, l_ica = 0;
  double l_ot_image = 0, l_ot_text = 0, l_t2p = 0, l_i2p = 0, l_code = 0;
  double l_itm = 0;
  double total = 0;  // w_ica*l_ica + w_code*l_code + w_itm*l_itm
  double usage_entropy = 0;
  double lr = 0;
  double gamma = 0;
  std::optional<RecallMetrics> recall;
};

nlohmann::json to_json(const MetricsRecord& m);

// Linear warm-up from lr_min to base_lr over warmup_steps, then constant or a
// cosine decay that reaches lr_min at the last step (total_steps - 1).
double lr_at(std::uint64_t step, const TrainConfig& cfg);

// Shuffled order of the training rows for one epoch; a pure function of
// (seed, epoch, n).
std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::uint64_t epoch, std::size_t n);
// Row indices of the batch consumed at `step`.
std::vector<std::size_t> batch_indices(const TrainConfig& cfg, std::uint64_t step);

// Extra observables of a step, used by tests.
struct StepTrace {
  fusion::ItmBatch negatives;
  bool alignment_active = false;  // false while both queues are still empty
};

// One optimization step on (view_a, view_b) rows in the fixed order: teacher
// forward, student forward, codebook loss, alignment loss, ITM loss, enqueue,
// backward, optimizer step, EMA, prototype renormalization. Throws
// NumericalError naming the first non-finite loss term.
MetricsRecord train_step(ModelState& state, const Matrix& view_a, const Matrix& view_b,
                         StepTrace* trace = nullptr);

// Shannon entropy (nats) of the argmax-prototype histogram of feature rows.
double usage_entropy(const std::vector<std::size_t>& counts);
std::vector<std::size_t> prototype_usage(const Matrix& features, const Matrix& prototypes);

struct EmbeddingPair {
  Matrix image;
  Matrix text;
};
EmbeddingPair embed(const ModelState& state, const synth::PairedDataset& data);

// Frozen-weight retrieval evaluation with student encoders.
MetricsRecord evaluate(const ModelState& state, const synth::PairedDataset& eval_data);

struct RunOptions {
  std::filesystem::path out_dir;
  // Stop (after checkpointing) once this many total steps have run.
  std::optional<std::uint64_t> stop_after_step;
  std::function<void(const MetricsRecord&)> on_record;
};

// Runs from state.step to the configured total, appending one JSON line per
// record to out_dir/metrics.jsonl and writing out_dir/checkpoint.bin.
// Returns the last record written.
MetricsRecord run_training(ModelState& state, const synth::PairedDataset& data, const RunOptions& opts);

}  // namespace protoalign
