#include "protoalign/cli.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "protoalign/error.hpp"
#include "protoalign/synthdata.hpp"
#include "protoalign/trainer.hpp"

namespace protoalign::cli {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

double parse_cell(const std::string& s, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  const auto rest = s.find_first_not_of(" \t\r", used);
  if (used == 0 || rest != std::string::npos)
    throw FormatError("cost CSV line " + std::to_string(line) + ": '" + s + "' is not a number");
  return v;
}

synth::PairedDataset load_or_generate(const std::string& data_path, const TrainConfig& cfg) {
  if (data_path.empty()) return synth::generate(cfg.data);
  synth::PairedDataset ds = synth::load_dataset(data_path);
  if (ds.view_a.cols() != cfg.data.dim_a || ds.view_b.cols() != cfg.data.dim_b)
    throw ConfigError("dataset '" + data_path + "' dimensions do not match the config");
  return ds;
}

int cmd_gen_data(const std::string& out_path, const std::string& config_path, synth::SynthConfig cfg,
                 std::ostream& out) {
  if (!config_path.empty()) cfg = load_config(config_path).data;
  cfg.validate();
  const synth::PairedDataset ds = synth::generate(cfg);
  synth::save_dataset(ds, out_path);
  nlohmann::json side = cfg;
  std::ofstream(out_path + ".json") << side.dump(2) << '\n';
  out << nlohmann::json{{"dataset", out_path}, {"rows", ds.size()}, {"train", ds.num_train}}.dump() << '\n';
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, const std::string& data_path,
              const std::string& resume, long long stop_after, std::ostream& out, std::ostream& err) {
  ModelState state = resume.empty() ? ModelState::initialize(load_config(config_path)) : load_checkpoint(resume);
  if (!resume.empty() && !config_path.empty()) {
    const TrainConfig requested = load_config(config_path);
    if (to_json(requested) != to_json(state.config))
      throw ConfigError("--config differs from the configuration stored in the checkpoint");
  }
  const synth::PairedDataset data = load_or_generate(data_path, state.config);
  RunOptions opts;
  opts.out_dir = out_dir;
  if (stop_after >= 0) opts.stop_after_step = static_cast<std::uint64_t>(stop_after);
  try {
    const MetricsRecord last = run_training(state, data, opts);
    out << to_json(last).dump() << '\n';
  } catch (const NumericalError& e) {
    std::ofstream(std::filesystem::path(out_dir) / "abort.json")
        << nlohmann::json{{"error", e.what()}, {"step", state.step}}.dump(2) << '\n';
    err << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path, std::ostream& out) {
  const ModelState state = load_checkpoint(ckpt);
  const synth::PairedDataset data = load_or_generate(data_path, state.config);
  out << to_json(evaluate(state, data.eval_split())).dump() << '\n';
  return kExitOk;
}

int cmd_ot_solve(const std::string& cost_path, const std::string& out_dir, const ot::IpotConfig& cfg,
                 std::ostream& out) {
  const ot::CostMatrix cost(read_cost_csv(cost_path));
  const ot::TransportPlan plan = ot::ipot(cost, cfg);
  std::filesystem::create_directories(out_dir);
  write_plan_csv(plan.values, std::filesystem::path(out_dir) / "plan.csv");
  const nlohmann::json diag{{"objective", ot::ot_objective(plan, cost)},
                            {"row_residual", plan.row_residual()},
                            {"col_residual", plan.col_residual()},
                            {"iters", plan.iterations}};
  std::ofstream(std::filesystem::path(out_dir) / "diagnostics.json") << diag.dump(2) << '\n';
  out << diag.dump() << '\n';
  return kExitOk;
}

int cmd_codebook_stats(const std::string& ckpt, const std::string& data_path, std::ostream& out) {
  const ModelState state = load_checkpoint(ckpt);
  const synth::PairedDataset data = load_or_generate(data_path, state.config);
  const EmbeddingPair e = embed(state, data.eval_split());
  const Matrix& protos = state.codebook.prototypes().value();
  auto counts = prototype_usage(e.image, protos);
  const auto txt = prototype_usage(e.text, protos);
  for (std::size_t j = 0; j < counts.size(); ++j) counts[j] += txt[j];
  std::size_t used = 0;
  for (auto c : counts) used += c > 0;
  out << nlohmann::json{{"K", counts.size()},
                        {"counts", counts},
                        {"used_prototypes", used},
                        {"usage_entropy", usage_entropy(counts)},
                        {"max_entropy", std::log(static_cast<double>(counts.size()))}}
             .dump()
      << '\n';
  return kExitOk;
}

}  // namespace

Matrix read_cost_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open cost CSV '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw FormatError("cost CSV is empty");

  std::optional<std::pair<std::size_t, std::size_t>> shape;
  const auto header = split_csv_line(line);
  if (header.size() == 2) {
    try {
      std::size_t a = 0, b = 0;
      const long long n = std::stoll(header[0], &a);
      const long long k = std::stoll(header[1], &b);
      if (n > 0 && k > 0) shape = {static_cast<std::size_t>(n), static_cast<std::size_t>(k)};
    } catch (const std::exception&) {
    }
  }

  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> r;
    for (const auto& c : split_csv_line(line)) r.push_back(parse_cell(c, lineno));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw FormatError("cost CSV has no data rows");
  const std::size_t n = rows.size();
  const std::size_t k = rows.front().size();
  if (shape && (shape->first != n || shape->second != k))
    throw FormatError("cost CSV header declares " + std::to_string(shape->first) + "x" +
                      std::to_string(shape->second) + " but the body is " + std::to_string(n) + "x" +
                      std::to_string(k));
  Matrix m(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != k) throw FormatError("cost CSV row " + std::to_string(i) + " has the wrong width");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

void write_plan_csv(const Matrix& plan, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write '" + path.string() + "'");
  os << plan.rows() << ',' << plan.cols() << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    for (std::size_t j = 0; j < plan.cols(); ++j) os << (j ? "," : "") << plan(i, j);
    os << '\n';
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Codebook-based multimodal alignment toolkit"};
  app.require_subcommand(1);

  std::string out_path, config_path, data_path, ckpt_path, resume_path, cost_path;
  long long stop_after = -1;
  synth::SynthConfig synth_cfg;
  ot::IpotConfig ipot_cfg;
  ipot_cfg.outer_iters = 200;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired dataset (CDAL file + JSON sidecar)");
  gen->add_option("--out", out_path, "Output dataset file")->required();
  gen->add_option("--config", config_path, "Training config whose data_* keys are used");
  gen->add_option("--classes", synth_cfg.num_classes);
  gen->add_option("--dim-a", synth_cfg.dim_a);
  gen->add_option("--dim-b", synth_cfg.dim_b);
  gen->add_option("--latent-dim", synth_cfg.latent_dim);
  gen->add_option("--jitter", synth_cfg.jitter);
  gen->add_option("--sigma", synth_cfg.noise_sigma);
  gen->add_option("--train", synth_cfg.samples_train);
  gen->add_option("--eval", synth_cfg.samples_eval);
  gen->add_option("--seed", synth_cfg.seed);

  auto* train = app.add_subcommand("train", "Train from a config file");
  train->add_option("--config", config_path, "key=value or JSON config");
  train->add_option("--out", out_path, "Output directory")->required();
  train->add_option("--data", data_path, "Dataset file (default: generate from config)");
  train->add_option("--resume", resume_path, "Checkpoint to resume from");
  train->add_option("--stop-after-step", stop_after, "Checkpoint and stop after this many steps");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out pairs");
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--data", data_path, "Dataset file (default: regenerate from the checkpoint config)");

  auto* solve = app.add_subcommand("ot-solve", "Solve a transport problem from a cost CSV");
  solve->add_option("--cost", cost_path)->required();
  solve->add_option("--out", out_path, "Output directory")->required();
  solve->add_option("--epsilon", ipot_cfg.epsilon);
  solve->add_option("--outer", ipot_cfg.outer_iters);
  solve->add_option("--inner", ipot_cfg.inner_iters);

  auto* stats = app.add_subcommand("codebook-stats", "Prototype usage counts and entropy");
  stats->add_option("--ckpt", ckpt_path)->required();
  stats->add_option("--data", data_path, "Dataset file (default: regenerate from the checkpoint config)");

  std::vector<std::string> argv_storage{"protoalign"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(out_path, config_path, synth_cfg, out);
    if (*train) {
      if (config_path.empty() && resume_path.empty()) throw ConfigError("train: --config or --resume is required");
      return cmd_train(config_path, out_path, data_path, resume_path, stop_after, out, err);
    }
    if (*eval) return cmd_eval(ckpt_path, data_path, out);
    if (*solve) return cmd_ot_solve(cost_path, out_path, ipot_cfg, out);
    if (*stats) return cmd_codebook_stats(ckpt_path, data_path, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace protoalign::cli
