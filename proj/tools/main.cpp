// ta3n command line: synthetic data generation, adversarial training,
// evaluation, grid search, and feature dumping. Every command is
// deterministic given its flags, files, and seed.

#include "ta3n/checkpoint.hpp"
#include "ta3n/eval.hpp"
#include "ta3n/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>

using json = nlohmann::ordered_json;
using namespace ta3n;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitDataError = 3;
constexpr int kExitNumericalAbort = 4;

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return j;
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Everything a training run depends on, resolved from defaults, then the
// config file, then flag overrides, in that order.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  json to_json() const {
    json j;
    j["seed"] = train.seed;
    j["k_frames"] = model.num_frames;
    j["feature_dim"] = model.feature_dim;
    j["max_subsets_per_scale"] = model.max_subsets_per_scale;
    j["variant"] = to_string(model.variant);
    j["attention"] = to_string(model.attention);
    j["epochs"] = train.epochs;
    j["lr0"] = train.lr0;
    j["momentum"] = train.momentum;
    j["weight_decay"] = train.weight_decay;
    j["source_batch"] = train.source_batch;
    j["lr_alpha"] = train.lr_alpha;
    j["lr_beta"] = train.lr_beta;
    j["grl_ramp"] = train.grl_ramp;
    j["lambda_s"] = train.weights.lambda_s;
    j["lambda_r"] = train.weights.lambda_r;
    j["lambda_t"] = train.weights.lambda_t;
    j["gamma"] = train.weights.gamma;
    return j;
  }

  void apply_json(const json& j) {
    try {
      if (j.contains("seed")) train.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("k_frames")) model.num_frames = j.at("k_frames").get<int>();
      if (j.contains("feature_dim"))
        model.feature_dim = j.at("feature_dim").get<int>();
      if (j.contains("max_subsets_per_scale"))
        model.max_subsets_per_scale = j.at("max_subsets_per_scale").get<int>();
      if (j.contains("variant"))
        model.variant = variant_from_string(j.at("variant").get<std::string>());
      if (j.contains("attention"))
        model.attention =
            attention_from_string(j.at("attention").get<std::string>());
      if (j.contains("epochs")) train.epochs = j.at("epochs").get<int>();
      if (j.contains("lr0")) train.lr0 = j.at("lr0").get<double>();
      if (j.contains("momentum")) train.momentum = j.at("momentum").get<double>();
      if (j.contains("weight_decay"))
        train.weight_decay = j.at("weight_decay").get<double>();
      if (j.contains("source_batch"))
        train.source_batch = j.at("source_batch").get<int>();
      if (j.contains("lr_alpha")) train.lr_alpha = j.at("lr_alpha").get<double>();
      if (j.contains("lr_beta")) train.lr_beta = j.at("lr_beta").get<double>();
      if (j.contains("grl_ramp")) train.grl_ramp = j.at("grl_ramp").get<double>();
      if (j.contains("lambda_s"))
        train.weights.lambda_s = j.at("lambda_s").get<double>();
      if (j.contains("lambda_r"))
        train.weights.lambda_r = j.at("lambda_r").get<double>();
      if (j.contains("lambda_t"))
        train.weights.lambda_t = j.at("lambda_t").get<double>();
      if (j.contains("gamma")) train.weights.gamma = j.at("gamma").get<double>();
    } catch (const json::exception& e) {
      throw std::invalid_argument(std::string("config: ") + e.what());
    }
  }
};

struct LoadedData {
  DomainDataset source_train, source_val, target_train, target_val;
};

LoadedData load_data_dir(const std::filesystem::path& dir) {
  LoadedData d;
  d.source_train = load_feature_file(dir / "source_train.feat");
  d.source_val = load_feature_file(dir / "source_val.feat");
  d.target_train = load_feature_file(dir / "target_train.feat");
  d.target_val = load_feature_file(dir / "target_val.feat");
  const int dim = d.source_train.feature_dim;
  for (const DomainDataset* ds : {&d.source_val, &d.target_train, &d.target_val})
    if (ds->feature_dim != dim)
      throw std::runtime_error(dir.string() +
                               ": feature dimensions differ across splits");
  return d;
}

json metrics_line(const EpochMetrics& m) {
  json j;
  j["epoch"] = m.epoch;
  j["lr"] = m.lr;
  j["grl_lambda"] = m.grl_lambda;
  j["loss_pred"] = m.loss_pred;
  j["loss_spatial"] = m.loss_spatial;
  j["loss_temporal"] = m.loss_temporal;
  j["loss_relation"] = m.loss_relation;
  j["loss_attentive_entropy"] = m.loss_attentive_entropy;
  j["loss_total"] = m.loss_total;
  j["source_val_accuracy"] = m.source_val_accuracy;
  j["target_val_accuracy"] = m.target_val_accuracy;
  return j;
}

json report_json(const MetricsReport& r) {
  json j;
  j["source_accuracy"] = r.source_accuracy;
  j["target_accuracy"] = r.target_accuracy;
  if (r.gain) j["gain"] = *r.gain;
  j["domain_loss"] = r.domain_loss;
  j["mmd"] = r.mmd;
  j["mmd_bandwidth"] = r.mmd_bandwidth;
  json stats = json::array();
  for (const AttentionScaleStats& s : r.attention_stats) {
    json js;
    js["scale"] = s.scale;
    js["mean"] = s.mean;
    js["min"] = s.min;
    js["max"] = s.max;
    stats.push_back(std::move(js));
  }
  j["attention_stats"] = std::move(stats);
  return j;
}

json spec_json(const SyntheticShiftSpec& s) {
  json j;
  j["num_classes"] = s.num_classes;
  j["feature_dim"] = s.feature_dim;
  j["frames_per_video"] = s.frames_per_video;
  j["latent_dim"] = s.latent_dim;
  j["train_per_class"] = s.train_per_class;
  j["val_per_class"] = s.val_per_class;
  j["frame_noise_sigma"] = s.frame_noise_sigma;
  j["target_transform_strength"] = s.target_transform_strength;
  j["target_noise_sigma"] = s.target_noise_sigma;
  j["temporal_jitter"] = s.temporal_jitter;
  j["seed"] = s.seed;
  return j;
}

SyntheticShiftSpec spec_from_json(const json& j) {
  SyntheticShiftSpec s;
  try {
    if (j.contains("num_classes")) s.num_classes = j.at("num_classes").get<int>();
    if (j.contains("feature_dim")) s.feature_dim = j.at("feature_dim").get<int>();
    if (j.contains("frames_per_video"))
      s.frames_per_video = j.at("frames_per_video").get<int>();
    if (j.contains("latent_dim")) s.latent_dim = j.at("latent_dim").get<int>();
    if (j.contains("train_per_class"))
      s.train_per_class = j.at("train_per_class").get<int>();
    if (j.contains("val_per_class"))
      s.val_per_class = j.at("val_per_class").get<int>();
    if (j.contains("frame_noise_sigma"))
      s.frame_noise_sigma = j.at("frame_noise_sigma").get<double>();
    if (j.contains("target_transform_strength"))
      s.target_transform_strength = j.at("target_transform_strength").get<double>();
    if (j.contains("target_noise_sigma"))
      s.target_noise_sigma = j.at("target_noise_sigma").get<double>();
    if (j.contains("temporal_jitter"))
      s.temporal_jitter = j.at("temporal_jitter").get<int>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("spec: ") + e.what());
  }
  return s;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed) {
  SyntheticShiftSpec spec;
  if (!spec_path.empty()) spec = spec_from_json(read_json_file(spec_path));
  if (seed) spec.seed = *seed;
  SyntheticData data = generate_synthetic(spec);

  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  write_json_file(spec_json(spec), dir / "spec.json");
  save_feature_file(data.source_train, dir / "source_train.feat");
  save_feature_file(data.source_val, dir / "source_val.feat");
  save_feature_file(data.target_train, dir / "target_train.feat");
  save_feature_file(data.target_val, dir / "target_val.feat");
  std::cout << "wrote " << data.source_train.records.size() + data.source_val.records.size() +
                   data.target_train.records.size() + data.target_val.records.size()
            << " videos to " << dir.string() << "\n";
  return 0;
}

// Resolves the run config, writes the snapshot before the first step, trains,
// then writes the per-epoch metric log, final checkpoint, and report.
int run_training(RunConfig cfg, const std::string& data_dir,
                 const std::string& out_dir) {
  LoadedData data = load_data_dir(data_dir);
  cfg.model.input_dim = data.source_train.feature_dim;
  cfg.model.num_classes = data.source_train.num_classes();
  cfg.train.validate();

  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  write_json_file(cfg.to_json(), dir / "config.json");

  Ta3nModel model(cfg.model);
  TrainResult result = train(cfg.train, model, data.source_train,
                             data.target_train, data.source_val, data.target_val);

  {
    std::ofstream log(dir / "metrics.jsonl");
    if (!log) throw std::runtime_error("cannot open " + (dir / "metrics.jsonl").string());
    for (const EpochMetrics& m : result.epochs) log << metrics_line(m).dump() << '\n';
  }
  save_checkpoint(model, dir / "model.ckpt");
  write_json_file(report_json(evaluate(model, data.source_val, data.target_val)),
                  dir / "report.json");

  const EpochMetrics& last = result.epochs.back();
  std::cout << "trained " << cfg.train.epochs << " epochs; final target-val accuracy "
            << last.target_val_accuracy << "; run directory " << dir.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out_path, std::optional<double> reference) {
  std::unique_ptr<Ta3nModel> model = load_checkpoint(ckpt_path);
  DomainDataset source_val = load_feature_file(std::filesystem::path(data_dir) / "source_val.feat");
  DomainDataset target_val = load_feature_file(std::filesystem::path(data_dir) / "target_val.feat");
  if (source_val.feature_dim != model->config().input_dim)
    throw std::runtime_error("eval: dataset feature dim " +
                             std::to_string(source_val.feature_dim) +
                             " does not match checkpoint input dim " +
                             std::to_string(model->config().input_dim));
  const json report = report_json(evaluate(*model, source_val, target_val, reference));
  std::cout << report.dump(2) << "\n";
  if (!out_path.empty()) write_json_file(report, out_path);
  return 0;
}

int cmd_grid(RunConfig cfg, const std::string& data_dir, const std::string& out_dir,
             const std::string& stage_name, int jobs) {
  GridStage stage;
  if (stage_name == "coarse") stage = GridStage::Coarse;
  else if (stage_name == "fine") stage = GridStage::Fine;
  else throw std::invalid_argument("grid: stage must be coarse or fine");

  LoadedData data = load_data_dir(data_dir);
  cfg.model.input_dim = data.source_train.feature_dim;
  cfg.model.num_classes = data.source_train.num_classes();
  cfg.train.validate();

  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  write_json_file(cfg.to_json(), dir / "config.json");

  GridResult result = grid_search(cfg.train, cfg.model, stage, data.source_train,
                                  data.target_train, data.source_val,
                                  data.target_val, jobs);
  json table;
  table["stage"] = stage_name;
  json entries = json::array();
  for (const GridEntry& e : result.entries) {
    json je;
    je["weight"] = e.weight_name;
    je["value"] = e.value;
    je["score"] = e.score;
    entries.push_back(std::move(je));
  }
  table["entries"] = std::move(entries);
  json best;
  best["lambda_s"] = result.best_weights.lambda_s;
  best["lambda_r"] = result.best_weights.lambda_r;
  best["lambda_t"] = result.best_weights.lambda_t;
  best["gamma"] = result.best_weights.gamma;
  best["score"] = result.best_score;
  table["best"] = std::move(best);
  write_json_file(table, dir / "grid.json");
  std::cout << table["best"].dump(2) << "\n";
  return 0;
}

int cmd_dump_features(const std::string& ckpt_path, const std::string& input,
                      const std::string& out_path) {
  std::unique_ptr<Ta3nModel> model = load_checkpoint(ckpt_path);
  DomainDataset ds = load_feature_file(input);
  if (ds.feature_dim != model->config().input_dim)
    throw std::runtime_error("dump-features: dataset feature dim " +
                             std::to_string(ds.feature_dim) +
                             " does not match checkpoint input dim " +
                             std::to_string(model->config().input_dim));
  dump_features(*model, ds, out_path);
  std::cout << "wrote " << ds.records.size() << " video features to " << out_path << "\n";
  return 0;
}

// Shared train/grid flags; remembers which were passed so they override the
// config file.
struct TrainFlags {
  std::string config_file, data_dir, out_dir;
  std::uint64_t seed = 0;
  int k_frames = 5;
  int feature_dim = 16;
  int epochs = 20;
  int source_batch = 32;
  double lr0 = 0.03;
  std::string variant, attention;
  double lambda_s = 0.0, lambda_r = 0.0, lambda_t = 0.0, gamma = 0.0;

  CLI::Option *seed_opt, *k_opt, *dim_opt, *epochs_opt, *batch_opt, *lr_opt,
      *ls_opt, *lr_w_opt, *lt_opt, *g_opt;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_file, "JSON config file");
    app->add_option("--data", data_dir, "directory produced by gen-data")->required();
    app->add_option("--out", out_dir, "run directory")->required();
    seed_opt = app->add_option("--seed", seed, "training seed");
    k_opt = app->add_option("--k-frames", k_frames, "frames sampled per video (K)");
    dim_opt = app->add_option("--feature-dim", feature_dim, "shared feature width (F)");
    epochs_opt = app->add_option("--epochs", epochs, "training epochs");
    batch_opt = app->add_option("--batch", source_batch, "source batch size");
    lr_opt = app->add_option("--lr", lr0, "initial learning rate");
    app->add_option("--variant", variant, "tempooling or temrelation")
        ->check(CLI::IsMember({"tempooling", "temrelation"}));
    app->add_option("--attention", attention, "none, general, or domain")
        ->check(CLI::IsMember({"none", "general", "domain"}));
    ls_opt = app->add_option("--lambda-s", lambda_s, "spatial discriminator weight");
    lr_w_opt = app->add_option("--lambda-r", lambda_r, "relation discriminator weight");
    lt_opt = app->add_option("--lambda-t", lambda_t, "temporal discriminator weight");
    g_opt = app->add_option("--gamma", gamma, "attentive entropy weight");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty()) cfg.apply_json(read_json_file(config_file));
    if (seed_opt->count()) cfg.train.seed = seed;
    if (k_opt->count()) cfg.model.num_frames = k_frames;
    if (dim_opt->count()) cfg.model.feature_dim = feature_dim;
    if (epochs_opt->count()) cfg.train.epochs = epochs;
    if (batch_opt->count()) cfg.train.source_batch = source_batch;
    if (lr_opt->count()) cfg.train.lr0 = lr0;
    if (!variant.empty()) cfg.model.variant = variant_from_string(variant);
    if (!attention.empty()) cfg.model.attention = attention_from_string(attention);
    if (ls_opt->count()) cfg.train.weights.lambda_s = lambda_s;
    if (lr_w_opt->count()) cfg.train.weights.lambda_r = lambda_r;
    if (lt_opt->count()) cfg.train.weights.lambda_t = lambda_t;
    if (g_opt->count()) cfg.train.weights.gamma = gamma;
    cfg.model.seed = cfg.train.seed;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TA3N video domain adaptation on frame features"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic cross-domain dataset");
  std::string gen_spec, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--spec", gen_spec, "JSON generator spec");
  gen->add_option("--out", gen_out, "output directory")->required();
  CLI::Option* gen_seed_opt = gen->add_option("--seed", gen_seed, "generator seed");

  auto* tr = app.add_subcommand("train", "train a model and write a run directory");
  TrainFlags train_flags;
  train_flags.add_to(tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_out;
  double ev_ref = 0.0;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "directory with source_val.feat and target_val.feat")
      ->required();
  ev->add_option("--out", ev_out, "report output file");
  CLI::Option* ev_ref_opt = ev->add_option(
      "--reference", ev_ref, "source-only target accuracy used for the gain field");

  auto* gr = app.add_subcommand("grid", "coordinatewise loss-weight sweep");
  TrainFlags grid_flags;
  grid_flags.add_to(gr);
  std::string gr_stage = "coarse";
  int gr_jobs = 1;
  gr->add_option("--stage", gr_stage, "coarse or fine")
      ->check(CLI::IsMember({"coarse", "fine"}));
  gr->add_option("--jobs", gr_jobs, "parallel candidate runs")
      ->check(CLI::PositiveNumber);

  auto* dump = app.add_subcommand("dump-features", "write final video features");
  std::string du_ckpt, du_in, du_out;
  dump->add_option("--checkpoint", du_ckpt, "model checkpoint")->required();
  dump->add_option("--input", du_in, "frame feature file")->required();
  dump->add_option("--out", du_out, "output feature file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfigError;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_spec, gen_out,
                          gen_seed_opt->count()
                              ? std::optional<std::uint64_t>(gen_seed)
                              : std::nullopt);
    if (tr->parsed())
      return run_training(train_flags.resolve(), train_flags.data_dir,
                          train_flags.out_dir);
    if (ev->parsed())
      return cmd_eval(ev_ckpt, ev_data, ev_out,
                      ev_ref_opt->count() ? std::optional<double>(ev_ref)
                                          : std::nullopt);
    if (gr->parsed())
      return cmd_grid(grid_flags.resolve(), grid_flags.data_dir,
                      grid_flags.out_dir, gr_stage, gr_jobs);
    if (dump->parsed()) return cmd_dump_features(du_ckpt, du_in, du_out);
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumericalAbort;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDataError;
  }
  return 0;
}
