// bsml: command-line front end.
//
//   bsml generate   --seed 3 --out data/
//   bsml meta-train --sampler cl --meta-batch 5 --out runs/meta
//   bsml fine-tune  --checkpoint runs/meta/checkpoint.json --out runs/ft
//   bsml evaluate   --checkpoint runs/ft/checkpoint.json
//   bsml sweep      --repetitions 10 --workers 4 --out runs/sweep
//   bsml curves     --log runs/meta/run_log.tsv --out runs/curves
//
// Options may also come from a config file (--config run.toml) with one
// [section] per subcommand; flags given on the command line win.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "bsml/checkpoint.hpp"
#include "bsml/errors.hpp"
#include "bsml/harness.hpp"
#include "bsml/run_log.hpp"
#include "bsml/text_io.hpp"

namespace fs = std::filesystem;
using namespace bsml;

namespace {

struct Options {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;
  std::string data_path;
  std::string checkpoint_path;
  std::string log_path;
  std::string out_dir;
  std::string sampler = "cl";
  std::string gradient_mode = "second";
  std::string activation = "relu";
  std::string target = "K5";
  std::string model = "meta";
  std::string split = "test";
  std::size_t repetitions = 10;
  std::size_t window = 100;
};

// Collects output files and writes manifest.json next to them.
class Manifest {
 public:
  Manifest(std::string command, const fs::path& dir) : command_(std::move(command)), dir_(dir) {}

  void input(const std::string& name, const std::string& hash) { inputs_[name] = hash; }
  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  void set_config(nlohmann::json config) { config_ = std::move(config); }

  std::string write(const std::string& name, const std::string& text) {
    const std::string hash = write_file(dir_ / name, text);
    outputs_[name] = hash;
    return hash;
  }

  void finish() const {
    const nlohmann::json doc = {{"tool", "bsml"},   {"command", command_}, {"config", config_},
                                {"seeds", seeds_},  {"inputs", inputs_},   {"outputs", outputs_}};
    write_file(dir_ / "manifest.json", doc.dump(2) + "\n");
  }

 private:
  std::string command_;
  fs::path dir_;
  nlohmann::json config_ = nlohmann::json::object();
  std::map<std::string, std::uint64_t> seeds_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path prepare_out(const Options& o) {
  if (o.out_dir.empty()) throw ConfigError("--out is required");
  fs::create_directories(o.out_dir);
  return o.out_dir;
}

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

// Resolves the string-valued options and the seed into the config sections.
void finalize(Options& o) {
  stage("config", [&] {
    auto& c = o.config;
    c.activation = parse_activation(o.activation);
    c.meta.sampler = parse_sampler_kind(o.sampler);
    c.meta.gradient_mode = parse_gradient_mode(o.gradient_mode);
    c.fine_tune.target = parse_task_id(o.target);
    c.meta.seed = o.seed;
    c.fine_tune.seed = o.seed;
    c.multitask.seed = o.seed;
    c.architecture();
    c.meta.validate();
    c.fine_tune.validate();
    return 0;
  });
}

// Loads --data if given, otherwise generates from the data seed.
SplitDataset load_data(const Options& o, Manifest& manifest) {
  return stage("generate", [&] {
    if (!o.data_path.empty()) {
      const std::string text = read_text(o.data_path);
      manifest.input("dataset", git_blob_hash(text));
      std::istringstream in(text);
      return read_dataset(in);
    }
    const std::uint64_t seed = o.data_seed.value_or(o.seed);
    manifest.seed("data_seed", seed);
    return generate_source(SourceConfig::defaults(seed, o.config.dimension), o.config.n_subjects,
                           o.config.samples_per_subject);
  });
}

TrainedModel load_model(const Options& o, Manifest& manifest) {
  return stage("load", [&] {
    const std::string text = read_text(o.checkpoint_path);
    manifest.input("checkpoint", git_blob_hash(text));
    std::istringstream in(text);
    return read_checkpoint(in);
  });
}

std::string checkpoint_text(const TrainedModel& m) {
  std::ostringstream s;
  write_checkpoint(s, m);
  return s.str();
}

void add_data_options(CLI::App* s, Options& o) {
  s->add_option("--data", o.data_path, "Dataset CSV written by 'generate' (default: generate in memory)");
  s->add_option("--data-seed,--data_seed", o.data_seed, "Seed for in-memory data (default: --seed)");
  s->add_option("--subjects,--n_subjects", o.config.n_subjects, "Number of synthetic subjects");
  s->add_option("--samples-per-subject,--samples_per_subject", o.config.samples_per_subject);
  s->add_option("--dimension", o.config.dimension, "Feature dimension");
}

void add_arch_options(CLI::App* s, Options& o) {
  s->add_option("--hidden", o.config.hidden, "Hidden layer widths")->delimiter(',');
  s->add_option("--activation", o.activation, "relu|tanh|identity");
}

void add_meta_options(CLI::App* s, Options& o) {
  auto& m = o.config.meta;
  s->add_option("--sampler", o.sampler, "random|alltask|mab|cl");
  s->add_option("--meta-batch,--meta_batch_size", m.meta_batch_size, "Tasks per meta-update");
  s->add_flag("--no-target-task,--exclude_target_task", m.exclude_target_task,
              "Leave K5 out of the meta-training pool");
  s->add_option("--gradient-mode,--gradient_mode", o.gradient_mode, "first|second");
  s->add_option("--adaptation_rate", m.adaptation_rate, "Inner-loop learning rate");
  s->add_option("--meta_rate", m.meta_rate, "Outer-loop learning rate");
  s->add_option("--meta_updates", m.meta_updates, "Number of meta-updates");
  s->add_option("--inner_steps", m.inner_steps, "Inner gradient steps");
  s->add_option("--n_tr", m.n_tr, "Support samples per episode");
  s->add_option("--n_val", m.n_val, "Query samples per episode");
  s->add_option("--buffer_capacity", m.buffer_capacity, "Sampler buffer length");
  s->add_option("--workers", m.workers, "Threads per meta-update");
}

void add_fine_tune_options(CLI::App* s, Options& o) {
  auto& f = o.config.fine_tune;
  s->add_option("--epochs", f.epochs, "Fine-tuning epochs");
  s->add_option("--learning_rate", f.learning_rate, "Fine-tuning learning rate");
  s->add_option("--batch_size", f.batch_size, "Fine-tuning mini-batch size");
  s->add_option("--target", o.target, "Target task K1..K5");
}

void add_multitask_options(CLI::App* s, Options& o) {
  auto& m = o.config.multitask;
  s->add_option("--multitask_iterations", m.iterations, "Multi-task pretraining iterations");
  s->add_option("--multitask_learning_rate", m.learning_rate);
  s->add_option("--multitask_batch_size", m.batch_size);
}

void run_generate(Options& o) {
  finalize(o);
  const fs::path out = prepare_out(o);
  Manifest manifest("generate", out);
  manifest.set_config(to_json(o.config));
  const SplitDataset data = load_data(o, manifest);
  stage("write", [&] {
    std::ostringstream s;
    write_dataset(s, data);
    manifest.write("dataset.csv", s.str());
    manifest.finish();
    return 0;
  });
  std::cout << "train " << data.train.size() << ", validation " << data.validation.size() << ", test "
            << data.test.size() << " samples -> " << (out / "dataset.csv").string() << '\n';
}

void run_meta_train(Options& o) {
  finalize(o);
  const fs::path out = prepare_out(o);
  Manifest manifest("meta-train", out);
  manifest.set_config(to_json(o.config));
  manifest.seed("seed", o.seed);
  const SplitDataset data = load_data(o, manifest);
  const MetaTrainResult r =
      stage("meta-train", [&] { return meta_train(o.config.meta, o.config.architecture(), data); });
  stage("write", [&] {
    manifest.write("checkpoint.json", checkpoint_text(r.model));
    manifest.write("run_log.tsv", to_text(r.log));
    manifest.finish();
    return 0;
  });
  std::cout << r.log.records.size() << " meta-updates, log " << r.model.provenance.log_hash << '\n';
}

void run_fine_tune(Options& o) {
  finalize(o);
  const fs::path out = prepare_out(o);
  Manifest manifest("fine-tune", out);
  manifest.set_config(to_json(o.config));
  manifest.seed("seed", o.seed);
  const SplitDataset data = load_data(o, manifest);
  const TrainedModel init =
      o.checkpoint_path.empty() ? random_model(o.config.architecture(), o.seed) : load_model(o, manifest);
  const FineTuneResult r = stage("fine-tune", [&] { return fine_tune(init, data, o.config.fine_tune); });
  stage("write", [&] {
    std::ostringstream curve;
    curve << "epoch\tvalidation_auc\n";
    for (std::size_t e = 0; e < r.validation_auc.size(); ++e) {
      curve << e << '\t' << text::format_double(r.validation_auc[e]) << '\n';
    }
    manifest.write("checkpoint.json", checkpoint_text(r.model));
    manifest.write("validation.tsv", curve.str());
    manifest.finish();
    return 0;
  });
  std::cout << "best epoch " << r.best_epoch << ", validation AUC "
            << text::format_double(r.validation_auc[r.best_epoch]) << '\n';
}

void run_evaluate(Options& o) {
  finalize(o);
  if (o.checkpoint_path.empty()) throw StageError("config", "--checkpoint is required");
  std::optional<Manifest> manifest;
  Manifest scratch("evaluate", ".");
  if (!o.out_dir.empty()) manifest.emplace("evaluate", prepare_out(o));
  Manifest& m = manifest ? *manifest : scratch;
  m.set_config({{"target", o.target}, {"split", o.split}, {"data", to_json(o.config)}});
  const SplitDataset data = load_data(o, m);
  const TrainedModel model = load_model(o, m);
  const double auc = stage("inference", [&] {
    const std::vector<SourceSample>* samples = nullptr;
    if (o.split == "train") samples = &data.train;
    else if (o.split == "validation") samples = &data.validation;
    else if (o.split == "test") samples = &data.test;
    else throw ConfigError("unknown split '" + o.split + "'");
    return evaluate_auc(model, map_labels(task_definition(o.config.fine_tune.target), *samples));
  });
  if (manifest) {
    stage("write", [&] {
      const nlohmann::json doc = {{"target", o.target}, {"split", o.split}, {"auc", auc}};
      manifest->write("evaluation.json", doc.dump(2) + "\n");
      manifest->finish();
      return 0;
    });
  }
  std::cout << o.target << ' ' << o.split << " AUC " << text::format_double(auc) << '\n';
}

void run_sweep_command(Options& o) {
  finalize(o);
  const fs::path out = prepare_out(o);
  ExperimentPlan plan = default_plan(o.config, o.repetitions, out);
  plan.base_seed = o.seed;
  plan.workers = o.config.meta.workers;
  // Per-update threading is not useful once runs are spread over workers.
  plan.base.meta.workers = 1;
  for (auto& v : plan.variants) v.meta.workers = 1;
  const ResultTable table = stage("sweep", [&] { return run_sweep(plan); });
  std::ostringstream txt;
  write_result_text(txt, table);
  std::cout << txt.str();
  for (const auto& c : table.cells) {
    if (c.status == CellStatus::Failed) std::cerr << "warning: " << c.label << " failed: " << c.message << '\n';
  }
}

void run_curves(Options& o) {
  if (o.log_path.empty()) throw StageError("config", "--log is required");
  const fs::path out = prepare_out(o);
  Manifest manifest("curves", out);
  manifest.set_config({{"window", o.window}});
  const Curves curves = stage("curves", [&] {
    const std::string text = read_text(o.log_path);
    manifest.input("run_log", git_blob_hash(text));
    std::istringstream in(text);
    return emit_curves(parse_run_log(in), o.window);
  });
  stage("write", [&] {
    std::ostringstream traj, hist;
    write_trajectories(traj, curves);
    write_histogram(hist, curves);
    manifest.write("trajectories.tsv", traj.str());
    manifest.write("histogram.tsv", hist.str());
    manifest.finish();
    return 0;
  });
  std::cout << curves.trajectories.size() << " trajectory points, " << curves.histogram.size()
            << " histogram windows\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learning with curriculum and bandit task sampling on a synthetic lesion source"};
  app.set_config("--config", "", "Config file with one [section] per subcommand");
  app.require_subcommand(1);

  Options o;
  auto common = [&](CLI::App* s) {
    s->fallthrough();
    s->add_option("--seed", o.seed, "Master seed");
    s->add_option("--out", o.out_dir, "Output directory");
  };

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  common(gen);
  add_data_options(gen, o);

  auto* meta = app.add_subcommand("meta-train", "Meta-train an initialisation");
  common(meta);
  add_data_options(meta, o);
  add_arch_options(meta, o);
  add_meta_options(meta, o);

  auto* ft = app.add_subcommand("fine-tune", "Fine-tune a checkpoint (or a random init) on the target task");
  common(ft);
  add_data_options(ft, o);
  add_arch_options(ft, o);
  add_fine_tune_options(ft, o);
  ft->add_option("--checkpoint", o.checkpoint_path, "Starting checkpoint (default: random init)");

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on one split");
  common(ev);
  add_data_options(ev, o);
  ev->add_option("--checkpoint", o.checkpoint_path, "Checkpoint to score")->required();
  ev->add_option("--target", o.target, "Task K1..K5");
  ev->add_option("--split", o.split, "train|validation|test");

  auto* sw = app.add_subcommand("sweep", "Run every sampler x meta-batch variant and the baselines");
  common(sw);
  add_data_options(sw, o);
  add_arch_options(sw, o);
  add_meta_options(sw, o);
  add_fine_tune_options(sw, o);
  add_multitask_options(sw, o);
  sw->add_option("--repetitions", o.repetitions, "Seeds per cell");

  auto* cv = app.add_subcommand("curves", "Turn a run log into plot-ready tables");
  common(cv);
  cv->add_option("--log", o.log_path, "run_log.tsv from meta-train")->required();
  cv->add_option("--window", o.window, "Histogram window in iterations");

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "generate") run_generate(o);
    else if (name == "meta-train") run_meta_train(o);
    else if (name == "fine-tune") run_fine_tune(o);
    else if (name == "evaluate") run_evaluate(o);
    else if (name == "sweep") run_sweep_command(o);
    else if (name == "curves") run_curves(o);
  } catch (const StageError& e) {
    std::cerr << "bsml " << name << ": error in " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "bsml " << name << ": " << e.what() << '\n';
    return 2;
  }
  return 0;
}
