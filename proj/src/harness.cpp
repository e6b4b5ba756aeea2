#include "bsml/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "bsml/checkpoint.hpp"
#include "bsml/errors.hpp"
#include "bsml/metrics.hpp"
#include "bsml/text_io.hpp"

namespace bsml {

namespace {

constexpr std::array<SamplerKind, 4> kTableSamplers{SamplerKind::Random, SamplerKind::AllTask,
                                                     SamplerKind::MAB, SamplerKind::CL};

template <typename Fn>
auto in_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::string_view to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Ok: return "ok";
    case CellStatus::NotApplicable: return "n/a";
    case CellStatus::Failed: return "failed";
  }
  return "ok";
}

CellStatus parse_cell_status(std::string_view s) {
  if (s == "ok") return CellStatus::Ok;
  if (s == "n/a") return CellStatus::NotApplicable;
  if (s == "failed") return CellStatus::Failed;
  throw FormatError("unknown cell status '" + std::string(s) + "'");
}

std::string sampler_column_name(SamplerKind k) {
  switch (k) {
    case SamplerKind::Random: return "Random";
    case SamplerKind::AllTask: return "All-task";
    case SamplerKind::MAB: return "MAB";
    case SamplerKind::CL: return "CL";
  }
  return "";
}

std::string format_fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct JobOutcome {
  bool ok = false;
  double auc = 0.0;
  std::string error;
};

}  // namespace

Architecture ExperimentConfig::architecture() const {
  Architecture a;
  a.layer_widths.push_back(dimension);
  a.layer_widths.insert(a.layer_widths.end(), hidden.begin(), hidden.end());
  a.layer_widths.push_back(2);
  a.activation = activation;
  a.validate();
  return a;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"n_subjects", c.n_subjects},
          {"samples_per_subject", c.samples_per_subject},
          {"dimension", c.dimension},
          {"hidden", c.hidden},
          {"activation", std::string(to_string(c.activation))},
          {"meta", to_json(c.meta)},
          {"fine_tune", to_json(c.fine_tune)},
          {"multitask", to_json(c.multitask)}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.n_subjects = j.value("n_subjects", c.n_subjects);
  c.samples_per_subject = j.value("samples_per_subject", c.samples_per_subject);
  c.dimension = j.value("dimension", c.dimension);
  c.hidden = j.value("hidden", c.hidden);
  c.activation = parse_activation(j.value("activation", std::string(to_string(c.activation))));
  if (j.contains("meta")) c.meta = meta_config_from_json(j.at("meta"));
  if (j.contains("fine_tune")) c.fine_tune = fine_tune_config_from_json(j.at("fine_tune"));
  if (j.contains("multitask")) c.multitask = multitask_config_from_json(j.at("multitask"));
  return c;
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Meta: return "meta";
    case ModelKind::Plain: return "plain";
    case ModelKind::MultiTask: return "multi-task";
  }
  return "meta";
}

std::string write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
  return git_blob_hash(text);
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "meta") return ModelKind::Meta;
  if (s == "plain") return ModelKind::Plain;
  if (s == "multi-task") return ModelKind::MultiTask;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

PipelineResult run_pipeline(const ExperimentConfig& config, ModelKind kind, std::uint64_t data_seed,
                            const std::optional<std::filesystem::path>& out_dir) {
  const SplitDataset data = in_stage("generate", [&] {
    return generate_source(SourceConfig::defaults(data_seed, config.dimension), config.n_subjects,
                           config.samples_per_subject);
  });
  const Architecture arch = in_stage("generate", [&] { return config.architecture(); });

  PipelineResult result;
  TrainedModel init;
  switch (kind) {
    case ModelKind::Meta: {
      MetaTrainResult mt = in_stage("meta-train", [&] { return meta_train(config.meta, arch, data); });
      init = std::move(mt.model);
      result.log = std::move(mt.log);
      result.log_hash = init.provenance.log_hash;
      break;
    }
    case ModelKind::Plain:
      init = random_model(arch, config.meta.seed);
      break;
    case ModelKind::MultiTask:
      init = in_stage("multi-task",
                      [&] { return multitask_train(arch, all_tasks(), data, config.multitask); });
      break;
  }

  FineTuneResult ft = in_stage("fine-tune", [&] { return fine_tune(init, data, config.fine_tune); });
  result.best_epoch = ft.best_epoch;
  result.validation_auc = ft.validation_auc[ft.best_epoch];
  result.model = std::move(ft.model);

  result.test_auc = in_stage("inference", [&] {
    return evaluate_auc(result.model, map_labels(task_definition(config.fine_tune.target), data.test));
  });

  std::ostringstream ckpt;
  write_checkpoint(ckpt, result.model);
  result.checkpoint_hash = git_blob_hash(ckpt.str());

  if (out_dir) {
    in_stage("write", [&] {
      std::filesystem::create_directories(*out_dir);
      write_file(*out_dir / "checkpoint.json", ckpt.str());
      if (kind == ModelKind::Meta) write_file(*out_dir / "run_log.tsv", to_text(result.log));
      const nlohmann::json record = {{"kind", std::string(to_string(kind))},
                                     {"data_seed", data_seed},
                                     {"seed", config.meta.seed},
                                     {"test_auc", result.test_auc},
                                     {"validation_auc", result.validation_auc},
                                     {"best_epoch", result.best_epoch},
                                     {"log_hash", result.log_hash},
                                     {"checkpoint_hash", result.checkpoint_hash},
                                     {"config", to_json(config)}};
      write_file(*out_dir / "result.json", record.dump(2) + "\n");
      return 0;
    });
  }
  return result;
}

void ExperimentPlan::validate() const {
  if (repetitions == 0) throw ConfigError("plan needs at least one repetition");
  if (workers == 0) throw ConfigError("plan needs at least one worker");
  std::vector<std::string> labels;
  for (const auto& v : variants) labels.push_back(v.label);
  std::sort(labels.begin(), labels.end());
  if (std::adjacent_find(labels.begin(), labels.end()) != labels.end()) {
    throw ConfigError("variant labels must be unique");
  }
}

ExperimentPlan default_plan(const ExperimentConfig& base, std::size_t repetitions,
                            std::filesystem::path output_dir) {
  ExperimentPlan plan;
  plan.base = base;
  plan.repetitions = repetitions;
  plan.output_dir = std::move(output_dir);
  struct Row {
    const char* model;
    std::size_t k;
    bool exclude;
  };
  for (const Row row : {Row{"BSML", 3, false}, Row{"BSML", 5, false}, Row{"BSML-NS", 4, true}}) {
    for (SamplerKind s : kTableSamplers) {
      Variant v;
      v.model = row.model;
      v.kind = ModelKind::Meta;
      v.meta = base.meta;
      v.meta.meta_batch_size = row.k;
      v.meta.sampler = s;
      v.meta.exclude_target_task = row.exclude;
      v.label = std::string(row.model) + "-K" + std::to_string(row.k) + "-" + std::string(to_string(s));
      plan.variants.push_back(v);
    }
  }
  plan.variants.push_back({"Plain", "Plain", ModelKind::Plain, base.meta});
  plan.variants.push_back({"Multi-task", "Multi-task", ModelKind::MultiTask, base.meta});
  return plan;
}

nlohmann::json to_json(const ExperimentPlan& plan) {
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : plan.variants) {
    variants.push_back({{"label", v.label},
                        {"model", v.model},
                        {"kind", std::string(to_string(v.kind))},
                        {"meta", to_json(v.meta)}});
  }
  return {{"base", to_json(plan.base)},
          {"variants", variants},
          {"repetitions", plan.repetitions},
          {"base_seed", plan.base_seed},
          {"workers", plan.workers}};
}

bool structurally_invalid(const Variant& v) {
  if (v.kind != ModelKind::Meta || v.meta.sampler != SamplerKind::AllTask) return false;
  return v.meta.meta_batch_size != task_pool(v.meta.exclude_target_task).size();
}

const ResultCell* ResultTable::find(std::string_view label) const {
  for (const auto& c : cells) {
    if (c.label == label) return &c;
  }
  return nullptr;
}

ResultTable run_sweep(const ExperimentPlan& plan) {
  plan.validate();

  struct Job {
    std::size_t variant;
    std::size_t rep;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < plan.variants.size(); ++v) {
    if (structurally_invalid(plan.variants[v])) continue;
    for (std::size_t r = 0; r < plan.repetitions; ++r) jobs.push_back({v, r});
  }

  std::vector<JobOutcome> outcomes(jobs.size());
  auto run_job = [&](std::size_t i) {
    const Variant& variant = plan.variants[jobs[i].variant];
    const std::uint64_t seed = plan.base_seed + jobs[i].rep;
    ExperimentConfig config = plan.base;
    if (variant.kind == ModelKind::Meta) config.meta = variant.meta;
    config.meta.seed = seed;
    config.fine_tune.seed = seed;
    config.multitask.seed = seed;
    std::optional<std::filesystem::path> dir;
    if (!plan.output_dir.empty()) dir = plan.output_dir / variant.label / ("seed_" + std::to_string(seed));
    try {
      outcomes[i] = {true, run_pipeline(config, variant.kind, seed, dir).test_auc, ""};
    } catch (const std::exception& e) {
      outcomes[i] = {false, 0.0, e.what()};
    }
  };

  if (plan.workers > 1) {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(plan.workers, jobs.size()); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) run_job(i);
      });
    }
    for (auto& t : pool) t.join();
  } else {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
  }

  ResultTable table;
  for (std::size_t v = 0; v < plan.variants.size(); ++v) {
    const Variant& variant = plan.variants[v];
    ResultCell cell;
    cell.label = variant.label;
    cell.model = variant.model;
    if (variant.kind == ModelKind::Meta) {
      cell.meta_batch = variant.meta.meta_batch_size;
      cell.sampler = std::string(to_string(variant.meta.sampler));
    } else {
      cell.sampler = "-";
    }
    if (structurally_invalid(variant)) {
      cell.status = CellStatus::NotApplicable;
      table.cells.push_back(std::move(cell));
      continue;
    }
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].variant != v) continue;
      if (outcomes[i].ok) {
        cell.aucs.push_back(outcomes[i].auc);
      } else if (cell.status != CellStatus::Failed) {
        cell.status = CellStatus::Failed;
        cell.message = "seed " + std::to_string(plan.base_seed + jobs[i].rep) + ": " + outcomes[i].error;
      }
    }
    if (!cell.aucs.empty()) {
      double sum = 0.0;
      for (double a : cell.aucs) sum += a;
      cell.mean = sum / static_cast<double>(cell.aucs.size());
      if (cell.aucs.size() > 1) {
        double ss = 0.0;
        for (double a : cell.aucs) ss += (a - cell.mean) * (a - cell.mean);
        cell.std = std::sqrt(ss / static_cast<double>(cell.aucs.size() - 1));
      }
    }
    table.cells.push_back(std::move(cell));
  }

  if (!plan.output_dir.empty()) {
    const auto& out = plan.output_dir;
    std::filesystem::create_directories(out);
    std::ostringstream tsv, txt;
    write_result_tsv(tsv, table);
    write_result_text(txt, table);
    write_file(out / "results.json", to_json(table).dump(2) + "\n");
    write_file(out / "results.tsv", tsv.str());
    write_file(out / "results.txt", txt.str());

    // Content hashes of everything the sweep wrote, keyed by relative path.
    std::map<std::string, std::string> hashes;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(out)) {
      if (!entry.is_regular_file() || entry.path().filename() == "manifest.json") continue;
      std::ifstream in(entry.path(), std::ios::binary);
      std::ostringstream content;
      content << in.rdbuf();
      hashes[std::filesystem::relative(entry.path(), out).generic_string()] = git_blob_hash(content.str());
    }
    const nlohmann::json manifest = {{"tool", "bsml"},
                                     {"command", "sweep"},
                                     {"plan", to_json(plan)},
                                     {"outputs", hashes}};
    write_file(out / "manifest.json", manifest.dump(2) + "\n");
  }
  return table;
}

nlohmann::json to_json(const ResultTable& table) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : table.cells) {
    cells.push_back({{"label", c.label},
                     {"model", c.model},
                     {"meta_batch", c.meta_batch},
                     {"sampler", c.sampler},
                     {"status", std::string(to_string(c.status))},
                     {"mean", c.mean},
                     {"std", c.std},
                     {"aucs", c.aucs},
                     {"message", c.message}});
  }
  return {{"cells", cells}};
}

ResultTable result_table_from_json(const nlohmann::json& j) {
  try {
    ResultTable t;
    for (const auto& c : j.at("cells")) {
      ResultCell cell;
      cell.label = c.at("label").get<std::string>();
      cell.model = c.at("model").get<std::string>();
      cell.meta_batch = c.at("meta_batch").get<std::size_t>();
      cell.sampler = c.at("sampler").get<std::string>();
      cell.status = parse_cell_status(c.at("status").get<std::string>());
      cell.mean = c.at("mean").get<double>();
      cell.std = c.at("std").get<double>();
      cell.aucs = c.at("aucs").get<std::vector<double>>();
      cell.message = c.at("message").get<std::string>();
      t.cells.push_back(std::move(cell));
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("result table: ") + e.what());
  }
}

void write_result_tsv(std::ostream& out, const ResultTable& table) {
  out << "label\tmodel\tmeta_batch\tsampler\tstatus\tmean\tstd\truns\taucs\tmessage\n";
  for (const auto& c : table.cells) {
    out << c.label << '\t' << c.model << '\t' << c.meta_batch << '\t' << c.sampler << '\t'
        << to_string(c.status) << '\t' << text::format_double(c.mean) << '\t'
        << text::format_double(c.std) << '\t' << c.aucs.size() << '\t';
    for (std::size_t i = 0; i < c.aucs.size(); ++i) {
      if (i > 0) out << ',';
      out << text::format_double(c.aucs[i]);
    }
    std::string msg = c.message;
    std::replace(msg.begin(), msg.end(), '\t', ' ');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    out << '\t' << msg << '\n';
  }
}

void write_result_text(std::ostream& out, const ResultTable& table) {
  auto cell_text = [](const ResultCell& c) -> std::string {
    switch (c.status) {
      case CellStatus::NotApplicable: return "N/A";
      case CellStatus::Failed: return "failed";
      case CellStatus::Ok: return format_fixed(c.mean, 4) + " +/- " + format_fixed(c.std, 4);
    }
    return "";
  };

  std::vector<std::pair<std::string, std::size_t>> rows;
  for (const auto& c : table.cells) {
    if (c.sampler == "-") continue;
    const auto key = std::make_pair(c.model, c.meta_batch);
    if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
  }

  constexpr int kName = 12, kK = 5, kCol = 20;
  if (!rows.empty()) {
    out << std::left << std::setw(kName) << "Model" << std::setw(kK) << "|K|";
    for (SamplerKind s : kTableSamplers) out << std::setw(kCol) << sampler_column_name(s);
    out << '\n';
    for (const auto& [model, k] : rows) {
      out << std::setw(kName) << model << std::setw(kK) << k;
      for (SamplerKind s : kTableSamplers) {
        std::string text = "-";
        for (const auto& c : table.cells) {
          if (c.model == model && c.meta_batch == k && c.sampler == to_string(s)) text = cell_text(c);
        }
        out << std::setw(kCol) << text;
      }
      out << '\n';
    }
  }
  bool header = false;
  for (const auto& c : table.cells) {
    if (c.sampler != "-") continue;
    if (!header) {
      if (!rows.empty()) out << '\n';
      out << std::setw(kName) << "Baseline" << "AUC\n";
      header = true;
    }
    out << std::setw(kName) << c.model << cell_text(c) << '\n';
  }
}

Curves emit_curves(const RunLog& log, std::size_t window) {
  if (window == 0) throw ConfigError("curve window must be positive");
  Curves curves;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& r = log.records[i];
    const std::size_t n = r.tasks.size();
    if (r.iteration != i) {
      throw FormatError("run log record " + std::to_string(i) + " has iteration " +
                        std::to_string(r.iteration));
    }
    if (r.auc_before.size() != n || r.auc_after.size() != n || r.observation.size() != n ||
        r.reward.size() != n) {
      throw FormatError("run log record " + std::to_string(i) + " has ragged per-task columns");
    }
    for (std::size_t j = 0; j < n; ++j) {
      curves.trajectories.push_back(
          {r.iteration, r.tasks[j], r.auc_before[j], r.auc_after[j], r.observation[j], r.reward[j]});
    }
    if (i % window == 0) curves.histogram.push_back({i, std::min(i + window, log.records.size()), {}});
    for (TaskId t : r.tasks) ++curves.histogram.back().counts[index_of(t)];
  }
  std::stable_sort(curves.trajectories.begin(), curves.trajectories.end(),
                   [](const TrajectoryPoint& a, const TrajectoryPoint& b) { return a.task < b.task; });
  return curves;
}

void write_trajectories(std::ostream& out, const Curves& curves) {
  out << "task\titeration\tauc_before\tauc_after\tobservation\treward\n";
  for (const auto& p : curves.trajectories) {
    out << to_string(p.task) << '\t' << p.iteration << '\t' << text::format_double(p.auc_before) << '\t'
        << text::format_double(p.auc_after) << '\t' << text::format_double(p.observation) << '\t'
        << text::format_double(p.reward) << '\n';
  }
}

void write_histogram(std::ostream& out, const Curves& curves) {
  out << "window_start\twindow_end";
  for (std::size_t t = 0; t < kTaskCount; ++t) out << '\t' << to_string(static_cast<TaskId>(t));
  out << '\n';
  for (const auto& row : curves.histogram) {
    out << row.window_start << '\t' << row.window_end;
    for (std::size_t c : row.counts) out << '\t' << c;
    out << '\n';
  }
}

}  // namespace bsml
