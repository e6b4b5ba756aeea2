#pragma once

// Experiment driver: data -> meta-train -> fine-tune -> test AUC, sweeps over
// sampler x meta-batch variants and baselines, result tables and curve data.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsml/meta.hpp"

namespace bsml {

// Error raised by run_pipeline, tagged with the stage that failed
// ("generate", "meta-train", "fine-tune", "multi-task", "inference", "write").
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct ExperimentConfig {
  std::size_t n_subjects = 117;
  std::size_t samples_per_subject = 2;
  std::size_t dimension = 16;
  std::vector<std::size_t> hidden{32};
  Activation activation = Activation::Relu;
  MetaConfig meta;
  FineTuneConfig fine_tune;
  MultiTaskConfig multitask;

  Architecture architecture() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

enum class ModelKind { Meta, Plain, MultiTask };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct PipelineResult {
  double test_auc = 0.0;
  double validation_auc = 0.0;
  std::size_t best_epoch = 0;
  std::string log_hash;         // empty unless meta-trained
  std::string checkpoint_hash;  // git blob hash of the final checkpoint text
  TrainedModel model;
  RunLog log;
};

// Generates data from data_seed, builds the initial model (meta-trained,
// multi-task trained, or random for Plain), fine-tunes on the target task and
// scores the test split. Each stage uses the seed in its own config section
// (Plain uses config.meta.seed). When out_dir is given it
// receives checkpoint.json, run_log.tsv (meta only) and result.json.
// Failures are rethrown as StageError.
PipelineResult run_pipeline(const ExperimentConfig& config, ModelKind kind, std::uint64_t data_seed,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct Variant {
  std::string label;  // unique within a plan
  std::string model;  // table row name: BSML, BSML-NS, Plain, Multi-task
  ModelKind kind = ModelKind::Meta;
  MetaConfig meta;    // sampler, meta-batch size and exclusion for Meta variants
};

struct ExperimentPlan {
  ExperimentConfig base;
  std::vector<Variant> variants;
  std::size_t repetitions = 10;
  std::uint64_t base_seed = 0;  // repetition r uses data seed and model seed base_seed + r
  std::size_t workers = 1;
  std::filesystem::path output_dir;

  void validate() const;
};

// BSML at |K| = 3 and 5 and BSML-NS at |K| = 4 for every sampler, plus the
// Plain and Multi-task baselines.
ExperimentPlan default_plan(const ExperimentConfig& base, std::size_t repetitions,
                            std::filesystem::path output_dir);

nlohmann::json to_json(const ExperimentPlan& plan);

enum class CellStatus { Ok, NotApplicable, Failed };

struct ResultCell {
  std::string label;
  std::string model;
  std::size_t meta_batch = 0;  // 0 for baselines
  std::string sampler;         // "-" for baselines
  CellStatus status = CellStatus::Ok;
  double mean = 0.0;
  double std = 0.0;            // sample standard deviation, 0 for a single run
  std::vector<double> aucs;    // one per repetition, in seed order
  std::string message;         // failure reason

  friend bool operator==(const ResultCell&, const ResultCell&) = default;
};

struct ResultTable {
  std::vector<ResultCell> cells;

  const ResultCell* find(std::string_view label) const;
  friend bool operator==(const ResultTable&, const ResultTable&) = default;
};

// True when the variant cannot be run at all (all-task with |K| != pool size).
bool structurally_invalid(const Variant& v);

// Runs every variant x repetition (in parallel when plan.workers > 1),
// aggregates per cell and, when plan.output_dir is non-empty, writes
// results.json, results.tsv, results.txt and manifest.json there with one
// subdirectory per run.
ResultTable run_sweep(const ExperimentPlan& plan);

nlohmann::json to_json(const ResultTable& table);
ResultTable result_table_from_json(const nlohmann::json& j);
void write_result_tsv(std::ostream& out, const ResultTable& table);
// Rows grouped by (model, |K|) with one column per sampler; baselines below.
void write_result_text(std::ostream& out, const ResultTable& table);

struct TrajectoryPoint {
  std::size_t iteration;
  TaskId task;
  double auc_before;
  double auc_after;
  double observation;
  double reward;
};

struct HistogramRow {
  std::size_t window_start;
  std::size_t window_end;  // exclusive
  std::array<std::size_t, kTaskCount> counts{};
};

struct Curves {
  std::vector<TrajectoryPoint> trajectories;  // ordered by task, then iteration
  std::vector<HistogramRow> histogram;
};

// Throws FormatError when records have ragged per-slot lists or iterations
// that are not 0, 1, 2, ...
Curves emit_curves(const RunLog& log, std::size_t window = 100);
void write_trajectories(std::ostream& out, const Curves& curves);
void write_histogram(std::ostream& out, const Curves& curves);

// Writes text to path and returns its git blob hash.
std::string write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace bsml
