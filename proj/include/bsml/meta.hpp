#pragma once

// Meta-training (adapt on support sets, update the shared initialisation from
// post-adaptation query losses), fine-tuning on the target task, inference,
// and a shared-trunk multi-task baseline.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsml/numerics.hpp"
#include "bsml/run_log.hpp"
#include "bsml/samplers.hpp"
#include "bsml/tasks.hpp"

namespace bsml {

enum class GradientMode { SecondOrder, FirstOrder };

std::string_view to_string(GradientMode mode);
GradientMode parse_gradient_mode(std::string_view name);

struct MetaConfig {
  double adaptation_rate = 0.1;
  double meta_rate = 0.001;
  std::size_t meta_updates = 3000;
  std::size_t inner_steps = 5;
  std::size_t n_tr = 4;
  std::size_t n_val = 4;
  std::size_t meta_batch_size = 5;
  SamplerKind sampler = SamplerKind::CL;
  GradientMode gradient_mode = GradientMode::SecondOrder;
  bool exclude_target_task = false;
  std::uint64_t seed = 0;
  std::size_t buffer_capacity = SamplerState::kDefaultCapacity;
  // Per-task work inside one meta-update may run on this many threads; the
  // result does not depend on it.
  std::size_t workers = 1;

  void validate() const;
};

struct FineTuneConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 2;
  std::size_t epochs = 200;
  TaskId target = TaskId::K5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct MultiTaskConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 2;
  std::size_t iterations = 2000;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const MetaConfig& c);
MetaConfig meta_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FineTuneConfig& c);
FineTuneConfig fine_tune_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MultiTaskConfig& c);
MultiTaskConfig multitask_config_from_json(const nlohmann::json& j);

struct Provenance {
  std::string stage;          // "init", "meta-train", "fine-tune", "multi-task"
  nlohmann::json config;      // config of the stage that produced the params
  std::uint64_t seed = 0;
  std::string log_hash;       // git blob hash of the stage's run log, if any
};

struct TrainedModel {
  Architecture arch;
  ParamVector params;
  Provenance provenance;
};

// Seeded initialisation used by every training entry point (stream 2 of seed).
ParamVector initial_params(const Architecture& arch, std::uint64_t seed);
TrainedModel random_model(const Architecture& arch, std::uint64_t seed);

// params_0 .. params_steps of repeated full-batch gradient descent.
std::vector<ParamVector> adaptation_trajectory(const DifferentiableLoss& support,
                                               const ParamVector& params, double alpha,
                                               std::size_t steps);
ParamVector inner_adapt(const DifferentiableLoss& support, const ParamVector& params, double alpha,
                        std::size_t steps);
ParamVector inner_adapt(const Architecture& arch, const ParamVector& params, const Batch& support,
                        double alpha, std::size_t steps);

struct TaskObjective {
  const DifferentiableLoss* support;
  const DifferentiableLoss* query;
};

// Sum over tasks of the query loss at the adapted parameters.
double meta_objective(std::span<const TaskObjective> tasks, const ParamVector& params, double alpha,
                      std::size_t steps);

struct TaskMetaGradient {
  ParamVector adapted;
  ParamVector gradient;
};

// Gradient of one task's query loss at the adapted parameters with respect
// to the initial parameters. SecondOrder applies (I - alpha*H_k) for every
// inner step in reverse; FirstOrder stops at the adapted-point gradient.
TaskMetaGradient task_meta_gradient(const TaskObjective& task, const ParamVector& params,
                                    double alpha, std::size_t steps, GradientMode mode);

// Unweighted sum of task_meta_gradient over the tasks, in task order.
ParamVector meta_gradient(std::span<const TaskObjective> tasks, const ParamVector& params,
                          double alpha, std::size_t steps, GradientMode mode);
ParamVector meta_gradient(const Architecture& arch, const ParamVector& params,
                          std::span<const Episode> episodes, double alpha, std::size_t steps,
                          GradientMode mode);

struct MetaTrainResult {
  TrainedModel model;
  RunLog log;
};

// Runs config.meta_updates iterations of: select tasks, draw one episode per
// slot from data.train, adapt, update with -meta_rate * meta_gradient, then
// report (query AUC before, after) to the sampler. Deterministic in seed.
MetaTrainResult meta_train(const MetaConfig& config, const Architecture& arch,
                           std::span<const TaskDefinition> pool, const SplitDataset& data,
                           SamplerState& sampler);
// Uses task_pool(config.exclude_target_task) and a sampler seeded from config.
MetaTrainResult meta_train(const MetaConfig& config, const Architecture& arch,
                           const SplitDataset& data);

struct FineTuneResult {
  TrainedModel model;
  std::size_t best_epoch = 0;
  std::vector<double> validation_auc;  // index 0 is the starting point
};

// Mini-batch SGD on the target task's training samples; returns the
// snapshot with the highest validation AUC (first one on ties).
FineTuneResult fine_tune(const TrainedModel& model, const SplitDataset& data,
                         const FineTuneConfig& config);

// Softmax probability of class 1 for each row.
std::vector<double> positive_probability(const Matrix& logits);
std::vector<double> infer(const TrainedModel& model, const Matrix& inputs);
double evaluate_auc(const TrainedModel& model, const Batch& batch);

// Shared trunk (all but the last layer) with one output head per task.
struct MultiTaskParams {
  ParamVector trunk;
  std::vector<ParamVector> heads;

  ParamVector compose(std::size_t head) const;
};

MultiTaskParams split_multitask(const Architecture& arch, const ParamVector& full,
                                std::size_t head_count);
// Loss is the sum over heads of each head's cross-entropy on its batch.
double multitask_loss(const Architecture& arch, const MultiTaskParams& params,
                      std::span<const Batch> batches);
MultiTaskParams multitask_gradient(const Architecture& arch, const MultiTaskParams& params,
                                   std::span<const Batch> batches);

// Each iteration draws batch_size samples (with replacement) per task from
// its mapped training data and takes one SGD step on the summed loss. The
// returned model is the trunk with the K5 head, or with the first pool
// task's head when K5 is not in the pool.
TrainedModel multitask_train(const Architecture& arch, std::span<const TaskDefinition> pool,
                             const SplitDataset& data, const MultiTaskConfig& config);

}  // namespace bsml
