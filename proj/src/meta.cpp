#include "bsml/meta.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "bsml/errors.hpp"
#include "bsml/metrics.hpp"

namespace bsml {

namespace {

void require_non_negative(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be finite and >= 0");
}

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive");
}

void require_positive(std::size_t v, const char* name) {
  if (v == 0) throw ConfigError(std::string(name) + " must be positive");
}

Batch gather_rows(const Batch& source, std::span<const std::size_t> rows) {
  Batch b;
  b.inputs = Matrix(rows.size(), source.inputs.cols);
  b.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = source.inputs.row(rows[i]);
    std::copy(src.begin(), src.end(), b.inputs.row(i).begin());
    b.labels.push_back(source.labels[rows[i]]);
  }
  return b;
}

std::size_t head_offset(const Architecture& arch) { return arch.layer_offset(arch.layer_count() - 1); }

}  // namespace

std::string_view to_string(GradientMode mode) {
  return mode == GradientMode::SecondOrder ? "second" : "first";
}

GradientMode parse_gradient_mode(std::string_view name) {
  if (name == "second") return GradientMode::SecondOrder;
  if (name == "first") return GradientMode::FirstOrder;
  throw ConfigError("unknown gradient mode '" + std::string(name) + "'");
}

void MetaConfig::validate() const {
  // Zero rates are accepted: they switch adaptation or the meta-update off.
  require_non_negative(adaptation_rate, "adaptation_rate");
  require_non_negative(meta_rate, "meta_rate");
  require_positive(inner_steps, "inner_steps");
  require_positive(n_tr, "n_tr");
  require_positive(n_val, "n_val");
  require_positive(meta_batch_size, "meta_batch_size");
  require_positive(buffer_capacity, "buffer_capacity");
  require_positive(workers, "workers");
}

void FineTuneConfig::validate() const {
  require_positive(learning_rate, "learning_rate");
  require_positive(batch_size, "batch_size");
}

nlohmann::json to_json(const MetaConfig& c) {
  return {{"adaptation_rate", c.adaptation_rate},
          {"meta_rate", c.meta_rate},
          {"meta_updates", c.meta_updates},
          {"inner_steps", c.inner_steps},
          {"n_tr", c.n_tr},
          {"n_val", c.n_val},
          {"meta_batch_size", c.meta_batch_size},
          {"sampler", std::string(to_string(c.sampler))},
          {"gradient_mode", std::string(to_string(c.gradient_mode))},
          {"exclude_target_task", c.exclude_target_task},
          {"seed", c.seed},
          {"buffer_capacity", c.buffer_capacity},
          {"workers", c.workers}};
}

MetaConfig meta_config_from_json(const nlohmann::json& j) {
  MetaConfig c;
  c.adaptation_rate = j.value("adaptation_rate", c.adaptation_rate);
  c.meta_rate = j.value("meta_rate", c.meta_rate);
  c.meta_updates = j.value("meta_updates", c.meta_updates);
  c.inner_steps = j.value("inner_steps", c.inner_steps);
  c.n_tr = j.value("n_tr", c.n_tr);
  c.n_val = j.value("n_val", c.n_val);
  c.meta_batch_size = j.value("meta_batch_size", c.meta_batch_size);
  c.sampler = parse_sampler_kind(j.value("sampler", std::string(to_string(c.sampler))));
  c.gradient_mode = parse_gradient_mode(j.value("gradient_mode", std::string(to_string(c.gradient_mode))));
  c.exclude_target_task = j.value("exclude_target_task", c.exclude_target_task);
  c.seed = j.value("seed", c.seed);
  c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
  c.workers = j.value("workers", c.workers);
  return c;
}

nlohmann::json to_json(const FineTuneConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"target", std::string(to_string(c.target))},
          {"seed", c.seed}};
}

FineTuneConfig fine_tune_config_from_json(const nlohmann::json& j) {
  FineTuneConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.target = parse_task_id(j.value("target", std::string(to_string(c.target))));
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json to_json(const MultiTaskConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"iterations", c.iterations},
          {"seed", c.seed}};
}

MultiTaskConfig multitask_config_from_json(const nlohmann::json& j) {
  MultiTaskConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.iterations = j.value("iterations", c.iterations);
  c.seed = j.value("seed", c.seed);
  return c;
}

ParamVector initial_params(const Architecture& arch, std::uint64_t seed) {
  auto rng = make_stream(seed, 2);
  return initialize_params(arch, rng);
}

TrainedModel random_model(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  return {arch, initial_params(arch, seed), {"init", nlohmann::json::object(), seed, ""}};
}

std::vector<ParamVector> adaptation_trajectory(const DifferentiableLoss& support,
                                               const ParamVector& params, double alpha,
                                               std::size_t steps) {
  std::vector<ParamVector> path;
  path.reserve(steps + 1);
  path.push_back(params);
  for (std::size_t k = 0; k < steps; ++k) {
    ParamVector next = path.back();
    next.axpy(-alpha, support.gradient(path.back()));
    path.push_back(std::move(next));
  }
  return path;
}

ParamVector inner_adapt(const DifferentiableLoss& support, const ParamVector& params, double alpha,
                        std::size_t steps) {
  if (steps == 0) throw ConfigError("inner_adapt: steps must be at least 1");
  ParamVector theta = params;
  for (std::size_t k = 0; k < steps; ++k) theta.axpy(-alpha, support.gradient(theta));
  return theta;
}

ParamVector inner_adapt(const Architecture& arch, const ParamVector& params, const Batch& support,
                        double alpha, std::size_t steps) {
  return inner_adapt(BatchLoss(arch, support), params, alpha, steps);
}

double meta_objective(std::span<const TaskObjective> tasks, const ParamVector& params, double alpha,
                      std::size_t steps) {
  double total = 0.0;
  for (const auto& t : tasks) {
    const ParamVector adapted = steps == 0 ? params : inner_adapt(*t.support, params, alpha, steps);
    total += t.query->value(adapted);
  }
  return total;
}

TaskMetaGradient task_meta_gradient(const TaskObjective& task, const ParamVector& params,
                                    double alpha, std::size_t steps, GradientMode mode) {
  auto path = adaptation_trajectory(*task.support, params, alpha, steps);
  ParamVector v = task.query->gradient(path.back());
  if (mode == GradientMode::SecondOrder) {
    // d(theta_{k+1})/d(theta_k) = I - alpha * H(theta_k), applied right to left.
    for (std::size_t k = steps; k-- > 0;) {
      v.axpy(-alpha, task.support->hessian_vector_product(path[k], v));
    }
  }
  return {std::move(path.back()), std::move(v)};
}

ParamVector meta_gradient(std::span<const TaskObjective> tasks, const ParamVector& params,
                          double alpha, std::size_t steps, GradientMode mode) {
  if (tasks.empty()) throw ConfigError("meta_gradient: no episodes");
  ParamVector total(params.size());
  for (const auto& t : tasks) total += task_meta_gradient(t, params, alpha, steps, mode).gradient;
  return total;
}

ParamVector meta_gradient(const Architecture& arch, const ParamVector& params,
                          std::span<const Episode> episodes, double alpha, std::size_t steps,
                          GradientMode mode) {
  if (episodes.empty()) throw ConfigError("meta_gradient: no episodes");
  std::vector<BatchLoss> losses;
  losses.reserve(2 * episodes.size());
  std::vector<TaskObjective> objectives;
  for (const auto& ep : episodes) {
    losses.emplace_back(arch, ep.support);
    losses.emplace_back(arch, ep.query);
  }
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    objectives.push_back({&losses[2 * i], &losses[2 * i + 1]});
  }
  return meta_gradient(objectives, params, alpha, steps, mode);
}

MetaTrainResult meta_train(const MetaConfig& config, const Architecture& arch,
                           std::span<const TaskDefinition> pool, const SplitDataset& data,
                           SamplerState& sampler) {
  config.validate();
  arch.validate();
  if (pool.empty()) throw ConfigError("meta_train: task pool is empty");

  TrainedModel model = random_model(arch, config.seed);
  RunLog log;
  log.records.reserve(config.meta_updates);
  auto episode_rng = make_stream(config.seed, 1);

  struct SlotResult {
    TaskMetaGradient meta;
    double auc_before = 0.0;
    double auc_after = 0.0;
  };

  for (std::size_t m = 0; m < config.meta_updates; ++m) {
    const MetaBatch batch = select_batch(sampler, pool, config.meta_batch_size);

    std::vector<Episode> episodes;
    episodes.reserve(batch.tasks.size());
    for (const auto& task : batch.tasks) {
      try {
        episodes.push_back(sample_episode(task, data.train, config.n_tr, config.n_val, episode_rng));
      } catch (const PoolExhaustedError& e) {
        throw PoolExhaustedError("meta-update " + std::to_string(m) + ": " + e.what());
      }
    }

    const ParamVector& theta = model.params;
    auto run_slot = [&](std::size_t j) {
      const BatchLoss support(arch, episodes[j].support);
      const BatchLoss query(arch, episodes[j].query);
      SlotResult r;
      r.meta = task_meta_gradient({&support, &query}, theta, config.adaptation_rate,
                                  config.inner_steps, config.gradient_mode);
      const TrainedModel adapted{arch, r.meta.adapted, {}};
      r.auc_before = evaluate_auc(model, episodes[j].query);
      r.auc_after = evaluate_auc(adapted, episodes[j].query);
      return r;
    };

    std::vector<SlotResult> slots(episodes.size());
    if (config.workers > 1 && episodes.size() > 1) {
      std::vector<std::future<SlotResult>> pending;
      for (std::size_t j = 0; j < episodes.size(); ++j) {
        pending.push_back(std::async(std::launch::async, run_slot, j));
      }
      for (std::size_t j = 0; j < episodes.size(); ++j) slots[j] = pending[j].get();
    } else {
      for (std::size_t j = 0; j < episodes.size(); ++j) slots[j] = run_slot(j);
    }

    ParamVector meta_grad(theta.size());
    for (const auto& s : slots) meta_grad += s.meta.gradient;
    model.params.axpy(-config.meta_rate, meta_grad);
    if (!model.params.all_finite()) {
      throw std::runtime_error("meta-update " + std::to_string(m) + " produced non-finite parameters");
    }

    MetaUpdateRecord rec;
    rec.iteration = m;
    rec.sampler = sampler.kind();
    for (std::size_t j = 0; j < slots.size(); ++j) {
      const OutcomeRecord out =
          record_outcome(sampler, batch.tasks[j].id, slots[j].auc_before, slots[j].auc_after);
      rec.tasks.push_back(out.task);
      rec.auc_before.push_back(slots[j].auc_before);
      rec.auc_after.push_back(slots[j].auc_after);
      rec.observation.push_back(out.observation);
      rec.reward.push_back(out.reward);
    }
    rec.meta_grad_norm = meta_grad.norm();
    log.records.push_back(std::move(rec));
  }

  model.provenance = {"meta-train", to_json(config), config.seed, git_blob_hash(to_text(log))};
  return {std::move(model), std::move(log)};
}

MetaTrainResult meta_train(const MetaConfig& config, const Architecture& arch,
                           const SplitDataset& data) {
  config.validate();
  const auto pool = task_pool(config.exclude_target_task);
  SamplerState sampler(config.sampler, config.seed, config.buffer_capacity);
  return meta_train(config, arch, pool, data, sampler);
}

std::vector<double> positive_probability(const Matrix& logits) {
  if (logits.cols < 2) throw DimensionError("positive_probability: need at least two logits");
  std::vector<double> p(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto row = logits.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - m);
    p[r] = std::exp(row[1] - m) / sum;
  }
  return p;
}

std::vector<double> infer(const TrainedModel& model, const Matrix& inputs) {
  return positive_probability(forward(model.arch, model.params, inputs));
}

double evaluate_auc(const TrainedModel& model, const Batch& batch) {
  return compute_auc(infer(model, batch.inputs), batch.labels);
}

FineTuneResult fine_tune(const TrainedModel& model, const SplitDataset& data,
                         const FineTuneConfig& config) {
  config.validate();
  const TaskDefinition& task = task_definition(config.target);
  const Batch train = map_labels(task, data.train);
  const Batch validation = map_labels(task, data.validation);
  if (train.size() == 0) throw ConfigError("fine_tune: no training samples for the target task");

  FineTuneResult result;
  result.model = model;
  result.validation_auc.push_back(evaluate_auc(model, validation));
  double best_auc = result.validation_auc.front();

  TrainedModel current = model;
  auto rng = make_stream(config.seed, 3);
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const Batch mini = gather_rows(train, std::span(order).subspan(start, end - start));
      current.params.axpy(-config.learning_rate, grad(current.arch, current.params, mini));
    }
    const double auc = evaluate_auc(current, validation);
    result.validation_auc.push_back(auc);
    if (auc > best_auc) {
      best_auc = auc;
      result.best_epoch = epoch;
      result.model.params = current.params;
    }
  }
  result.model.provenance = {"fine-tune", to_json(config), config.seed,
                             model.provenance.log_hash};
  return result;
}

ParamVector MultiTaskParams::compose(std::size_t head) const {
  std::vector<double> full(trunk.begin(), trunk.end());
  full.insert(full.end(), heads.at(head).begin(), heads.at(head).end());
  return ParamVector(std::move(full));
}

MultiTaskParams split_multitask(const Architecture& arch, const ParamVector& full,
                                std::size_t head_count) {
  if (full.size() != arch.param_count()) throw DimensionError("split_multitask: wrong length");
  const std::size_t cut = head_offset(arch);
  MultiTaskParams p;
  p.trunk = ParamVector(std::vector<double>(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(cut)));
  const ParamVector head(std::vector<double>(full.begin() + static_cast<std::ptrdiff_t>(cut), full.end()));
  p.heads.assign(head_count, head);
  return p;
}

double multitask_loss(const Architecture& arch, const MultiTaskParams& params,
                      std::span<const Batch> batches) {
  if (batches.size() != params.heads.size()) throw DimensionError("multitask_loss: one batch per head");
  double total = 0.0;
  for (std::size_t j = 0; j < batches.size(); ++j) total += batch_loss(arch, params.compose(j), batches[j]);
  return total;
}

MultiTaskParams multitask_gradient(const Architecture& arch, const MultiTaskParams& params,
                                   std::span<const Batch> batches) {
  if (batches.size() != params.heads.size()) {
    throw DimensionError("multitask_gradient: one batch per head");
  }
  const std::size_t cut = head_offset(arch);
  MultiTaskParams g;
  g.trunk = ParamVector(params.trunk.size());
  for (std::size_t j = 0; j < batches.size(); ++j) {
    const ParamVector full = grad(arch, params.compose(j), batches[j]);
    for (std::size_t i = 0; i < cut; ++i) g.trunk[i] += full[i];
    g.heads.emplace_back(std::vector<double>(full.begin() + static_cast<std::ptrdiff_t>(cut), full.end()));
  }
  return g;
}

TrainedModel multitask_train(const Architecture& arch, std::span<const TaskDefinition> pool,
                             const SplitDataset& data, const MultiTaskConfig& config) {
  arch.validate();
  if (pool.empty()) throw ConfigError("multitask_train: task pool is empty");
  require_positive(config.learning_rate, "learning_rate");
  require_positive(config.batch_size, "batch_size");

  auto init_rng = make_stream(config.seed, 2);
  MultiTaskParams params = split_multitask(arch, initialize_params(arch, init_rng), pool.size());
  for (std::size_t j = 1; j < pool.size(); ++j) {
    params.heads[j] = split_multitask(arch, initialize_params(arch, init_rng), 1).heads[0];
  }

  std::vector<Batch> task_data;
  for (const auto& t : pool) {
    task_data.push_back(map_labels(t, data.train));
    if (task_data.back().size() == 0) {
      throw ConfigError("multitask_train: no training samples for " + std::string(to_string(t.id)));
    }
  }

  auto rng = make_stream(config.seed, 4);
  std::vector<Batch> batches(pool.size());
  std::vector<std::size_t> rows(config.batch_size);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (std::size_t j = 0; j < pool.size(); ++j) {
      std::uniform_int_distribution<std::size_t> pick(0, task_data[j].size() - 1);
      for (auto& r : rows) r = pick(rng);
      batches[j] = gather_rows(task_data[j], rows);
    }
    const MultiTaskParams g = multitask_gradient(arch, params, batches);
    params.trunk.axpy(-config.learning_rate, g.trunk);
    for (std::size_t j = 0; j < pool.size(); ++j) params.heads[j].axpy(-config.learning_rate, g.heads[j]);
  }

  std::size_t head = 0;
  for (std::size_t j = 0; j < pool.size(); ++j) {
    if (pool[j].id == TaskId::K5) head = j;
  }
  return {arch, params.compose(head), {"multi-task", to_json(config), config.seed, ""}};
}

}  // namespace bsml
