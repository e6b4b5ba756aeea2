#include "bsml/samplers.hpp"

#include <cmath>
#include <string>

#include "bsml/errors.hpp"
#include "bsml/metrics.hpp"

namespace bsml {

namespace {

template <typename Key>
TaskDefinition select_by_buffer(SamplerState& state, std::span<const TaskDefinition> pool, Key key) {
  if (pool.empty()) throw ConfigError("task pool is empty");

  const TaskDefinition* unexplored = nullptr;
  for (const auto& t : pool) {
    if (state.buffer(t.id).empty() && (unexplored == nullptr || t.id < unexplored->id)) {
      unexplored = &t;
    }
  }
  if (unexplored != nullptr) return *unexplored;

  const TaskDefinition* best = nullptr;
  double best_key = 0.0;
  for (const auto& t : pool) {
    const auto& buf = state.buffer(t.id);
    std::uniform_int_distribution<std::size_t> pick(0, buf.size() - 1);
    const double k = key(buf[pick(state.rng())]);
    if (best == nullptr || k > best_key || (k == best_key && t.id < best->id)) {
      best = &t;
      best_key = k;
    }
  }
  return *best;
}

}  // namespace

std::string_view to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::Random: return "random";
    case SamplerKind::AllTask: return "alltask";
    case SamplerKind::CL: return "cl";
    case SamplerKind::MAB: return "mab";
  }
  return "random";
}

SamplerKind parse_sampler_kind(std::string_view name) {
  if (name == "random") return SamplerKind::Random;
  if (name == "alltask") return SamplerKind::AllTask;
  if (name == "cl") return SamplerKind::CL;
  if (name == "mab") return SamplerKind::MAB;
  throw ConfigError("unknown sampler '" + std::string(name) + "'");
}

SamplerState::SamplerState(SamplerKind kind, std::uint64_t seed, std::size_t buffer_capacity)
    : kind_(kind), capacity_(buffer_capacity), rng_(seed) {
  if (capacity_ == 0) throw ConfigError("sampler buffer capacity must be positive");
}

void SamplerState::push(TaskId id, double value) {
  auto& buf = buffers_[index_of(id)];
  buf.push_back(value);
  while (buf.size() > capacity_) buf.pop_front();
}

TaskDefinition select_one_cl(SamplerState& state, std::span<const TaskDefinition> pool) {
  return select_by_buffer(state, pool, [](double v) { return std::fabs(v); });
}

TaskDefinition select_one_mab(SamplerState& state, std::span<const TaskDefinition> pool) {
  return select_by_buffer(state, pool, [](double v) { return v; });
}

MetaBatch select_batch(SamplerState& state, std::span<const TaskDefinition> pool,
                       std::size_t batch_size) {
  if (pool.empty()) throw ConfigError("task pool is empty");
  if (batch_size == 0) throw ConfigError("meta-batch size must be positive");
  MetaBatch batch;
  batch.tasks.reserve(batch_size);
  switch (state.kind()) {
    case SamplerKind::Random: {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t i = 0; i < batch_size; ++i) batch.tasks.push_back(pool[pick(state.rng())]);
      break;
    }
    case SamplerKind::AllTask:
      if (batch_size != pool.size()) {
        throw ConfigError("all-task sampling needs meta-batch size " + std::to_string(pool.size()) +
                          ", got " + std::to_string(batch_size));
      }
      batch.tasks.assign(pool.begin(), pool.end());
      break;
    case SamplerKind::CL:
      for (std::size_t i = 0; i < batch_size; ++i) batch.tasks.push_back(select_one_cl(state, pool));
      break;
    case SamplerKind::MAB:
      for (std::size_t i = 0; i < batch_size; ++i) batch.tasks.push_back(select_one_mab(state, pool));
      break;
  }
  return batch;
}

OutcomeRecord record_outcome(SamplerState& state, TaskId task, double auc_before, double auc_after) {
  const Observation current = observation(auc_after, auc_before);
  const Observation previous(state.last_observation(task).value_or(0.0));
  const Reward r = reward(current, previous);
  switch (state.kind()) {
    case SamplerKind::CL: state.push(task, r.value()); break;
    case SamplerKind::MAB: state.push(task, current.value()); break;
    case SamplerKind::Random:
    case SamplerKind::AllTask: break;
  }
  state.set_last_observation(task, current.value());
  return {task, current.value(), r.value()};
}

}  // namespace bsml
