#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "bsml/tasks.hpp"

namespace bsml {

enum class SamplerKind { Random, AllTask, CL, MAB };

std::string_view to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(std::string_view name);

struct MetaBatch {
  std::vector<TaskDefinition> tasks;
};

// Per-task buffers of recent rewards (CL) or observations (MAB), plus the
// last observation per task and the selection RNG.
//
// Selection rule shared by CL and MAB: if any pool task has an empty buffer,
// the lowest-indexed such task is returned without touching the RNG.
// Otherwise, for each pool task in order, one buffer entry is drawn with
// std::uniform_int_distribution<std::size_t>(0, size - 1); the task with the
// largest key wins (|value| for CL, value for MAB), ties to the lowest index.
class SamplerState {
 public:
  static constexpr std::size_t kDefaultCapacity = 10;

  SamplerState(SamplerKind kind, std::uint64_t seed, std::size_t buffer_capacity = kDefaultCapacity);

  SamplerKind kind() const { return kind_; }
  std::size_t capacity() const { return capacity_; }
  const std::deque<double>& buffer(TaskId id) const { return buffers_[index_of(id)]; }
  std::optional<double> last_observation(TaskId id) const { return last_[index_of(id)]; }
  std::mt19937_64& rng() { return rng_; }

  // Appends to a task's buffer, evicting the oldest entry when full.
  void push(TaskId id, double value);
  void set_last_observation(TaskId id, double value) { last_[index_of(id)] = value; }

 private:
  SamplerKind kind_;
  std::size_t capacity_;
  std::array<std::deque<double>, kTaskCount> buffers_;
  std::array<std::optional<double>, kTaskCount> last_;
  std::mt19937_64 rng_;
};

// Throws ConfigError for an empty pool, a zero batch size, or AllTask with a
// batch size different from the pool size.
MetaBatch select_batch(SamplerState& state, std::span<const TaskDefinition> pool,
                       std::size_t batch_size);

TaskDefinition select_one_cl(SamplerState& state, std::span<const TaskDefinition> pool);
TaskDefinition select_one_mab(SamplerState& state, std::span<const TaskDefinition> pool);

// What record_outcome computed; reward is relative to the task's previous
// observation (0 when it has none).
struct OutcomeRecord {
  TaskId task;
  double observation;
  double reward;
};

// CL pushes the reward, MAB pushes the raw observation, Random and AllTask
// push nothing. Every kind remembers the observation for the next reward.
OutcomeRecord record_outcome(SamplerState& state, TaskId task, double auc_before, double auc_after);

}  // namespace bsml
