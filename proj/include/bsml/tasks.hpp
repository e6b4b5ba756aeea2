#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "bsml/numerics.hpp"

namespace bsml {

// Source label of one sample: no finding, benign finding, malignant finding.
enum class Finding : int { None = 0, Benign = 1, Malignant = 2 };

enum class TaskId : int { K1 = 0, K2 = 1, K3 = 2, K4 = 3, K5 = 4 };

inline constexpr std::size_t kTaskCount = 5;

std::string_view to_string(TaskId id);
TaskId parse_task_id(std::string_view name);
inline std::size_t index_of(TaskId id) { return static_cast<std::size_t>(id); }

struct TaskDefinition {
  TaskId id = TaskId::K1;
  std::array<bool, 3> included{};  // indexed by Finding
  std::array<bool, 3> positive{};

  bool includes(Finding f) const { return included[static_cast<std::size_t>(f)]; }
  bool is_positive(Finding f) const { return positive[static_cast<std::size_t>(f)]; }

  friend bool operator==(const TaskDefinition&, const TaskDefinition&) = default;
};

// K1 any finding | K2 none vs malignant | K3 none vs benign |
// K4 benign vs malignant | K5 screening (none+benign vs malignant).
const TaskDefinition& task_definition(TaskId id);
std::vector<TaskDefinition> all_tasks();
// Meta-training pool with K5 optionally held out.
std::vector<TaskDefinition> task_pool(bool exclude_target_task);

struct SourceSample {
  std::vector<double> features;
  Finding finding = Finding::None;
  std::int64_t subject_id = 0;

  friend bool operator==(const SourceSample&, const SourceSample&) = default;
};

struct SourceConfig {
  std::size_t dimension = 16;
  std::array<std::vector<double>, 3> means;  // indexed by Finding
  double sigma = 1.0;
  std::uint64_t seed = 0;
  std::array<double, 3> split_weights{45.0, 13.0, 59.0};  // train : validation : test

  // Isotropic mixture with |mu0-mu1| = |mu0-mu2| = 3 and |mu1-mu2| = 1.
  static SourceConfig defaults(std::uint64_t seed, std::size_t dimension = 16);
  void validate() const;
};

struct SplitDataset {
  std::vector<SourceSample> train;
  std::vector<SourceSample> validation;
  std::vector<SourceSample> test;

  friend bool operator==(const SplitDataset&, const SplitDataset&) = default;
};

// Number of subjects per split for a given total (each split gets >= 2).
std::array<std::size_t, 3> split_sizes(std::size_t n_subjects, const std::array<double, 3>& weights);

// Every subject carries one lesion sample (benign or malignant with equal
// probability); its remaining samples are none/benign/malignant with
// probabilities 1/2, 1/4, 1/4. Subjects are shuffled and then assigned to
// train/validation/test. Deterministic in config.seed.
SplitDataset generate_source(const SourceConfig& config, std::size_t n_subjects,
                             std::size_t samples_per_subject = 2);

// Drops samples the task does not include; label 1 iff the finding is positive.
Batch map_labels(const TaskDefinition& task, std::span<const SourceSample> samples);

struct Episode {
  TaskDefinition task;
  Batch support;
  Batch query;
  std::vector<std::int64_t> support_subjects;
  std::vector<std::int64_t> query_subjects;
};

// Stratified draw: support and query each hold at least one positive and one
// negative, and no subject contributes to both. Throws PoolExhaustedError
// when the pool cannot satisfy that.
Episode sample_episode(const TaskDefinition& task, std::span<const SourceSample> pool,
                       std::size_t n_tr, std::size_t n_val, std::mt19937_64& rng);

// Independent RNG streams: stream k of master seed s is seeded with
// s + k * kStreamStride.
inline constexpr std::uint64_t kStreamStride = 0x9E3779B97F4A7C15ULL;
inline std::mt19937_64 make_stream(std::uint64_t master_seed, std::uint64_t stream) {
  return std::mt19937_64(master_seed + stream * kStreamStride);
}

// Tabular text: header "split,subject_id,class,x0,...,x{d-1}" then one row per
// sample; split is train|validation|test. Numbers are written in shortest
// round-trip form, so read(write(d)) == d.
void write_dataset(std::ostream& out, const SplitDataset& data);
SplitDataset read_dataset(std::istream& in);

}  // namespace bsml
