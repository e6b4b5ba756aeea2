#include "bsml/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <string>

#include "bsml/errors.hpp"
#include "bsml/text_io.hpp"

namespace bsml {

namespace {

constexpr std::array<std::string_view, kTaskCount> kTaskNames{"K1", "K2", "K3", "K4", "K5"};

TaskDefinition make_task(TaskId id, std::array<bool, 3> included, std::array<bool, 3> positive) {
  return TaskDefinition{id, included, positive};
}

const std::array<TaskDefinition, kTaskCount>& task_table() {
  static const std::array<TaskDefinition, kTaskCount> table{
      make_task(TaskId::K1, {true, true, true}, {false, true, true}),
      make_task(TaskId::K2, {true, false, true}, {false, false, true}),
      make_task(TaskId::K3, {true, true, false}, {false, true, false}),
      make_task(TaskId::K4, {false, true, true}, {false, false, true}),
      make_task(TaskId::K5, {true, true, true}, {false, false, true}),
  };
  return table;
}

constexpr std::array<std::string_view, 3> kSplitNames{"train", "validation", "test"};

}  // namespace

std::string_view to_string(TaskId id) { return kTaskNames[index_of(id)]; }

TaskId parse_task_id(std::string_view name) {
  for (std::size_t i = 0; i < kTaskCount; ++i) {
    if (kTaskNames[i] == name) return static_cast<TaskId>(i);
  }
  throw FormatError("unknown task '" + std::string(name) + "'");
}

const TaskDefinition& task_definition(TaskId id) { return task_table()[index_of(id)]; }

std::vector<TaskDefinition> all_tasks() {
  return {task_table().begin(), task_table().end()};
}

std::vector<TaskDefinition> task_pool(bool exclude_target_task) {
  auto pool = all_tasks();
  if (exclude_target_task) {
    std::erase_if(pool, [](const TaskDefinition& t) { return t.id == TaskId::K5; });
  }
  return pool;
}

SourceConfig SourceConfig::defaults(std::uint64_t seed, std::size_t dimension) {
  if (dimension < 2) throw ConfigError("source dimension must be at least 2");
  SourceConfig c;
  c.dimension = dimension;
  c.seed = seed;
  c.sigma = 1.0;
  // mu1 and mu2 sit 0.5 either side of an axis at distance sqrt(9 - 0.25) from mu0.
  const double along = std::sqrt(9.0 - 0.25);
  for (auto& m : c.means) m.assign(dimension, 0.0);
  c.means[1][0] = along;
  c.means[1][1] = -0.5;
  c.means[2][0] = along;
  c.means[2][1] = 0.5;
  return c;
}

void SourceConfig::validate() const {
  if (dimension == 0) throw ConfigError("source dimension must be positive");
  if (!(sigma > 0.0)) throw ConfigError("source sigma must be positive");
  for (const auto& m : means) {
    if (m.size() != dimension) throw ConfigError("class mean has wrong dimension");
  }
  if (means[0] == means[1] || means[0] == means[2] || means[1] == means[2]) {
    throw ConfigError("class means must be pairwise distinct");
  }
  if (std::any_of(split_weights.begin(), split_weights.end(), [](double w) { return !(w > 0.0); })) {
    throw ConfigError("split weights must be positive");
  }
}

std::array<std::size_t, 3> split_sizes(std::size_t n_subjects, const std::array<double, 3>& weights) {
  if (n_subjects < 6) throw ConfigError("need at least 6 subjects to populate three splits");
  const double total = weights[0] + weights[1] + weights[2];
  auto share = [&](double w) {
    const auto n = static_cast<std::size_t>(std::llround(static_cast<double>(n_subjects) * w / total));
    return std::max<std::size_t>(n, 2);
  };
  std::size_t train = share(weights[0]);
  std::size_t validation = share(weights[1]);
  while (train + validation + 2 > n_subjects) {
    if (train >= validation && train > 2) --train; else --validation;
  }
  return {train, validation, n_subjects - train - validation};
}

SplitDataset generate_source(const SourceConfig& config, std::size_t n_subjects,
                             std::size_t samples_per_subject) {
  config.validate();
  if (samples_per_subject == 0) throw ConfigError("samples_per_subject must be positive");
  const auto sizes = split_sizes(n_subjects, config.split_weights);

  std::mt19937_64 rng(config.seed);
  std::vector<std::int64_t> order(n_subjects);
  for (std::size_t i = 0; i < n_subjects; ++i) order[i] = static_cast<std::int64_t>(i);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> split_of(n_subjects);
  for (std::size_t i = 0; i < n_subjects; ++i) {
    split_of[static_cast<std::size_t>(order[i])] = i < sizes[0] ? 0 : (i < sizes[0] + sizes[1] ? 1 : 2);
  }

  std::bernoulli_distribution malignant_lesion(0.5);
  std::discrete_distribution<int> other_breast({0.5, 0.25, 0.25});
  std::normal_distribution<double> noise(0.0, 1.0);

  SplitDataset data;
  std::array<std::vector<SourceSample>*, 3> targets{&data.train, &data.validation, &data.test};
  for (std::size_t s = 0; s < n_subjects; ++s) {
    for (std::size_t k = 0; k < samples_per_subject; ++k) {
      SourceSample sample;
      sample.subject_id = static_cast<std::int64_t>(s);
      if (k == 0) {
        sample.finding = malignant_lesion(rng) ? Finding::Malignant : Finding::Benign;
      } else {
        sample.finding = static_cast<Finding>(other_breast(rng));
      }
      const auto& mean = config.means[static_cast<std::size_t>(sample.finding)];
      sample.features.resize(config.dimension);
      for (std::size_t d = 0; d < config.dimension; ++d) {
        sample.features[d] = mean[d] + config.sigma * noise(rng);
      }
      targets[static_cast<std::size_t>(split_of[s])]->push_back(std::move(sample));
    }
  }
  return data;
}

Batch map_labels(const TaskDefinition& task, std::span<const SourceSample> samples) {
  std::vector<const SourceSample*> kept;
  for (const auto& s : samples) {
    if (task.includes(s.finding)) kept.push_back(&s);
  }
  const std::size_t dim = samples.empty() ? 0 : samples.front().features.size();
  Batch b;
  b.inputs = Matrix(kept.size(), dim);
  b.labels.reserve(kept.size());
  for (std::size_t r = 0; r < kept.size(); ++r) {
    if (kept[r]->features.size() != dim) throw DimensionError("samples have mixed feature dimensions");
    std::copy(kept[r]->features.begin(), kept[r]->features.end(), b.inputs.row(r).begin());
    b.labels.push_back(task.is_positive(kept[r]->finding) ? 1 : 0);
  }
  return b;
}

namespace {

struct Eligible {
  const SourceSample* sample;
  int label;
};

Batch to_batch(const std::vector<Eligible>& chosen) {
  const std::size_t dim = chosen.front().sample->features.size();
  Batch b;
  b.inputs = Matrix(chosen.size(), dim);
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    std::copy(chosen[r].sample->features.begin(), chosen[r].sample->features.end(),
              b.inputs.row(r).begin());
    b.labels.push_back(chosen[r].label);
  }
  return b;
}

// Picks n entries from candidates (already in random order) with at least one
// of each label; preserves candidate order in the result.
bool stratified_pick(const std::vector<std::size_t>& candidates, const std::vector<Eligible>& pool,
                     std::size_t n, std::vector<std::size_t>& picked) {
  picked.clear();
  if (candidates.size() < n) return false;
  std::vector<bool> take(candidates.size(), false);
  std::size_t count = 0;
  for (int label : {1, 0}) {
    auto it = std::find_if(candidates.begin(), candidates.end(),
                           [&](std::size_t c) { return pool[c].label == label; });
    if (it == candidates.end()) return false;
    take[static_cast<std::size_t>(it - candidates.begin())] = true;
    ++count;
  }
  for (std::size_t i = 0; i < candidates.size() && count < n; ++i) {
    if (!take[i]) {
      take[i] = true;
      ++count;
    }
  }
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (take[i]) picked.push_back(candidates[i]);
  }
  return true;
}

}  // namespace

Episode sample_episode(const TaskDefinition& task, std::span<const SourceSample> pool,
                       std::size_t n_tr, std::size_t n_val, std::mt19937_64& rng) {
  if (n_tr < 2 || n_val < 2) {
    throw ConfigError("support and query sizes must be at least 2 for a stratified episode");
  }
  std::vector<Eligible> eligible;
  std::size_t positives = 0;
  for (const auto& s : pool) {
    if (!task.includes(s.finding)) continue;
    const int label = task.is_positive(s.finding) ? 1 : 0;
    positives += static_cast<std::size_t>(label);
    eligible.push_back({&s, label});
  }
  const std::size_t negatives = eligible.size() - positives;
  const std::string where = "pool exhausted for task " + std::string(to_string(task.id));
  if (eligible.size() < n_tr + n_val || positives < 2 || negatives < 2) {
    throw PoolExhaustedError(where + ": " + std::to_string(positives) + " positive, " +
                             std::to_string(negatives) + " negative eligible samples for " +
                             std::to_string(n_tr) + "+" + std::to_string(n_val));
  }

  // The greedy split can fail for an unlucky order even when a valid episode
  // exists, so retry with fresh shuffles before giving up.
  constexpr int kAttempts = 32;
  std::vector<std::size_t> order(eligible.size());
  std::vector<std::size_t> support, query, rest;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    if (!stratified_pick(order, eligible, n_tr, support)) continue;

    std::set<std::int64_t> used;
    for (std::size_t i : support) used.insert(eligible[i].sample->subject_id);
    rest.clear();
    for (std::size_t i : order) {
      if (!used.contains(eligible[i].sample->subject_id)) rest.push_back(i);
    }
    if (!stratified_pick(rest, eligible, n_val, query)) continue;

    Episode ep;
    ep.task = task;
    std::vector<Eligible> s_rows, q_rows;
    for (std::size_t i : support) {
      s_rows.push_back(eligible[i]);
      ep.support_subjects.push_back(eligible[i].sample->subject_id);
    }
    for (std::size_t i : query) {
      q_rows.push_back(eligible[i]);
      ep.query_subjects.push_back(eligible[i].sample->subject_id);
    }
    ep.support = to_batch(s_rows);
    ep.query = to_batch(q_rows);
    return ep;
  }
  throw PoolExhaustedError(where + ": no subject-disjoint stratified split found");
}

void write_dataset(std::ostream& out, const SplitDataset& data) {
  std::size_t dim = 0;
  for (const auto* split : {&data.train, &data.validation, &data.test}) {
    if (!split->empty()) {
      dim = split->front().features.size();
      break;
    }
  }
  out << "split,subject_id,class";
  for (std::size_t d = 0; d < dim; ++d) out << ",x" << d;
  out << '\n';
  const std::array<const std::vector<SourceSample>*, 3> splits{&data.train, &data.validation, &data.test};
  for (std::size_t k = 0; k < 3; ++k) {
    for (const auto& s : *splits[k]) {
      out << kSplitNames[k] << ',' << s.subject_id << ',' << static_cast<int>(s.finding);
      for (double v : s.features) out << ',' << text::format_double(v);
      out << '\n';
    }
  }
}

SplitDataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset: missing header");
  const auto header = text::split(line, ',');
  if (header.size() < 3 || header[0] != "split" || header[1] != "subject_id" || header[2] != "class") {
    throw FormatError("dataset: bad header");
  }
  const std::size_t dim = header.size() - 3;
  SplitDataset data;
  std::array<std::vector<SourceSample>*, 3> targets{&data.train, &data.validation, &data.test};
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = text::split(line, ',');
    if (fields.size() != dim + 3) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": expected " +
                        std::to_string(dim + 3) + " fields");
    }
    auto split_it = std::find(kSplitNames.begin(), kSplitNames.end(), fields[0]);
    if (split_it == kSplitNames.end()) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": unknown split");
    }
    SourceSample s;
    s.subject_id = text::parse_int(fields[1]);
    const long long cls = text::parse_int(fields[2]);
    if (cls < 0 || cls > 2 || s.subject_id < 0) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": bad class or subject");
    }
    s.finding = static_cast<Finding>(cls);
    s.features.reserve(dim);
    for (std::size_t d = 0; d < dim; ++d) s.features.push_back(text::parse_double(fields[3 + d]));
    targets[static_cast<std::size_t>(split_it - kSplitNames.begin())]->push_back(std::move(s));
  }
  return data;
}

}  // namespace bsml
