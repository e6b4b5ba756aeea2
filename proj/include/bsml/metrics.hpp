#pragma once

#include <span>
#include <vector>

namespace bsml {

struct ScoredLabels {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Trapezoidal area under the ROC curve. Tied scores are swept as one
// threshold step, which is the same as counting a tied positive/negative
// pair as one half. Throws DegenerateAucError when either class is missing.
double compute_auc(std::span<const double> scores, std::span<const int> labels);
inline double compute_auc(const ScoredLabels& data) { return compute_auc(data.scores, data.labels); }

// AUC improvement produced by adapting a task, in [-1, 1].
class Observation {
 public:
  Observation() = default;
  explicit Observation(double value);
  double value() const { return value_; }

 private:
  double value_ = 0.0;
};

// Change in a task's observation since it was last sampled, in [-2, 2].
class Reward {
 public:
  Reward() = default;
  explicit Reward(double value);
  double value() const { return value_; }

 private:
  double value_ = 0.0;
};

// Throws ConfigError when either AUC is outside [0, 1].
Observation observation(double auc_after, double auc_before);
Reward reward(Observation current, Observation previous);

}  // namespace bsml
