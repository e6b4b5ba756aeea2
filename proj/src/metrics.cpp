#include "bsml/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bsml/errors.hpp"

namespace bsml {

double compute_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("compute_auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  std::size_t positives = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DimensionError("compute_auc: labels must be 0 or 1");
    positives += static_cast<std::size_t>(y);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw DegenerateAucError("degenerate AUC: need at least one positive and one negative label");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Walk thresholds from high to low; each group of tied scores moves the
  // ROC point diagonally and contributes one trapezoid. Counts stay integral
  // and the area is normalised once at the end.
  double area2 = 0.0;  // twice the unnormalised area
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t group_tp = 0, group_fp = 0;
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      if (labels[order[i]] == 1) ++group_tp; else ++group_fp;
    }
    area2 += static_cast<double>(group_fp) * static_cast<double>(2 * tp + group_tp);
    tp += group_tp;
    fp += group_fp;
  }
  return area2 / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

Observation::Observation(double value) : value_(value) {
  if (!(value >= -1.0 && value <= 1.0)) {
    throw ConfigError("observation " + std::to_string(value) + " outside [-1, 1]");
  }
}

Reward::Reward(double value) : value_(value) {
  if (!(value >= -2.0 && value <= 2.0)) {
    throw ConfigError("reward " + std::to_string(value) + " outside [-2, 2]");
  }
}

Observation observation(double auc_after, double auc_before) {
  auto in_range = [](double a) { return a >= 0.0 && a <= 1.0; };
  if (!in_range(auc_after) || !in_range(auc_before)) {
    throw ConfigError("observation: AUC values must lie in [0, 1]");
  }
  return Observation(auc_after - auc_before);
}

Reward reward(Observation current, Observation previous) {
  return Reward(current.value() - previous.value());
}

}  // namespace bsml
