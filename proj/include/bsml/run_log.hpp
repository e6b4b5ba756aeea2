#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "bsml/samplers.hpp"
#include "bsml/tasks.hpp"

namespace bsml {

// One row per meta-update. Per-slot fields are parallel to `tasks`.
struct MetaUpdateRecord {
  std::size_t iteration = 0;
  SamplerKind sampler = SamplerKind::Random;
  std::vector<TaskId> tasks;
  std::vector<double> auc_before;
  std::vector<double> auc_after;
  std::vector<double> observation;
  std::vector<double> reward;
  double meta_grad_norm = 0.0;

  friend bool operator==(const MetaUpdateRecord&, const MetaUpdateRecord&) = default;
};

struct RunLog {
  std::vector<MetaUpdateRecord> records;

  friend bool operator==(const RunLog&, const RunLog&) = default;
};

// Tab-separated with a header row; list-valued columns are comma-joined and
// numbers use shortest round-trip decimals.
//
//   iteration sampler tasks auc_before auc_after observation reward meta_grad_norm
void write_run_log(std::ostream& out, const RunLog& log);
std::string to_text(const RunLog& log);
// Throws FormatError on a wrong header, column count, list length mismatch
// or unparseable value.
RunLog parse_run_log(std::istream& in);

// SHA-1 over "blob <size>\0<content>", hex-encoded (what `git hash-object` prints).
std::string git_blob_hash(std::string_view content);

}  // namespace bsml
