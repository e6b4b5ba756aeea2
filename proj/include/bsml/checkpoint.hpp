#pragma once

#include <filesystem>
#include <iosfwd>

#include "bsml/meta.hpp"

namespace bsml {

// JSON document:
//   {"format": "bsml-checkpoint", "version": 1,
//    "architecture": {"layer_widths": [...], "activation": "relu"},
//    "parameter_count": N,
//    "parameters": ["0x1.2p-3", ...],          // hexadecimal floats, exact
//    "provenance": {"stage", "config", "seed", "log_hash"}}
void write_checkpoint(std::ostream& out, const TrainedModel& model);
TrainedModel read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace bsml
