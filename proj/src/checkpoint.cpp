#include "bsml/checkpoint.hpp"

#include <fstream>

#include "bsml/errors.hpp"
#include "bsml/text_io.hpp"

namespace bsml {

void write_checkpoint(std::ostream& out, const TrainedModel& model) {
  nlohmann::json params = nlohmann::json::array();
  for (double v : model.params) params.push_back(text::format_hex(v));
  const nlohmann::json doc = {
      {"format", "bsml-checkpoint"},
      {"version", 1},
      {"architecture",
       {{"layer_widths", model.arch.layer_widths},
        {"activation", std::string(to_string(model.arch.activation))}}},
      {"parameter_count", model.params.size()},
      {"parameters", params},
      {"provenance",
       {{"stage", model.provenance.stage},
        {"config", model.provenance.config},
        {"seed", model.provenance.seed},
        {"log_hash", model.provenance.log_hash}}},
  };
  out << doc.dump(2) << '\n';
}

TrainedModel read_checkpoint(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  try {
    if (doc.at("format") != "bsml-checkpoint" || doc.at("version") != 1) {
      throw FormatError("checkpoint: unsupported format or version");
    }
    TrainedModel m;
    m.arch.layer_widths = doc.at("architecture").at("layer_widths").get<std::vector<std::size_t>>();
    m.arch.activation = parse_activation(doc.at("architecture").at("activation").get<std::string>());
    m.arch.validate();
    std::vector<double> values;
    for (const auto& v : doc.at("parameters")) values.push_back(text::parse_hex(v.get<std::string>()));
    m.params = ParamVector(std::move(values));
    if (m.params.size() != m.arch.param_count() ||
        m.params.size() != doc.at("parameter_count").get<std::size_t>()) {
      throw FormatError("checkpoint: parameter count does not match architecture");
    }
    const auto& prov = doc.at("provenance");
    m.provenance.stage = prov.at("stage").get<std::string>();
    m.provenance.config = prov.at("config");
    m.provenance.seed = prov.at("seed").get<std::uint64_t>();
    m.provenance.log_hash = prov.at("log_hash").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(out, model);
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_checkpoint(in);
}

}  // namespace bsml
