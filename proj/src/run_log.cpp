#include "bsml/run_log.hpp"

#include <openssl/evp.h>

#include <array>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>

#include "bsml/errors.hpp"
#include "bsml/text_io.hpp"

namespace bsml {

namespace {

constexpr std::string_view kHeader =
    "iteration\tsampler\ttasks\tauc_before\tauc_after\tobservation\treward\tmeta_grad_norm";

void write_list(std::ostream& out, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out << ',';
    out << text::format_double(values[i]);
  }
}

std::vector<double> parse_list(std::string_view field, std::size_t expected, std::size_t line_no) {
  std::vector<double> values;
  if (!field.empty()) {
    for (auto part : text::split(field, ',')) values.push_back(text::parse_double(part));
  }
  if (values.size() != expected) {
    throw FormatError("run log line " + std::to_string(line_no) + ": list has " +
                      std::to_string(values.size()) + " entries, expected " + std::to_string(expected));
  }
  return values;
}

}  // namespace

void write_run_log(std::ostream& out, const RunLog& log) {
  out << kHeader << '\n';
  for (const auto& r : log.records) {
    out << r.iteration << '\t' << to_string(r.sampler) << '\t';
    for (std::size_t i = 0; i < r.tasks.size(); ++i) {
      if (i > 0) out << ',';
      out << to_string(r.tasks[i]);
    }
    out << '\t';
    write_list(out, r.auc_before);
    out << '\t';
    write_list(out, r.auc_after);
    out << '\t';
    write_list(out, r.observation);
    out << '\t';
    write_list(out, r.reward);
    out << '\t' << text::format_double(r.meta_grad_norm) << '\n';
  }
}

std::string to_text(const RunLog& log) {
  std::ostringstream out;
  write_run_log(out, log);
  return out.str();
}

RunLog parse_run_log(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw FormatError("run log: missing or wrong header");
  RunLog log;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto fields = text::split(line, '\t');
      if (fields.size() != 8) throw FormatError("expected 8 columns");
      MetaUpdateRecord r;
      const long long it = text::parse_int(fields[0]);
      if (it < 0) throw FormatError("negative iteration");
      r.iteration = static_cast<std::size_t>(it);
      r.sampler = parse_sampler_kind(fields[1]);
      if (!fields[2].empty()) {
        for (auto name : text::split(fields[2], ',')) r.tasks.push_back(parse_task_id(name));
      }
      const std::size_t n = r.tasks.size();
      r.auc_before = parse_list(fields[3], n, line_no);
      r.auc_after = parse_list(fields[4], n, line_no);
      r.observation = parse_list(fields[5], n, line_no);
      r.reward = parse_list(fields[6], n, line_no);
      r.meta_grad_norm = text::parse_double(fields[7]);
      log.records.push_back(std::move(r));
    } catch (const FormatError& e) {
      throw FormatError("run log line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw FormatError("run log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return hex;
}

}  // namespace bsml
