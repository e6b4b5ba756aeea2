#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "bsml/errors.hpp"
#include "bsml/harness.hpp"
#include "bsml/run_log.hpp"
#include "bsml/text_io.hpp"

using namespace bsml;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.hidden = {8};
  c.meta.meta_updates = 10;
  c.meta.inner_steps = 1;
  c.fine_tune.epochs = 5;
  c.multitask.iterations = 20;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bsml_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

MetaUpdateRecord record(std::size_t it, std::vector<TaskId> tasks) {
  MetaUpdateRecord r;
  r.iteration = it;
  r.sampler = SamplerKind::CL;
  const std::size_t n = tasks.size();
  r.tasks = std::move(tasks);
  r.auc_before.assign(n, 0.5);
  r.auc_after.assign(n, 0.625);
  r.observation.assign(n, 0.125);
  r.reward.assign(n, -0.25);
  r.meta_grad_norm = 1.5;
  return r;
}

}  // namespace

TEST_CASE("text helpers") {
  CHECK(text::format_double(0.1) == "0.1");
  CHECK(text::format_double(-2.0) == "-2");
  CHECK(text::format_hex(0.75) == "0x1.8p-1");
  CHECK(text::parse_hex("0x1.8p-1") == 0.75);
  CHECK(text::parse_hex("-0x1p+0") == -1.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(i % 40) - 20);
    REQUIRE(text::parse_double(text::format_double(v)) == v);
    REQUIRE(text::parse_hex(text::format_hex(v)) == v);
  }
  CHECK_THROWS_AS(text::parse_double("1.5x"), FormatError);
  CHECK_THROWS_AS(text::parse_int("12a"), FormatError);
  CHECK(text::split("a,,b", ',') == std::vector<std::string_view>{"a", "", "b"});
}

TEST_CASE("git blob hash matches git hash-object") {
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("run log text round-trips") {
  RunLog log;
  log.records.push_back(record(0, {TaskId::K1, TaskId::K5, TaskId::K1}));
  log.records.push_back(record(1, {TaskId::K3, TaskId::K2, TaskId::K4}));
  log.records[1].auc_after[2] = 1.0 / 3.0;
  std::stringstream s;
  write_run_log(s, log);
  CHECK(s.str() == to_text(log));
  CHECK(parse_run_log(s) == log);
}

TEST_CASE("run log parser rejects malformed text") {
  const std::string header = "iteration\tsampler\ttasks\tauc_before\tauc_after\tobservation\treward\tmeta_grad_norm\n";
  std::istringstream wrong_header("iteration\tsampler\n");
  CHECK_THROWS_AS(parse_run_log(wrong_header), FormatError);
  std::istringstream short_row(header + "0\tcl\tK1\t0.5\n");
  CHECK_THROWS_AS(parse_run_log(short_row), FormatError);
  std::istringstream ragged(header + "0\tcl\tK1,K2\t0.5\t0.6,0.7\t0.1,0.1\t0.1,0.1\t1\n");
  CHECK_THROWS_AS(parse_run_log(ragged), FormatError);
  std::istringstream bad_task(header + "0\tcl\tK9\t0.5\t0.6\t0.1\t0.1\t1\n");
  CHECK_THROWS_AS(parse_run_log(bad_task), FormatError);
}

TEST_CASE("experiment config JSON round trip") {
  auto c = tiny();
  c.hidden = {4, 6};
  c.activation = Activation::Tanh;
  c.meta.sampler = SamplerKind::MAB;
  const auto back = experiment_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.architecture().layer_widths == std::vector<std::size_t>{16, 4, 6, 2});
  CHECK(parse_model_kind(to_string(ModelKind::MultiTask)) == ModelKind::MultiTask);
}

TEST_CASE("run_pipeline is deterministic and writes its artifacts") {
  const auto dir = scratch("pipeline");
  const auto a = run_pipeline(tiny(), ModelKind::Meta, 4, dir);
  const auto b = run_pipeline(tiny(), ModelKind::Meta, 4);
  CHECK(a.test_auc == b.test_auc);
  CHECK(a.checkpoint_hash == b.checkpoint_hash);
  CHECK(a.log == b.log);
  CHECK(a.log.records.size() == 10);
  CHECK(git_blob_hash(slurp(dir / "checkpoint.json")) == a.checkpoint_hash);
  CHECK(git_blob_hash(slurp(dir / "run_log.tsv")) == a.log_hash);
  const auto result = nlohmann::json::parse(slurp(dir / "result.json"));
  CHECK(result.at("test_auc").get<double>() == a.test_auc);
  fs::remove_all(dir);
}

TEST_CASE("the plain baseline skips meta-training") {
  const auto dir = scratch("plain");
  const auto r = run_pipeline(tiny(), ModelKind::Plain, 4, dir);
  CHECK(r.log.records.empty());
  CHECK(r.log_hash.empty());
  CHECK_FALSE(fs::exists(dir / "run_log.tsv"));
  const auto m = run_pipeline(tiny(), ModelKind::MultiTask, 4);
  CHECK(m.log.records.empty());
  CHECK(m.test_auc >= 0.0);
  fs::remove_all(dir);
}

TEST_CASE("pipeline failures name the stage") {
  auto c = tiny();
  c.meta.n_tr = 200;
  try {
    run_pipeline(c, ModelKind::Meta, 1);
    FAIL("expected a StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "meta-train");
  }
  c = tiny();
  c.n_subjects = 3;
  try {
    run_pipeline(c, ModelKind::Plain, 1);
    FAIL("expected a StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "generate");
  }
}

TEST_CASE("default plan layout") {
  const auto plan = default_plan(tiny(), 10, "");
  REQUIRE(plan.variants.size() == 14);
  std::set<std::string> models;
  std::size_t invalid = 0;
  for (const auto& v : plan.variants) {
    models.insert(v.model);
    if (structurally_invalid(v)) {
      ++invalid;
      CHECK(v.meta.meta_batch_size == 3);
      CHECK(v.meta.sampler == SamplerKind::AllTask);
    }
    if (v.model == "BSML-NS") {
      CHECK(v.meta.exclude_target_task);
      CHECK(v.meta.meta_batch_size == 4);
    }
  }
  CHECK(invalid == 1);
  CHECK(models == std::set<std::string>{"BSML", "BSML-NS", "Plain", "Multi-task"});
  CHECK_NOTHROW(plan.validate());

  auto dup = plan;
  dup.variants[1].label = dup.variants[0].label;
  CHECK_THROWS_AS(dup.validate(), ConfigError);
  auto none = plan;
  none.repetitions = 0;
  CHECK_THROWS_AS(none.validate(), ConfigError);
}

TEST_CASE("sweep aggregates, marks N/A and records failures per cell") {
  auto plan = default_plan(tiny(), 1, "");
  plan.variants.erase(std::remove_if(plan.variants.begin(), plan.variants.end(),
                                     [](const Variant& v) { return v.model == "BSML-NS"; }),
                      plan.variants.end());
  Variant broken = plan.variants.front();
  broken.label = "broken";
  broken.meta.n_tr = 500;
  plan.variants.push_back(broken);

  const auto table = run_sweep(plan);
  REQUIRE(table.cells.size() == plan.variants.size());
  for (const auto& c : table.cells) {
    if (c.label == "BSML-K3-alltask") {
      CHECK(c.status == CellStatus::NotApplicable);
      CHECK(c.aucs.empty());
    } else if (c.label == "broken") {
      CHECK(c.status == CellStatus::Failed);
      CHECK(c.message.find("meta-train") != std::string::npos);
    } else {
      CHECK(c.status == CellStatus::Ok);
      CHECK(c.aucs.size() == 1);
      CHECK(c.std == 0.0);
      CHECK(c.mean == c.aucs[0]);
    }
  }
  CHECK(table.find("Plain")->sampler == "-");
  CHECK(table.find("missing") == nullptr);
}

TEST_CASE("single-variant plan gives a single cell with sample std") {
  ExperimentPlan plan;
  plan.base = tiny();
  plan.repetitions = 3;
  plan.variants.push_back({"only", "Plain", ModelKind::Plain, plan.base.meta});
  const auto table = run_sweep(plan);
  REQUIRE(table.cells.size() == 1);
  const auto& c = table.cells[0];
  REQUIRE(c.aucs.size() == 3);
  const double mean = (c.aucs[0] + c.aucs[1] + c.aucs[2]) / 3.0;
  double ss = 0.0;
  for (double a : c.aucs) ss += (a - mean) * (a - mean);
  CHECK(c.mean == doctest::Approx(mean).epsilon(1e-15));
  CHECK(c.std == doctest::Approx(std::sqrt(ss / 2.0)).epsilon(1e-12));
}

TEST_CASE("sweep results do not depend on variant order or worker count") {
  auto plan = default_plan(tiny(), 2, "");
  plan.variants.resize(6);
  const auto forward = run_sweep(plan);
  auto reversed = plan;
  std::reverse(reversed.variants.begin(), reversed.variants.end());
  reversed.workers = 3;
  const auto backward = run_sweep(reversed);
  for (const auto& c : forward.cells) {
    const auto* other = backward.find(c.label);
    REQUIRE(other != nullptr);
    CHECK(*other == c);
  }
}

TEST_CASE("sweep output files are reproducible") {
  auto plan = default_plan(tiny(), 1, scratch("sweep_a"));
  plan.variants.resize(4);
  auto again = plan;
  again.output_dir = scratch("sweep_b");
  again.workers = 2;
  const auto t1 = run_sweep(plan);
  const auto t2 = run_sweep(again);
  CHECK(t1 == t2);
  for (const char* f : {"results.json", "results.tsv", "results.txt"}) {
    CHECK(slurp(plan.output_dir / f) == slurp(again.output_dir / f));
  }
  const auto m1 = nlohmann::json::parse(slurp(plan.output_dir / "manifest.json"));
  const auto m2 = nlohmann::json::parse(slurp(again.output_dir / "manifest.json"));
  CHECK(m1.at("outputs") == m2.at("outputs"));
  CHECK(m1.at("outputs").contains("BSML-K3-random/seed_0/run_log.tsv"));
  CHECK(m1.dump().find(plan.output_dir.string()) == std::string::npos);
  CHECK(result_table_from_json(nlohmann::json::parse(slurp(plan.output_dir / "results.json"))) == t1);
  fs::remove_all(plan.output_dir);
  fs::remove_all(again.output_dir);
}

TEST_CASE("result table round-trips through JSON and renders N/A") {
  ResultTable t;
  t.cells.push_back({"BSML-K3-cl", "BSML", 3, "cl", CellStatus::Ok, 0.7, 0.01, {0.69, 0.71}, ""});
  t.cells.push_back({"BSML-K3-alltask", "BSML", 3, "alltask", CellStatus::NotApplicable, 0, 0, {}, ""});
  t.cells.push_back({"Plain", "Plain", 0, "-", CellStatus::Failed, 0, 0, {}, "fine-tune: boom"});
  t.cells[0].aucs[0] = 1.0 / 3.0;
  CHECK(result_table_from_json(nlohmann::json::parse(to_json(t).dump())) == t);
  CHECK_THROWS_AS(result_table_from_json(nlohmann::json::parse("{\"cells\": [{}]}")), FormatError);

  std::ostringstream txt, tsv;
  write_result_text(txt, t);
  write_result_tsv(tsv, t);
  CHECK(txt.str().find("N/A") != std::string::npos);
  CHECK(txt.str().find("failed") != std::string::npos);
  const std::string rows = tsv.str();
  CHECK(rows.rfind("label\tmodel\tmeta_batch\tsampler", 0) == 0);
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 4);
}

TEST_CASE("curves from an empty log are empty") {
  const auto c = emit_curves(RunLog{});
  CHECK(c.trajectories.empty());
  CHECK(c.histogram.empty());
}

TEST_CASE("histogram conserves selections and all-task is uniform") {
  auto c = tiny();
  c.meta.meta_updates = 250;
  c.meta.sampler = SamplerKind::AllTask;
  const auto log = meta_train(c.meta, c.architecture(), generate_source(SourceConfig::defaults(0), 117)).log;
  const auto curves = emit_curves(log, 100);
  REQUIRE(curves.histogram.size() == 3);
  CHECK(curves.histogram[2].window_start == 200);
  CHECK(curves.histogram[2].window_end == 250);
  for (const auto& row : curves.histogram) {
    std::size_t total = 0;
    for (auto n : row.counts) {
      total += n;
      CHECK(n == row.window_end - row.window_start);
    }
    CHECK(total == 5 * (row.window_end - row.window_start));
  }
  CHECK(curves.trajectories.size() == 250 * 5);
  for (std::size_t i = 1; i < curves.trajectories.size(); ++i) {
    const auto& a = curves.trajectories[i - 1];
    const auto& b = curves.trajectories[i];
    REQUIRE((a.task < b.task || (a.task == b.task && a.iteration < b.iteration)));
  }

  c.meta.sampler = SamplerKind::CL;
  c.meta.meta_batch_size = 3;
  const auto cl = emit_curves(meta_train(c.meta, c.architecture(), generate_source(SourceConfig::defaults(0), 117)).log, 50);
  for (const auto& row : cl.histogram) {
    std::size_t total = 0;
    for (auto n : row.counts) total += n;
    CHECK(total == 3 * 50);
  }
}

TEST_CASE("curves reject malformed logs") {
  RunLog ragged;
  ragged.records.push_back(record(0, {TaskId::K1, TaskId::K2}));
  ragged.records[0].reward.pop_back();
  CHECK_THROWS_AS(emit_curves(ragged), FormatError);
  RunLog gap;
  gap.records.push_back(record(0, {TaskId::K1}));
  gap.records.push_back(record(2, {TaskId::K1}));
  CHECK_THROWS_AS(emit_curves(gap), FormatError);
  CHECK_THROWS_AS(emit_curves(RunLog{}, 0), ConfigError);

  std::ostringstream traj, hist;
  RunLog ok;
  ok.records.push_back(record(0, {TaskId::K2}));
  const auto c = emit_curves(ok);
  write_trajectories(traj, c);
  write_histogram(hist, c);
  CHECK(traj.str() == "task\titeration\tauc_before\tauc_after\tobservation\treward\nK2\t0\t0.5\t0.625\t0.125\t-0.25\n");
  CHECK(hist.str() == "window_start\twindow_end\tK1\tK2\tK3\tK4\tK5\n0\t1\t0\t1\t0\t0\t0\n");
}
