// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "fgrape/analysis.hpp"
#include "fgrape/cli.hpp"
#include "fgrape/controllers.hpp"
#include "fgrape/tasks.hpp"

using namespace fgrape;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(bool(f));
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& leaf) {
  const fs::path d = fs::temp_directory_path() / "fgrape_cli_tests" / leaf;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string fixed(double v, const char* spec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// analytic purification strategy for the task's own controller, as a file
fs::path write_analytic_strategy(const fs::path& dir, std::size_t j_meas) {
  const auto task =
      tasks::build_task("purification", {{"measurements", std::to_string(j_meas)}});
  const auto [ctl, theta0] = controllers::controller_init(task.controller, 1);
  const auto theta = tasks::analytic_purification_strategy(j_meas, ctl);
  const fs::path p = dir / "strategy.json";
  std::ofstream f(p, std::ios::binary);
  f << controllers::export_strategy(ctl, theta);
  REQUIRE(f.good());
  return p;
}

}  // namespace

TEST_CASE("config: minimal document resolves defaults") {
  const auto rc = cli::parse_config(R"({"task": "purification", "seed": 1})");
  CHECK(rc.task == "purification");
  CHECK(rc.seed == 1);
  CHECK(rc.has_seed);
  CHECK(rc.batch == 32);
  CHECK(rc.iterations == 2000);
  CHECK(rc.restarts == 1);
  CHECK(rc.learning_rate == 0.01);
  CHECK(rc.out_dir == "out");
  CHECK(rc.rollouts == 1000);
  CHECK(rc.emit_curve);
  CHECK(rc.emit_strategy);
  CHECK_FALSE(rc.emit_tree);
  CHECK_FALSE(rc.emit_wigner);
  CHECK(rc.overrides.empty());

  // and the task the config names resolves to its own catalog defaults
  const auto task = tasks::build_task(rc.task, rc.overrides);
  CHECK(task.initial.nbar == 2.0);
  std::size_t measures = 0;
  for (const auto& e : task.plan)
    if (e.kind == tasks::PlanElem::Kind::Measure) ++measures;
  CHECK(measures == 4);
}

TEST_CASE("config: inline sets splice over the document in order") {
  const auto rc = cli::parse_config(
      R"({"task": "purification", "seed": 1, "learning_rate": 0.3})",
      {"seed=9", "learning_rate=0.2", "nbar=0.5", "emit_tree=true", "out=artifacts",
       "controller=dense"});
  CHECK(rc.seed == 9);
  CHECK(rc.learning_rate == 0.2);
  CHECK(rc.out_dir == "artifacts");
  CHECK(rc.emit_tree);
  CHECK(rc.overrides.at("nbar") == "0.5");
  CHECK(rc.overrides.at("controller") == "dense");
}

TEST_CASE("config: unknown keys fail with near-miss suggestions") {
  CHECK_THROWS_WITH_AS(cli::parse_config(R"({"task": "purification", "seed": 1, "lr": 0.1})"),
                       "config: unknown key 'lr'; did you mean 'learning_rate'?", ConfigError);
  CHECK_THROWS_WITH_AS(
      cli::parse_config(R"({"task": "purification", "seed": 1, "iteratons": 5})"),
      "config: unknown key 'iteratons'; did you mean 'iterations'?", ConfigError);
  CHECK_THROWS_WITH_AS(cli::parse_config(R"({"seed": 1, "iters": 5})"),
                       "config: unknown key 'iters'; did you mean 'iterations'?", ConfigError);
  CHECK_THROWS_WITH_AS(cli::parse_config(R"({"seed": 1, "zzzz": 5})"),
                       "config: unknown key 'zzzz'", ConfigError);
}

TEST_CASE("config: malformed input, types and the mandatory seed") {
  CHECK_THROWS_AS(cli::parse_config("{"), ConfigError);
  CHECK_THROWS_AS(cli::parse_config("[1, 2]"), ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"task": "purification"})"), ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"seed": "abc"})"), ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"seed": -3})"), ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"seed": 1, "restarts": 0})"), ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"seed": 1, "use_baseline": "maybe"})"), ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"seed": 1})", {"learning_rate"}), ConfigError);
  CHECK_THROWS_AS(cli::parse_config(R"({"seed": 1})", {"=0.1"}), ConfigError);
  // seed may arrive through a set entry
  const auto rc = cli::parse_config("{}", {"seed=4", "task=purification"});
  CHECK(rc.seed == 4);
  CHECK(rc.task == "purification");
}

TEST_CASE("config: task overrides reach the built task") {
  const auto rc = cli::parse_config(
      R"({"task": "stabilize_jc", "seed": 1, "kappa_tm": 0.07, "horizon": 2, "cutoff": 6})");
  const auto task = tasks::build_task(rc.task, rc.overrides);
  bool found = false;
  for (const auto& e : task.plan)
    if (e.kind == tasks::PlanElem::Kind::Dissipate) {
      CHECK(e.diss.kappa_t == 0.07);
      found = true;
      break;
    }
  CHECK(found);

  // the catalog default matches the published operating point
  const auto base = tasks::build_task("stabilize_jc", {});
  for (const auto& e : base.plan)
    if (e.kind == tasks::PlanElem::Kind::Dissipate) {
      CHECK(e.diss.kappa_t == 0.05);
      break;
    }
}

TEST_CASE("train run: artifacts, curve header and byte determinism") {
  const fs::path dir_a = fresh_dir("train_a");
  const fs::path dir_b = fresh_dir("train_b");
  auto rc = cli::parse_config(
      R"({"task": "purification", "seed": 3, "measurements": 2, "cutoff": 14,
          "nbar": 0.5, "iterations": 40, "learning_rate": 0.05,
          "emit_tree": true, "exact": true})");
  rc.mode = cli::Mode::Train;
  rc.out_dir = dir_a.string();

  std::ostringstream out, err;
  REQUIRE(cli::run(rc, out, err) == 0);
  CHECK(err.str().empty());
  CHECK(out.str().find("best mean return") != std::string::npos);
  CHECK(out.str().find("impurity") != std::string::npos);

  const std::string curve = slurp(dir_a / "curve.csv");
  CHECK(curve.rfind("iteration,mean_return,std_return,wall_ms\n", 0) == 0);
  CHECK(curve.find("\r") == std::string::npos);
  CHECK(curve.find(",") != std::string::npos);

  // the strategy file loads back as a controller
  const auto [ctl, theta] = controllers::import_strategy(slurp(dir_a / "strategy.json"));
  CHECK(theta.values.size() == 6);  // 3 binary-table nodes, 2 controls each

  // the tree file round-trips through the analysis loader byte for byte
  const std::string tree_text = slurp(dir_a / "tree.json");
  CHECK(analysis::tree_to_json(analysis::tree_from_json(tree_text)) == tree_text);

  // a second identical run emits identical bytes
  rc.out_dir = dir_b.string();
  std::ostringstream out2, err2;
  REQUIRE(cli::run(rc, out2, err2) == 0);
  CHECK(slurp(dir_b / "curve.csv") == curve);
  CHECK(slurp(dir_b / "strategy.json") == slurp(dir_a / "strategy.json"));
  CHECK(slurp(dir_b / "tree.json") == tree_text);
}

TEST_CASE("eval run: analytic purification impurity matches enumeration") {
  const fs::path dir = fresh_dir("eval");
  const fs::path strat = write_analytic_strategy(dir, 4);

  auto rc = cli::parse_config(R"({"task": "purification", "seed": 1, "exact": true})");
  rc.mode = cli::Mode::Eval;
  rc.strategy_file = strat.string();
  rc.out_dir = dir.string();

  std::ostringstream out, err;
  REQUIRE(cli::run(rc, out, err) == 0);

  // independent oracle: full 16-branch enumeration of the same frozen strategy
  const auto task = tasks::build_task("purification", {});
  const auto [ctl, theta] = controllers::import_strategy(slurp(strat));
  const double exact = tasks::exact_enumeration_return(task, ctl, theta.values).first;
  CHECK(out.str().find("exact mean return " + fixed(exact, "%.12f")) != std::string::npos);
  CHECK(out.str().find("impurity " + fixed(1.0 - exact, "%.9f")) != std::string::npos);

  // the sampled path agrees loosely and is invariant to the worker count
  rc.exact = false;
  rc.rollouts = 400;
  rc.workers = 1;
  std::ostringstream out1, err1;
  REQUIRE(cli::run(rc, out1, err1) == 0);
  rc.workers = 3;
  std::ostringstream out3, err3;
  REQUIRE(cli::run(rc, out3, err3) == 0);
  CHECK(out1.str() == out3.str());
  CHECK(out1.str().find("n=400") != std::string::npos);

  const std::string line = out1.str();
  const auto pos = line.find("mean return ");
  REQUIRE(pos != std::string::npos);
  const double sampled = std::stod(line.substr(pos + 12));
  CHECK(sampled == doctest::Approx(exact).epsilon(0.02));
}

TEST_CASE("extract-tree run: writes the canonical file and renders fractions") {
  const fs::path dir = fresh_dir("tree");
  const fs::path strat = write_analytic_strategy(dir, 4);

  auto rc = cli::parse_config(R"({"task": "purification", "seed": 1, "exact": true})");
  rc.mode = cli::Mode::ExtractTree;
  rc.strategy_file = strat.string();
  rc.out_dir = dir.string();

  std::ostringstream out, err;
  REQUIRE(cli::run(rc, out, err) == 0);
  CHECK(out.str().find("(root) p=1.0000") != std::string::npos);
  CHECK(out.str().find("~ (pi/2, 0)") != std::string::npos);
  CHECK(out.str().find("pi/8") != std::string::npos);  // level 3 of the halving sequence

  const std::string text = slurp(dir / "tree.json");
  const auto tree = analysis::tree_from_json(text);
  CHECK(tree.task == "purification");
  CHECK(analysis::tree_to_json(tree) == text);
}

TEST_CASE("grad-check run: every catalog task under tolerance") {
  auto rc = cli::parse_config(R"({"seed": 1})");
  rc.mode = cli::Mode::GradCheck;
  std::ostringstream out, err;
  REQUIRE(cli::run(rc, out, err) == 0);
  const std::string text = out.str();
  for (const char* name : {"open_loop_jc_prep", "purification", "feedback_prep_thermal",
                           "stabilize_jc", "stabilize_snap", "gkp_prep", "spin_uncertain"})
    CHECK(text.find(name) != std::string::npos);
  CHECK(text.find("over 7 tasks, tolerance 1e-06: OK") != std::string::npos);

  // restricting to one catalog entry still reports and passes
  rc.task = "spin_uncertain";
  std::ostringstream out1, err1;
  REQUIRE(cli::run(rc, out1, err1) == 0);
  CHECK(out1.str().find("over 1 task, tolerance 1e-06: OK") != std::string::npos);

  rc.task = "no_such_task";
  std::ostringstream out2, err2;
  CHECK(cli::run(rc, out2, err2) == 1);
  CHECK(err2.str().find("unknown task") != std::string::npos);
}

TEST_CASE("main_entry: subcommands, flags and usage errors") {
  auto call = [](std::vector<const char*> argv, std::string* out_text = nullptr,
                 std::string* err_text = nullptr) {
    argv.insert(argv.begin(), "fgrape");
    std::ostringstream out, err;
    const int rcode =
        cli::main_entry(static_cast<int>(argv.size()), argv.data(), out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return rcode;
  };

  std::string out, err;
  CHECK(call({"--help"}, &out) == 0);
  CHECK(out.find("train") != std::string::npos);
  CHECK(out.find("extract-tree") != std::string::npos);

  CHECK(call({}, &out, &err) != 0);             // a subcommand is required
  CHECK(call({"frobnicate"}, &out, &err) != 0); // unknown subcommand

  CHECK(call({"train", "--set", "task=purification"}, &out, &err) == 2);
  CHECK(err.find("missing seed") != std::string::npos);

  CHECK(call({"train", "--seed", "1", "--set", "lr=0.1"}, &out, &err) == 2);
  CHECK(err.find("did you mean 'learning_rate'") != std::string::npos);

  CHECK(call({"eval", "--seed", "1", "--set", "task=purification"}, &out, &err) == 2);
  CHECK(err.find("requires a frozen strategy file") != std::string::npos);

  CHECK(call({"extract-tree", "--seed", "1", "--set", "task=purification"}, &out, &err) == 2);
  CHECK(err.find("requires a frozen strategy file") != std::string::npos);

  CHECK(call({"train", "--seed", "1"}, &out, &err) == 1);  // no task named anywhere
  CHECK(err.find("missing task name") != std::string::npos);

  // a full tiny run through the argv front end, flags overriding the config
  const fs::path dir = fresh_dir("argv_train");
  const fs::path cfg = dir / "cfg.json";
  {
    std::ofstream f(cfg, std::ios::binary);
    f << R"({"task": "purification", "seed": 3, "measurements": 2, "cutoff": 14,
             "nbar": 0.5, "iterations": 10, "exact": true})";
  }
  const std::string cfg_s = cfg.string();
  const std::string out_s = (dir / "run").string();
  CHECK(call({"train", "--config", cfg_s.c_str(), "--out", out_s.c_str(), "--seed", "7"},
             &out, &err) == 0);
  CHECK(fs::exists(dir / "run" / "curve.csv"));
  CHECK(out.find("seed 7") != std::string::npos);

  const std::string strat = (dir / "run" / "strategy.json").string();
  CHECK(call({"eval", "--config", cfg_s.c_str(), "--strategy", strat.c_str(), "--exact",
              "--out", out_s.c_str()},
             &out, &err) == 0);
  CHECK(out.find("exact mean return") != std::string::npos);

  CHECK(call({"extract-tree", "--config", cfg_s.c_str(), "--strategy", strat.c_str(),
              "--set", "exact=false", "--rollouts", "50", "--out", out_s.c_str()},
             &out, &err) == 0);
  CHECK(out.find("(50 rollouts)") != std::string::npos);
  CHECK(fs::exists(dir / "run" / "tree.json"));
}
