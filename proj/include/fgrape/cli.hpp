// SPDX-License-Identifier: Apache-2.0
#pragma once

// Batch front end: config parsing, run orchestration and artifact emission.
// Everything here is callable in-process (the tests drive it through string
// streams); the installed binary is a thin main() over main_entry.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace fgrape::cli {

enum class Mode { Train, Eval, ExtractTree, GradCheck };

struct RunConfig {
  Mode mode = Mode::Train;
  std::string task;
  std::map<std::string, std::string> overrides;  // forwarded into build_task
  std::uint64_t seed = 0;
  bool has_seed = false;  // the seed key is mandatory, 0 is a legal value
  std::size_t batch = 32;
  std::size_t iterations = 2000;
  std::size_t restarts = 1;  // best-of-K seed selection; restart k runs seed+k
  double learning_rate = 0.01;
  double lr_decay = 1.0;
  bool use_baseline = false;
  double baseline_alpha = 0.1;
  double discount = 1.0;
  std::string out_dir = "out";
  std::size_t workers = 0;  // 0 picks the hardware thread count
  bool deterministic = false;
  std::size_t rollouts = 1000;  // eval and tree-extraction sample size
  bool exact = false;           // enumerate instead of sampling where possible
  std::string strategy_file;    // frozen strategy input (eval, extract-tree)
  bool emit_curve = true;
  bool emit_strategy = true;
  bool emit_tree = false;
  bool emit_wigner = false;
};

// JSON object text -> resolved config; "key=value" entries of `sets` splice on
// top in order. Keys the run schema does not know but the task catalog does
// pass through to build_task; anything else fails with a near-miss
// suggestion. A missing seed fails: every run pins its stream explicitly.
RunConfig parse_config(const std::string& json_text, const std::vector<std::string>& sets = {});

// Reads the file at `path` and defers to parse_config.
RunConfig load_config(const std::string& path, const std::vector<std::string>& sets = {});

// Executes one run per cfg.mode, writing artifacts under cfg.out_dir
// (curve.csv, strategy.json, tree.json, wigner_final.csv as configured) and a
// summary to `out`. Returns a process exit status; diagnostics go to `err`.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// argv front end with the train | eval | extract-tree | grad-check
// subcommands. Usage problems return a nonzero status with help text on err.
int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fgrape::cli
