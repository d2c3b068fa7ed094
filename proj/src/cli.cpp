// SPDX-License-Identifier: Apache-2.0
#include "fgrape/cli.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>
#include <utility>

#include "CLI11.hpp"
#include "fgrape/analysis.hpp"
#include "fgrape/controllers.hpp"
#include "fgrape/qcore.hpp"
#include "fgrape/tasks.hpp"
#include "fgrape/training.hpp"
#include "json.hpp"

namespace fgrape::cli {

using nlohmann::json;

namespace {

const char* const kRunKeys[] = {
    "task",          "seed",        "batch",       "iterations",     "restarts",
    "learning_rate", "lr_decay",    "use_baseline", "baseline_alpha", "discount",
    "out",           "workers",     "deterministic", "rollouts",      "exact",
    "strategy",      "emit_curve",  "emit_strategy", "emit_tree",     "emit_wigner"};

// Everything the task catalog understands; these pass through to build_task,
// which still rejects keys the selected task does not use.
const char* const kTaskKeys[] = {
    "cutoff",   "horizon",     "measurements", "nbar",   "target",    "substeps",
    "kappa_tm", "kappa_tc",    "n_snap",       "alpha",  "delta",     "gbar",
    "sigma",    "quad_nodes",  "enumeration",  "memoryless", "last_bias", "hidden",
    "controller"};

const std::pair<const char*, const char*> kAliases[] = {
    {"lr", "learning_rate"}, {"iters", "iterations"}, {"bs", "batch"}};

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({up + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

std::string suggest_key(const std::string& key) {
  for (const auto& [from, to] : kAliases)
    if (key == from) return to;
  std::string best;
  std::size_t best_d = 3;  // suggest only close misses
  for (const char* k : kRunKeys)
    if (const std::size_t d = edit_distance(key, k); d < best_d) best = k, best_d = d;
  for (const char* k : kTaskKeys)
    if (const std::size_t d = edit_distance(key, k); d < best_d) best = k, best_d = d;
  return best;
}

double parse_num(const std::string& key, const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0')
    throw ConfigError("config: key '" + key + "' expects a number, got '" + text + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  if (!text.empty() && text[0] == '-')
    throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" + text +
                      "'");
  char* end = nullptr;
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (end == text.c_str() || *end != '\0')
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + text + "'");
  return v;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
  return static_cast<std::size_t>(parse_u64(key, text));
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "on") return true;
  if (text == "0" || text == "false" || text == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + text + "'");
}

void apply_key(RunConfig& rc, const std::string& key, const std::string& text) {
  if (key == "task") { rc.task = text; return; }
  if (key == "seed") { rc.seed = parse_u64(key, text); rc.has_seed = true; return; }
  if (key == "batch") { rc.batch = parse_count(key, text); return; }
  if (key == "iterations") { rc.iterations = parse_count(key, text); return; }
  if (key == "restarts") {
    rc.restarts = parse_count(key, text);
    if (rc.restarts == 0) throw ConfigError("config: restarts must be positive");
    return;
  }
  if (key == "learning_rate") { rc.learning_rate = parse_num(key, text); return; }
  if (key == "lr_decay") { rc.lr_decay = parse_num(key, text); return; }
  if (key == "use_baseline") { rc.use_baseline = parse_bool(key, text); return; }
  if (key == "baseline_alpha") { rc.baseline_alpha = parse_num(key, text); return; }
  if (key == "discount") { rc.discount = parse_num(key, text); return; }
  if (key == "out") { rc.out_dir = text; return; }
  if (key == "workers") { rc.workers = parse_count(key, text); return; }
  if (key == "deterministic") { rc.deterministic = parse_bool(key, text); return; }
  if (key == "rollouts") { rc.rollouts = parse_count(key, text); return; }
  if (key == "exact") { rc.exact = parse_bool(key, text); return; }
  if (key == "strategy") { rc.strategy_file = text; return; }
  if (key == "emit_curve") { rc.emit_curve = parse_bool(key, text); return; }
  if (key == "emit_strategy") { rc.emit_strategy = parse_bool(key, text); return; }
  if (key == "emit_tree") { rc.emit_tree = parse_bool(key, text); return; }
  if (key == "emit_wigner") { rc.emit_wigner = parse_bool(key, text); return; }
  for (const char* k : kTaskKeys)
    if (key == k) {
      rc.overrides[key] = text;
      return;
    }
  const std::string near = suggest_key(key);
  if (near.empty()) throw ConfigError("config: unknown key '" + key + "'");
  throw ConfigError("config: unknown key '" + key + "'; did you mean '" + near + "'?");
}

std::string value_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);  // binary keeps LF endings everywhere
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
  f << text;
  if (!f.good()) throw ConfigError("write failed on '" + path + "'");
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

tasks::TaskSpec build_from(const RunConfig& rc) {
  if (rc.task.empty()) throw ConfigError("config: missing task name");
  return tasks::build_task(rc.task, rc.overrides);
}

std::size_t effective_workers(const RunConfig& rc) {
  if (rc.deterministic) return 1;
  if (rc.workers) return rc.workers;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

std::pair<controllers::Controller, controllers::ParameterVector> load_strategy(
    const RunConfig& rc) {
  return controllers::import_strategy(slurp(rc.strategy_file));
}

struct EvalResult {
  std::vector<double> returns;  // indexed by rollout, order-independent of workers
  qcore::ComplexMatrix state_sum;
};

EvalResult eval_rollouts(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                         const std::vector<double>& theta, std::size_t n, std::uint64_t seed,
                         std::size_t workers, bool want_state) {
  if (n == 0) throw ConfigError("eval: rollouts must be positive");
  EvalResult r;
  r.returns.assign(n, 0.0);
  const std::size_t dim = task.layout.dim();
  workers = std::clamp<std::size_t>(workers, 1, n);
  std::vector<qcore::ComplexMatrix> sums(workers);
  if (want_state)
    for (auto& m : sums) m = qcore::ComplexMatrix(dim, dim);
  std::vector<std::exception_ptr> errors(workers);

  auto body = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < n; i += workers) {
        Rng rng = Rng::for_stream(seed, i);
        training::ExecOptions opt;
        opt.training = false;
        if (task.uncertainty && task.uncertainty->quad_nodes == 0)
          opt.g = task.uncertainty->mean + task.uncertainty->std * rng.gauss();
        const training::Sampled s = training::run_trajectory(task, ctl, theta, rng, opt);
        r.returns[i] = s.traj.ret;
        if (want_state) sums[w] += s.traj.final_state;
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    body(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body, w);
    body(0);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
  if (want_state) {
    r.state_sum = qcore::ComplexMatrix(dim, dim);
    for (const auto& m : sums) r.state_sum += m;
  }
  return r;
}

qcore::DensityMatrix mean_final_cavity(const tasks::TaskSpec& task,
                                       const controllers::Controller& ctl,
                                       const std::vector<double>& theta, const RunConfig& rc) {
  const std::size_t dim = task.layout.dim();
  qcore::ComplexMatrix acc(dim, dim);
  if (rc.exact || task.enumeration) {
    double total = 0.0;
    for (const training::Sampled& s : training::enumerate_branches(task, ctl, theta)) {
      acc += s.traj.final_state * cxd(s.weight, 0.0);
      total += s.weight;
    }
    acc *= cxd(1.0 / total, 0.0);
  } else {
    const std::size_t n = std::min<std::size_t>(std::max<std::size_t>(rc.rollouts, 1), 512);
    const EvalResult er =
        eval_rollouts(task, ctl, theta, n, rc.seed, effective_workers(rc), true);
    acc = er.state_sum;
    acc *= cxd(1.0 / static_cast<double>(n), 0.0);
  }
  return qcore::trace_out_qubits(task.layout,
                                 qcore::DensityMatrix::from_unchecked(std::move(acc)));
}

void write_wigner_csv(const std::string& path, const qcore::WignerGrid& g) {
  std::string text =
      "# wigner quasiprobability; rows scan p top to bottom, columns scan x\n";
  char buf[48];
  text += "# x:";
  for (double x : g.xs) {
    std::snprintf(buf, sizeof buf, " %.10g", x);
    text += buf;
  }
  text += "\n# p:";
  for (double p : g.ps) {
    std::snprintf(buf, sizeof buf, " %.10g", p);
    text += buf;
  }
  text += "\n";
  for (std::size_t ip = 0; ip < g.ps.size(); ++ip) {
    for (std::size_t ix = 0; ix < g.xs.size(); ++ix) {
      std::snprintf(buf, sizeof buf, "%s%.12g", ix ? "," : "", g.at(ip, ix));
      text += buf;
    }
    text += "\n";
  }
  write_text_file(path, text);
}

void emit_wigner(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                 const std::vector<double>& theta, const RunConfig& rc) {
  const qcore::DensityMatrix cavity = mean_final_cavity(task, ctl, theta, rc);
  const double extent = 1.0 + std::sqrt(2.0 * static_cast<double>(task.layout.fock_cutoff));
  std::vector<double> axis(81);
  for (std::size_t i = 0; i < axis.size(); ++i)
    axis[i] = -extent + 2.0 * extent * static_cast<double>(i) / (axis.size() - 1.0);
  write_wigner_csv(rc.out_dir + "/wigner_final.csv", qcore::wigner_grid(cavity, axis, axis));
}

void print_complement(const tasks::TaskSpec& task, double mean, std::ostream& out) {
  switch (task.reward) {
    case tasks::RewardMode::FinalPurity:
      out << "impurity " << fmt("%.9f", 1.0 - mean) << "\n";
      break;
    case tasks::RewardMode::FinalFidelity:
    case tasks::RewardMode::MeanFidelity:
      out << "infidelity " << fmt("%.9f", 1.0 - mean) << "\n";
      break;
    default:
      break;
  }
}

int run_train(const RunConfig& rc, std::ostream& out) {
  const tasks::TaskSpec task = build_from(rc);
  training::TrainConfig tc;
  tc.iterations = rc.iterations;
  tc.batch_size = rc.batch;
  tc.learning_rate = rc.learning_rate;
  tc.lr_decay = rc.lr_decay;
  tc.use_baseline = rc.use_baseline;
  tc.baseline_alpha = rc.baseline_alpha;
  tc.discount = rc.discount;
  // artifacts stay byte-deterministic: wall_ms is zeroed in the curve and the
  // measured time goes to the summary line instead
  tc.deterministic = true;

  const auto t0 = std::chrono::steady_clock::now();
  std::optional<training::TrainResult> best;
  std::uint64_t best_seed = rc.seed;
  for (std::size_t k = 0; k < rc.restarts; ++k) {
    const std::uint64_t s = rc.seed + k;
    const auto [ctl, theta0] = controllers::controller_init(task.controller, s);
    tc.seed = s;
    training::TrainResult res = training::train(task, ctl, theta0, tc);
    if (!best || res.best_return > best->best_return) {
      best = std::move(res);
      best_seed = s;
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto [ctl, theta0] = controllers::controller_init(task.controller, best_seed);
  std::filesystem::create_directories(rc.out_dir);
  if (rc.emit_curve) training::write_curve_csv(rc.out_dir + "/curve.csv", best->curve);
  if (rc.emit_strategy)
    write_text_file(rc.out_dir + "/strategy.json",
                    controllers::export_strategy(ctl, best->best_theta));
  if (rc.emit_tree) {
    const analysis::DecisionTree tree = analysis::extract_tree(
        task, ctl, best->best_theta.values, rc.rollouts, rc.seed, rc.exact);
    write_text_file(rc.out_dir + "/tree.json", analysis::tree_to_json(tree));
  }
  if (rc.emit_wigner) emit_wigner(task, ctl, best->best_theta.values, rc);

  out << "task " << task.name << ": best mean return " << fmt("%.6f", best->best_return)
      << " at iteration " << best->best_iteration << " (seed " << best_seed << ", "
      << rc.restarts << " restart" << (rc.restarts == 1 ? "" : "s") << ", "
      << fmt("%.1f", secs) << "s)\n";
  print_complement(task, best->best_return, out);
  return 0;
}

int run_eval(const RunConfig& rc, std::ostream& out) {
  const auto [ctl, theta] = load_strategy(rc);
  const tasks::TaskSpec task = build_from(rc);
  double mean = 0.0;
  if (rc.exact) {
    mean = tasks::exact_enumeration_return(task, ctl, theta.values).first;
    out << "task " << task.name << ": exact mean return " << fmt("%.12f", mean) << "\n";
  } else {
    const EvalResult er = eval_rollouts(task, ctl, theta.values, rc.rollouts, rc.seed,
                                        effective_workers(rc), false);
    double sum = 0.0;
    for (double v : er.returns) sum += v;
    mean = sum / static_cast<double>(er.returns.size());
    double ss = 0.0;
    for (double v : er.returns) ss += (v - mean) * (v - mean);
    const double sd = er.returns.size() > 1
                          ? std::sqrt(ss / static_cast<double>(er.returns.size() - 1))
                          : 0.0;
    out << "task " << task.name << ": mean return " << fmt("%.6f", mean) << " (std "
        << fmt("%.6f", sd) << ", se "
        << fmt("%.6f", sd / std::sqrt(static_cast<double>(er.returns.size()))) << ", n="
        << er.returns.size() << ")\n";
  }
  print_complement(task, mean, out);
  if (rc.emit_wigner) {
    std::filesystem::create_directories(rc.out_dir);
    emit_wigner(task, ctl, theta.values, rc);
  }
  return 0;
}

int run_extract_tree(const RunConfig& rc, std::ostream& out) {
  const auto [ctl, theta] = load_strategy(rc);
  const tasks::TaskSpec task = build_from(rc);
  const analysis::DecisionTree tree = analysis::extract_tree(
      task, ctl, theta.values, rc.rollouts, rc.seed, rc.exact);
  std::filesystem::create_directories(rc.out_dir);
  write_text_file(rc.out_dir + "/tree.json", analysis::tree_to_json(tree));
  out << analysis::render_tree(tree);
  return 0;
}

// Tape gradient against central finite differences of the frozen-outcome
// scalar ret(theta) + sum_j A_j ln P_j(theta), with the outcome record and the
// coefficients A_j pinned to the base run; this is exactly the functional the
// surrogate differentiates.
double grad_check_task(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                       const std::vector<double>& theta, std::uint64_t seed) {
  Rng rng = Rng::for_stream(seed, 0);
  training::ExecOptions base_opt;
  base_opt.training = false;
  const training::Sampled base = training::run_trajectory(task, ctl, theta, rng, base_opt);
  const std::vector<double> grad = base.surrogate.gradient(base.tape);

  auto frozen = [&](const std::vector<double>& th) {
    Rng replay_rng = Rng::for_stream(seed, 0);
    training::ExecOptions opt;
    opt.training = false;
    opt.replay = &base.traj.draws;
    const training::Sampled s = training::run_trajectory(task, ctl, th, replay_rng, opt);
    double v = s.traj.ret;
    for (const auto& sc : base.surrogate.score_terms) {
      const std::size_t j = sc.meas_ordinal;
      v += sc.coeff * std::log(s.traj.meas_probs[j][base.traj.draws.discrete[j]]);
    }
    return v;
  };

  std::vector<double> th = theta;
  double max_diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < th.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta[i]));
    th[i] = theta[i] + h;
    const double up = frozen(th);
    th[i] = theta[i] - h;
    const double down = frozen(th);
    th[i] = theta[i];
    const double fd = (up - down) / (2.0 * h);
    max_diff = std::max(max_diff, std::abs(grad[i] - fd));
    scale = std::max({scale, std::abs(fd), std::abs(grad[i])});
  }
  return max_diff / std::max(scale, 1e-12);
}

struct TinyTask {
  const char* name;
  std::map<std::string, std::string> overrides;
};

std::vector<TinyTask> tiny_catalog() {
  return {
      {"open_loop_jc_prep", {{"cutoff", "6"}, {"horizon", "2"}}},
      {"purification", {{"cutoff", "8"}, {"measurements", "2"}, {"nbar", "0.2"}}},
      {"feedback_prep_thermal",
       {{"cutoff", "8"}, {"horizon", "2"}, {"nbar", "0.2"}, {"target", "sup:1,2"}}},
      {"stabilize_jc", {{"cutoff", "6"}, {"horizon", "2"}}},
      {"stabilize_snap",
       {{"cutoff", "8"}, {"horizon", "1"}, {"n_snap", "4"}, {"alpha", "0.7"},
        {"hidden", "8,8"}}},
      {"gkp_prep",
       {{"cutoff", "8"}, {"horizon", "2"}, {"n_snap", "3"}, {"hidden", "8,8"}}},
      {"spin_uncertain", {{"horizon", "2"}, {"quad_nodes", "5"}}},
  };
}

int run_grad_check(const RunConfig& rc, std::ostream& out) {
  double worst = 0.0;
  std::size_t ran = 0;
  std::uint64_t idx = 0;
  for (const TinyTask& tt : tiny_catalog()) {
    ++idx;
    if (!rc.task.empty() && rc.task != tt.name) continue;
    const tasks::TaskSpec task = tasks::build_task(tt.name, tt.overrides);
    const auto [ctl, theta] = controllers::controller_init(task.controller, rc.seed + idx);
    const double e = grad_check_task(task, ctl, theta.values, rc.seed + idx);
    char line[96];
    std::snprintf(line, sizeof line, "%-22s max rel err %.3e\n", tt.name, e);
    out << line;
    worst = std::max(worst, e);
    ++ran;
  }
  if (ran == 0) throw ConfigError("grad-check: unknown task '" + rc.task + "'");
  const bool ok = worst < 1e-6;
  out << "grad-check: max relative error " << fmt("%.3e", worst) << " over " << ran
      << " task" << (ran == 1 ? "" : "s") << ", tolerance 1e-06: " << (ok ? "OK" : "FAIL")
      << "\n";
  return ok ? 0 : 1;
}

}  // namespace

RunConfig parse_config(const std::string& json_text, const std::vector<std::string>& sets) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: malformed document: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  RunConfig rc;
  for (const auto& [key, val] : j.items()) apply_key(rc, key, value_text(val));
  for (const std::string& kv : sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("config: --set expects key=value, got '" + kv + "'");
    apply_key(rc, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!rc.has_seed) throw ConfigError("config: missing seed; every run pins one explicitly");
  return rc;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  return parse_config(slurp(path), sets);
}

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if ((cfg.mode == Mode::Eval || cfg.mode == Mode::ExtractTree) && cfg.strategy_file.empty()) {
    err << (cfg.mode == Mode::Eval ? "eval" : "extract-tree")
        << ": requires a frozen strategy file (--strategy PATH or config key \"strategy\")\n";
    return 2;
  }
  try {
    switch (cfg.mode) {
      case Mode::Train: return run_train(cfg, out);
      case Mode::Eval: return run_eval(cfg, out);
      case Mode::ExtractTree: return run_extract_tree(cfg, out);
      case Mode::GradCheck: return run_grad_check(cfg, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"feedback-driven quantum control optimization toolkit", "fgrape"};
  app.require_subcommand(1);

  std::string config_path, out_dir, strategy;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::size_t workers = 0, rollouts = 0;
  bool deterministic = false, exact = false;

  CLI::App* train = app.add_subcommand("train", "optimize a strategy and emit artifacts");
  CLI::App* eval = app.add_subcommand("eval", "roll out a frozen strategy");
  CLI::App* tree =
      app.add_subcommand("extract-tree", "tabulate a frozen strategy as a decision tree");
  CLI::App* check =
      app.add_subcommand("grad-check", "gradient self-test over the task catalog");
  for (CLI::App* s : {train, eval, tree, check}) {
    s->add_option("--config", config_path, "JSON config file");
    s->add_option("--set", sets, "override one config key (key=value, repeatable)");
    s->add_option("--seed", seed, "random stream seed (mandatory here or in the config)");
    s->add_option("--out", out_dir, "artifact output directory");
    s->add_option("--workers", workers, "worker threads for rollouts (0 = hardware)");
    s->add_flag("--deterministic", deterministic,
                "single worker, bytewise reproducible artifacts");
  }
  for (CLI::App* s : {eval, tree}) {
    s->add_option("--strategy", strategy, "frozen strategy file (strategy.json)");
    s->add_option("--rollouts", rollouts, "number of rollouts");
    s->add_flag("--exact", exact, "enumerate every branch instead of sampling");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  CLI::App* sub = app.get_subcommands().front();
  auto given = [&](const char* name) {
    const CLI::Option* o = sub->get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
  };
  RunConfig rc;
  try {
    std::vector<std::string> effective = sets;
    if (given("--seed")) effective.push_back("seed=" + std::to_string(seed));
    rc = given("--config") ? load_config(config_path, effective)
                           : parse_config("{}", effective);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  if (given("--out")) rc.out_dir = out_dir;
  if (given("--workers")) rc.workers = workers;
  if (deterministic) rc.deterministic = true;
  if (given("--rollouts")) rc.rollouts = rollouts;
  if (given("--strategy")) rc.strategy_file = strategy;
  if (exact) rc.exact = true;
  if (sub == train) rc.mode = Mode::Train;
  if (sub == eval) rc.mode = Mode::Eval;
  if (sub == tree) rc.mode = Mode::ExtractTree;
  if (sub == check) rc.mode = Mode::GradCheck;
  return run(rc, out, err);
}

}  // namespace fgrape::cli
