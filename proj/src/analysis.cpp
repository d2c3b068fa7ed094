// SPDX-License-Identifier: Apache-2.0
#include "fgrape/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <utility>

#include "fgrape/training.hpp"
#include "json.hpp"

namespace fgrape::analysis {

using nlohmann::json;

namespace {

const char* kSchemaId = "fgrape-tree-v1";

// Emissions at one history must agree across visits this tightly, otherwise
// the controller reads something the outcome record does not determine (the
// state under a resampled coupling, say) and no tree exists.
constexpr double kVisitTol = 1e-9;

struct BuildNode {
  std::optional<std::vector<double>> controls;
  double visits = 0.0;
  std::map<int, BuildNode> children;
};

int outcome_label(double value) {
  const double r = std::round(value);
  if (std::abs(value - r) > 1e-9)
    throw ConfigError("extract_tree: non-integer outcome value cannot key a tree branch");
  return static_cast<int>(r);
}

void set_or_check(BuildNode& node, const std::vector<double>& emitted) {
  if (!node.controls) {
    node.controls = emitted;
    return;
  }
  bool same = node.controls->size() == emitted.size();
  if (same)
    for (std::size_t i = 0; i < emitted.size(); ++i)
      same = same && std::abs((*node.controls)[i] - emitted[i]) <= kVisitTol;
  if (!same)
    throw ConfigError(
        "extract_tree: controller emissions disagree across visits of one "
        "measurement history; the strategy is not a function of the outcomes");
}

// Folds one finished trajectory into the tree under construction. Emissions
// from several evaluations at the same history concatenate in plan order.
void absorb(BuildNode& root, const training::Trajectory& traj,
            const std::vector<std::size_t>& eval_hist, std::size_t n_meas, double weight) {
  std::vector<std::vector<double>> emitted(n_meas + 1);
  std::vector<char> has_emission(n_meas + 1, 0);
  for (std::size_t e = 0; e < eval_hist.size(); ++e) {
    std::vector<double>& dst = emitted[eval_hist[e]];
    dst.insert(dst.end(), traj.controls[e].begin(), traj.controls[e].end());
    has_emission[eval_hist[e]] = 1;
  }
  BuildNode* node = &root;
  for (std::size_t h = 0;; ++h) {
    node->visits += weight;
    if (has_emission[h]) set_or_check(*node, emitted[h]);
    if (h == n_meas) break;
    node = &node->children[outcome_label(traj.outcomes[h])];
  }
}

TreeNode finish(const BuildNode& b, double norm) {
  TreeNode t;
  if (b.controls) t.controls = *b.controls;
  t.rationalized.reserve(t.controls.size());
  for (double c : t.controls) t.rationalized.push_back(rationalize_pi(c));
  t.visit_probability = norm > 0.0 ? b.visits / norm : 0.0;
  for (const auto& [label, child] : b.children) t.children.emplace(label, finish(child, norm));
  return t;
}

json node_to_json(const TreeNode& n) {
  json j = json::object();
  if (!n.controls.empty()) j["controls"] = n.controls;
  bool any_fraction = false;
  for (const std::optional<PiFraction>& f : n.rationalized) any_fraction = any_fraction || f;
  if (any_fraction) {
    json fr = json::array();
    for (const std::optional<PiFraction>& f : n.rationalized) {
      if (f)
        fr.push_back({{"p", f->p}, {"q", f->q}});
      else
        fr.push_back(nullptr);
    }
    j["pi_fraction"] = std::move(fr);
  }
  j["visit_probability"] = n.visit_probability;
  if (!n.children.empty()) {
    json kids = json::object();
    char key[32];
    for (const auto& [label, child] : n.children) {
      std::snprintf(key, sizeof key, "%+d", label);
      kids[key] = node_to_json(child);
    }
    j["children"] = std::move(kids);
  }
  return j;
}

TreeNode node_from_json(const json& j) {
  TreeNode n;
  if (!j.is_object()) throw ConfigError("tree import: node is not an object");
  if (j.contains("controls")) n.controls = j.at("controls").get<std::vector<double>>();
  if (j.contains("pi_fraction")) {
    for (const json& f : j.at("pi_fraction")) {
      if (f.is_null())
        n.rationalized.push_back(std::nullopt);
      else
        n.rationalized.push_back(
            PiFraction{f.at("p").get<long long>(), f.at("q").get<std::size_t>()});
    }
  }
  n.visit_probability = j.value("visit_probability", 0.0);
  if (j.contains("children"))
    for (const auto& [key, child] : j.at("children").items()) {
      std::size_t used = 0;
      int label = 0;
      try {
        label = std::stoi(key, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != key.size())
        throw ConfigError("tree import: outcome key '" + key + "' is not an integer label");
      n.children.emplace(label, node_from_json(child));
    }
  return n;
}

std::string fraction_text(const PiFraction& f) {
  if (f.p == 0) return "0";
  std::string s = f.p < 0 ? "-" : "";
  const long long mag = std::llabs(f.p);
  if (mag != 1) s += std::to_string(mag);
  s += "pi";
  if (f.q != 1) s += "/" + std::to_string(f.q);
  return s;
}

void render_node(std::string& out, const TreeNode& n, const std::string& head,
                 std::size_t depth) {
  out.append(2 * depth, ' ');
  out += head;
  char buf[64];
  std::snprintf(buf, sizeof buf, " p=%.4f", n.visit_probability);
  out += buf;
  if (!n.controls.empty()) {
    out += " u=(";
    for (std::size_t i = 0; i < n.controls.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.6f", i ? ", " : "", n.controls[i]);
      out += buf;
    }
    out += ")";
    bool any_fraction = false;
    for (const std::optional<PiFraction>& f : n.rationalized) any_fraction = any_fraction || f;
    if (any_fraction) {
      out += " ~ (";
      for (std::size_t i = 0; i < n.rationalized.size(); ++i) {
        if (i) out += ", ";
        if (i < n.controls.size() && !n.rationalized[i]) {
          std::snprintf(buf, sizeof buf, "%.4g", n.controls[i]);
          out += buf;
        } else if (n.rationalized[i]) {
          out += fraction_text(*n.rationalized[i]);
        }
      }
      out += ")";
    }
  }
  out += "\n";
  // +1 ahead of -1, matching the exported key order
  for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) {
    std::snprintf(buf, sizeof buf, "%+d ->", it->first);
    render_node(out, it->second, buf, depth + 1);
  }
}

}  // namespace

DecisionTree extract_tree(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                          const std::vector<double>& theta, std::size_t n_rollouts,
                          std::uint64_t seed, bool exact) {
  std::vector<std::size_t> eval_hist;
  std::size_t n_meas = 0;
  for (const tasks::PlanElem& e : task.plan) {
    if (e.kind == tasks::PlanElem::Kind::MeasureContinuous)
      throw ConfigError("extract_tree: continuous outcomes cannot key a discrete tree");
    if (e.kind == tasks::PlanElem::Kind::ControlEval) eval_hist.push_back(n_meas);
    if (e.kind == tasks::PlanElem::Kind::Measure) ++n_meas;
  }

  DecisionTree tree;
  tree.task = task.name;
  BuildNode root;
  if (exact) {
    const std::vector<training::Sampled> branches = training::enumerate_branches(task, ctl, theta);
    for (const training::Sampled& s : branches) absorb(root, s.traj, eval_hist, n_meas, s.weight);
  } else {
    tree.rollouts = n_rollouts;
    for (std::size_t i = 0; i < n_rollouts; ++i) {
      Rng rng = Rng::for_stream(seed, i);
      training::ExecOptions opt;
      if (task.uncertainty && task.uncertainty->quad_nodes == 0)
        opt.g = task.uncertainty->mean + task.uncertainty->std * rng.gauss();
      const training::Sampled s = training::run_trajectory(task, ctl, theta, rng, opt);
      absorb(root, s.traj, eval_hist, n_meas, 1.0);
    }
  }
  tree.root = finish(root, root.visits);
  return tree;
}

std::optional<PiFraction> rationalize_pi(double x, std::size_t max_den, double tol) {
  if (!std::isfinite(x)) return std::nullopt;
  if (tol < 0.0) tol = 0.01 * kPi;
  for (std::size_t q = 1; q != 0 && q <= max_den; q <<= 1) {
    const double scaled = x * static_cast<double>(q) / kPi;
    const long long lo = static_cast<long long>(std::floor(scaled));
    const long long hi = lo + 1;
    const double err_lo = std::abs(x - kPi * static_cast<double>(lo) / static_cast<double>(q));
    const double err_hi = std::abs(x - kPi * static_cast<double>(hi) / static_cast<double>(q));
    long long p = lo;
    double err = err_lo;
    if (err_hi < err_lo || (err_hi == err_lo && std::llabs(hi) < std::llabs(lo))) {
      p = hi;
      err = err_hi;
    }
    if (err <= tol) return PiFraction{p, q};
  }
  return std::nullopt;
}

std::string tree_to_json(const DecisionTree& tree) {
  json j;
  j["schema"] = kSchemaId;
  j["task"] = tree.task;
  j["rollouts"] = tree.rollouts;
  j["root"] = node_to_json(tree.root);
  return j.dump(2);
}

DecisionTree tree_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("tree import: malformed document: ") + e.what());
  }
  if (!j.contains("schema") || j["schema"] != kSchemaId)
    throw ConfigError("tree import: unknown schema id");
  DecisionTree tree;
  tree.task = j.value("task", std::string{});
  tree.rollouts = j.value("rollouts", std::size_t{0});
  if (j.contains("root")) tree.root = node_from_json(j.at("root"));
  return tree;
}

std::string render_tree(const DecisionTree& tree) {
  std::string out = "task " + tree.task;
  out += tree.rollouts ? " (" + std::to_string(tree.rollouts) + " rollouts)\n"
                       : " (exact enumeration)\n";
  render_node(out, tree.root, "(root)", 0);
  return out;
}

}  // namespace fgrape::analysis
