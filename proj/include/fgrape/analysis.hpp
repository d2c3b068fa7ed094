// SPDX-License-Identifier: Apache-2.0
#pragma once

// Strategy interpretation: turns a frozen controller into an explicit
// decision tree over measurement histories and annotates controls that sit
// close to simple fractions of pi.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fgrape/controllers.hpp"
#include "fgrape/tasks.hpp"

namespace fgrape::analysis {

// x close to pi p / q; sign rides on p.
struct PiFraction {
  long long p = 0;
  std::size_t q = 1;
  bool operator==(const PiFraction&) const = default;
};

struct TreeNode {
  // Concatenated controller emissions at this history (most plans emit once
  // per history; plans with several evaluations between measurements append
  // in order).
  std::vector<double> controls;
  std::vector<std::optional<PiFraction>> rationalized;  // parallel to controls
  double visit_probability = 0.0;
  std::map<int, TreeNode> children;  // keyed by outcome label
};

struct DecisionTree {
  std::string task;
  std::size_t rollouts = 0;  // 0 under exact enumeration
  TreeNode root;
};

// Rolls the frozen strategy out n_rollouts times (or enumerates every branch
// exactly when `exact`) and assembles the visited histories into a tree.
// Controls are recorded once per history; repeat visits must agree to 1e-9 or
// the controller is not a function of the history and ConfigError is thrown.
// Discrete outcomes only. n_rollouts = 0 without `exact` gives an empty tree.
DecisionTree extract_tree(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                          const std::vector<double>& theta, std::size_t n_rollouts,
                          std::uint64_t seed = 1, bool exact = false);

// Smallest-denominator fraction of pi within tol of x, scanning the dyadic
// denominators 1, 2, 4, ... up to max_den (the strategies in this code base
// only ever rationalize to halvings). Equal-error candidates at one
// denominator resolve to the smaller |p|. nullopt when nothing qualifies.
std::optional<PiFraction> rationalize_pi(double x, std::size_t max_den = 16, double tol = -1.0);

// Versioned structured-text snapshot; outcome keys are signed labels such as
// "+1" and "-1". Import rejects unknown schema ids with ConfigError.
std::string tree_to_json(const DecisionTree& tree);
DecisionTree tree_from_json(const std::string& text);

// Indented one-node-per-line rendering with visit shares and pi fractions.
std::string render_tree(const DecisionTree& tree);

}  // namespace fgrape::analysis
