// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fgrape/channels.hpp"
#include "fgrape/common.hpp"
#include "fgrape/controllers.hpp"
#include "fgrape/gates.hpp"
#include "fgrape/qcore.hpp"

namespace fgrape::tasks {

enum class RewardMode { FinalFidelity, FinalPurity, SumFidelity, MeanFidelity, FinalStabilizer };

// One slot of a task's step plan. Control-consuming slots read a component
// range of the most recent controller emission.
struct PlanElem {
  enum class Kind { ControlEval, Gate, Measure, MeasureContinuous, Dissipate, RewardTap };
  Kind kind = Kind::ControlEval;

  gates::GateFamily family = gates::GateFamily::JcDrive;
  gates::FamilyConfig fc{};
  std::size_t slot = 0;
  std::size_t ctrl_offset = 0;
  bool fixed = false;
  std::vector<double> fixed_vals;
  bool uses_model_g = false;  // spin rotations read the task's coupling constant

  channels::DissipationSpec diss{};

  qcore::ComplexMatrix observable;  // reward tap target
  bool purity = false;
  double weight = 1.0;

  static PlanElem control_eval() {
    PlanElem e;
    e.kind = Kind::ControlEval;
    return e;
  }
  static PlanElem gate(gates::GateFamily fam, std::size_t ctrl_offset,
                       gates::FamilyConfig cfg = {}, std::size_t slot = 0) {
    PlanElem e;
    e.kind = Kind::Gate;
    e.family = fam;
    e.fc = cfg;
    e.slot = slot;
    e.ctrl_offset = ctrl_offset;
    return e;
  }
  static PlanElem fixed_gate(gates::GateFamily fam, std::vector<double> vals,
                             gates::FamilyConfig cfg = {}, std::size_t slot = 0) {
    PlanElem e;
    e.kind = Kind::Gate;
    e.family = fam;
    e.fc = cfg;
    e.slot = slot;
    e.fixed = true;
    e.fixed_vals = std::move(vals);
    return e;
  }
  static PlanElem spin_gate(std::size_t ctrl_offset) {
    PlanElem e;
    e.kind = Kind::Gate;
    e.family = gates::GateFamily::SpinRotation;
    e.ctrl_offset = ctrl_offset;
    e.uses_model_g = true;
    return e;
  }
  static PlanElem measure(std::size_t ctrl_offset) {
    PlanElem e;
    e.kind = Kind::Measure;
    e.ctrl_offset = ctrl_offset;
    return e;
  }
  static PlanElem fixed_measure(double gamma, double delta) {
    PlanElem e;
    e.kind = Kind::Measure;
    e.fixed = true;
    e.fixed_vals = {gamma, delta};
    return e;
  }
  static PlanElem measure_continuous() {
    PlanElem e;
    e.kind = Kind::MeasureContinuous;
    return e;
  }
  static PlanElem dissipate(channels::DissipationSpec d) {
    PlanElem e;
    e.kind = Kind::Dissipate;
    e.diss = d;
    return e;
  }
  static PlanElem reward_expect(qcore::ComplexMatrix obs, double weight = 1.0) {
    PlanElem e;
    e.kind = Kind::RewardTap;
    e.observable = std::move(obs);
    e.weight = weight;
    return e;
  }
  static PlanElem reward_purity(double weight = 1.0) {
    PlanElem e;
    e.kind = Kind::RewardTap;
    e.purity = true;
    e.weight = weight;
    return e;
  }
};

// Gaussian spread of a model constant, averaged by quadrature (exact modes)
// or resampled per trajectory (Monte-Carlo modes).
struct UncertaintySpec {
  std::string constant = "g";
  double mean = 1.0;
  double std = 0.0;
  std::size_t quad_nodes = 0;  // 0 means resample per trajectory
};

struct TaskSpec {
  std::string name;
  qcore::HilbertLayout layout{2, 0};
  qcore::StateSpec initial{};
  bool use_density = false;
  std::vector<PlanElem> plan;
  std::size_t horizon = 1;
  RewardMode reward = RewardMode::FinalFidelity;
  controllers::ControllerSpec controller{};
  double model_g = 1.0;
  std::optional<UncertaintySpec> uncertainty;
  bool enumeration = false;
  std::size_t batch_size = 32;
  std::optional<double> target_return;

  // Total control components the plan consumes per emission; checked against
  // the bound controller's out_arity by the executor.
  std::size_t control_width() const;
};

// Scenario catalog; throws ConfigError for names outside it or for override
// keys a task does not understand. Override values are parsed from text so
// they can come straight from the command line; the per-task keys are listed
// in the README's configuration reference.
TaskSpec build_task(const std::string& name,
                    const std::map<std::string, std::string>& overrides = {});
std::vector<std::string> task_names();

// Nodes and weights for averaging a function of x ~ Normal(mean, std) with n
// quadrature nodes; weights sum to one.
std::pair<std::vector<double>, std::vector<double>> gauss_quadrature(std::size_t n, double mean,
                                                                     double std);

// Backward recursion for the resonant ladder: control sequence preparing the
// given cavity target (qubit ending in g) from the vacuum. Returned pairs are
// (alpha_j, beta_j) in application order.
std::vector<std::pair<double, double>> law_eberly_solve(const qcore::Ket& target);

// Adaptive dispersive-phase strategy purifying a thermal cavity with J
// measurements; returns the full binary decision table for a depth J-1 table
// controller of out_arity 2 holding (gamma_j, delta_j) per node.
controllers::ParameterVector analytic_purification_strategy(std::size_t J,
                                                            const controllers::Controller& table);

// Expected fidelity of the constrained pulse ansatz on the all-ones branch.
// The point coupling g applies as given; when an UncertaintySpec is attached
// the result is instead quadrature-averaged over its Gaussian spread.
double spin_fidelity_closed_form(const std::vector<double>& tau, double g,
                                 const std::optional<UncertaintySpec>& unc = std::nullopt,
                                 std::size_t quad_nodes = 41);

// Paper-style initial points for the pulse-duration table of spin_uncertain:
// pi plus uniform jitter on the all-ones branch and zero elsewhere (the
// constrained ansatz), or uniform over (-2 pi, 2 pi) everywhere.
controllers::ParameterVector spin_smart_init(const controllers::Controller& table,
                                             std::uint64_t seed);
controllers::ParameterVector spin_random_init(const controllers::Controller& table,
                                              std::uint64_t seed);

// Exact expected return of a strategy on a finitely-branching task, with its
// exact parameter gradient (full branch sums, nothing sampled).
std::pair<double, std::vector<double>> exact_enumeration_return(
    const TaskSpec& task, const controllers::Controller& ctl, const std::vector<double>& theta);

// Mean of the two stabilizer expectations of the approximate grid code.
double gkp_stabilizer_mean(const qcore::HilbertLayout& l, const qcore::ComplexMatrix& rho,
                           double delta);

}  // namespace fgrape::tasks
