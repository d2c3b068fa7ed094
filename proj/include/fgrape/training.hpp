// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fgrape/channels.hpp"
#include "fgrape/common.hpp"
#include "fgrape/controllers.hpp"
#include "fgrape/graddiff.hpp"
#include "fgrape/tasks.hpp"

namespace fgrape::training {

// One sampled run: the classical record plus everything needed to replay it.
struct Trajectory {
  std::vector<double> outcomes;                // measured values, in order
  graddiff::DrawPlan draws;                    // replayable outcome record
  std::vector<std::vector<double>> controls;   // controller emissions
  std::vector<double> rewards;                 // weighted tap values, in order
  std::vector<std::size_t> reward_meas_before; // measurements seen before each tap
  std::vector<std::vector<double>> meas_probs; // per discrete measurement
  double ret = 0.0;                            // sum of rewards
  double log_prob = 0.0;                       // sum of ln P(m_j | past)
  qcore::ComplexMatrix final_state;            // density matrix after the plan
  double model_g = 0.0;                        // resolved coupling constant
};

// Trajectory plus its differentiable record and its averaging weight
// (1 for Monte-Carlo draws, the branch probability under enumeration).
struct Sampled {
  Trajectory traj;
  graddiff::Tape tape;
  graddiff::SurrogateScalar surrogate;
  double weight = 1.0;
};

struct ExecOptions {
  const graddiff::DrawPlan* replay = nullptr;
  bool training = true;  // dropout masks active
  bool future_returns_only = true;
  // overrides the task's model constant when finite (quadrature, resampling)
  double g = std::numeric_limits<double>::quiet_NaN();
};

// Runs the task's plan once, driving the bound controller and writing the
// whole computation onto a fresh tape. Verifies the control width against the
// controller's output arity.
Sampled run_trajectory(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                       const std::vector<double>& theta, Rng& rng,
                       const ExecOptions& opt = {});

// Independent trajectories on per-index substreams of `seed`; resamples the
// model constant per trajectory when the task carries an uncertainty spec.
std::vector<Sampled> sample_batch(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                                  const std::vector<double>& theta, std::size_t batch_size,
                                  std::uint64_t seed);

// Every discrete outcome branch with its exact probability weight; quadrature
// nodes of the uncertainty spec multiply the branch set. ConfigError past
// `max_branches`; zero-probability branches are pruned.
std::vector<Sampled> enumerate_branches(const tasks::TaskSpec& task,
                                        const controllers::Controller& ctl,
                                        const std::vector<double>& theta,
                                        std::size_t max_branches = 4096);

// Compiles a table-driven task under the frozen outcomes of `traj` into the
// low-level program form, so the alternative gradient backends can run on
// catalog tasks. Controls address the visited table nodes directly; replay
// the same traj.draws through the program executors for matching results.
// ConfigError for network controllers (their controls are not theta slices).
graddiff::Program branch_program(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                                 const Trajectory& traj);

// Tabular value function over discrete outcome histories, updated by Bellman
// sweeps; V of an unseen history is zero.
class ValueTable {
 public:
  ValueTable(double alpha = 0.1, double discount = 1.0) : alpha_(alpha), discount_(discount) {}
  double value(const std::string& key) const;
  double alpha() const { return alpha_; }
  double discount() const { return discount_; }
  std::size_t size() const { return v_.size(); }
  // one sweep over every (s_j, r_j, s_{j+1}) transition in the batch;
  // terminal successors bootstrap from zero
  void update(const std::vector<Sampled>& batch);
  static std::string key_of(const graddiff::DrawPlan& draws, std::size_t len);

 private:
  std::map<std::string, double> v_;
  double alpha_, discount_;
};

struct GradientEstimate {
  std::vector<double> grad;
  double mean_return = 0.0;
  double std_return = 0.0;
};

// Weighted mean of the per-trajectory surrogate gradients. With a baseline,
// the future-return coefficients become advantages r_j + discount V(s_{j+1})
// - V(s_j) before differentiation. Non-finite components abort with a
// trajectory dump in the error text.
GradientEstimate estimate_gradient(const std::vector<Sampled>& batch,
                                   const ValueTable* baseline = nullptr);

struct AdamState {
  std::vector<double> m, v;
  std::size_t step = 0;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  double clipnorm = 1.0;
  double clipvalue = 0.5;
  double lr_decay = 1.0;  // multiplicative per step; 1 keeps the rate constant
};

// Per-component clip to +-clipvalue, then a global rescale onto the norm ball.
std::vector<double> clip_gradient(std::vector<double> g, double clipvalue, double clipnorm);

// Bias-corrected ascent step in place (maximizing the return).
void adam_step(AdamState& st, std::vector<double>& theta, const std::vector<double>& grad);

struct CurveRow {
  std::size_t iteration = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  long wall_ms = 0;
};

struct TrainConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 0;  // 0 adopts the task default
  std::uint64_t seed = 1;
  double learning_rate = 0.01;
  double lr_decay = 1.0;
  bool use_baseline = false;
  double baseline_alpha = 0.1;
  double discount = 1.0;
  std::optional<double> target_return;  // unset falls back to the task's
  bool deterministic = true;            // wall_ms stays 0 for exact replays
};

struct TrainResult {
  controllers::ParameterVector theta;       // final parameters
  controllers::ParameterVector best_theta;  // highest mean return seen
  double best_return = 0.0;
  std::size_t best_iteration = 0;
  std::vector<CurveRow> curve;
  AdamState adam;
};

TrainResult train(const tasks::TaskSpec& task, const controllers::Controller& ctl,
                  const controllers::ParameterVector& theta0, const TrainConfig& cfg);

// CSV rows "iteration,mean_return,std_return,wall_ms" under a header line.
void write_curve_csv(const std::string& path, const std::vector<CurveRow>& curve);

// Strategy snapshot plus optimizer state, restorable mid-run.
std::string checkpoint_json(const controllers::Controller& ctl,
                            const controllers::ParameterVector& theta, const AdamState& adam);
std::pair<controllers::ParameterVector, AdamState> restore_checkpoint(
    const std::string& text, const controllers::Controller& ctl);

}  // namespace fgrape::training
