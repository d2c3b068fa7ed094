// SPDX-License-Identifier: Apache-2.0
#pragma once

// Trajectory-level dynamics: unitary application, zero-temperature Lindblad
// dissipation via RK4, POVM measurement with inverse-CDF discrete sampling,
// and reparametrized continuous-outcome sampling.

#include <functional>
#include <optional>
#include <vector>

#include "fgrape/measurement.hpp"
#include "fgrape/qcore.hpp"

namespace fgrape::channels {

struct MeasurementEvent {
  std::size_t outcome_index = 0;  // index into the family's outcome list (discrete)
  double outcome = 0.0;           // label value (discrete) or sampled m (continuous)
  double probability = 0.0;       // probability (discrete) or density (continuous)
  double log_prob = 0.0;
  qcore::DensityMatrix post;
};

struct DissipationSpec {
  double kappa_t = 0.0;        // dimensionless decay-rate x duration product
  std::size_t rk4_steps = 0;   // 0 = auto-size so that kappa dt <= 0.05 per substep
};

// Throws StateError when the family violates its completeness invariant
// (sum M^dag M = I to 1e-10 discrete, Euler lattice sum within 1e-4 continuous).
void validate_family(const MeasurementFamily& fam, std::size_t dim);

// U rho U^dag. Verifies row/column norms of U (full U^dag U check for small
// dims) and throws StateError past 1e-8.
qcore::DensityMatrix apply_unitary(const qcore::DensityMatrix& rho, const qcore::ComplexMatrix& u);
qcore::Ket apply_unitary(const qcore::Ket& psi, const qcore::ComplexMatrix& u);

// Evolves rho' = kappa (a rho a^dag - {n, rho}/2) for the given kappa*t using
// classic RK4 on the superoperator, applied in O(dim^2) per stage. The cavity
// shift acts on the Fock factor of the layout; qubit slots spectate.
qcore::DensityMatrix lindblad_rk4(const qcore::HilbertLayout& l, const qcore::DensityMatrix& rho,
                                  const DissipationSpec& spec);

// Raw-matrix variant of the same RK4 integration, without density-matrix
// bookkeeping. With adjoint set, evolves under the Frobenius adjoint
// L^dag(X) = kappa (a^dag X a - {n, X}/2) of the decay generator, which is the
// transpose map needed when propagating sensitivities or costates.
qcore::ComplexMatrix lindblad_rk4_raw(const qcore::HilbertLayout& l, const qcore::ComplexMatrix& x,
                                      const DissipationSpec& spec, bool adjoint = false);

// Samples an outcome by inverse CDF over the declared outcome order (a tie at
// a boundary resolves to the lower index). Outcomes with probability below
// floor_eps are excluded from sampling with a warning.
MeasurementEvent measure_discrete(const qcore::DensityMatrix& rho, const MeasurementFamily& fam,
                                  double rng_draw, double floor_eps = 1e-12);

// Replay variant: applies the given outcome instead of sampling.
MeasurementEvent measure_forced(const qcore::DensityMatrix& rho, const MeasurementFamily& fam,
                                std::size_t outcome_index);

// Reparametrized continuous sampling: densities on the outcome lattice,
// trapezoid cumulative sums, piecewise-linear inverse at z. Draws beyond the
// covered mass clamp to the lattice edge with a warning.
MeasurementEvent measure_continuous_reparam(const qcore::DensityMatrix& rho,
                                            const MeasurementFamily& fam, double z);

// Gaussian qubit readout m = sigma + xi with xi ~ N(0, 1): M(m) is diagonal
// with entries sqrt(q(m - sigma_i)), sigma_i = +1 on |g>, -1 on |e> of the
// chosen slot. A slotless layout with fock_cutoff = 2 treats Fock 0/1 as the
// qubit. Default lattice: 401 points on [-6, 6].
MeasurementFamily continuous_qubit_readout(const qcore::HilbertLayout& l, std::size_t slot = 0,
                                           double lo = -6.0, double hi = 6.0,
                                           std::size_t points = 401);

// One experiment step: an ordered plan of unitaries, dissipation intervals,
// measurements and reward taps.
struct StepElem {
  enum class Kind { Unitary, Dissipation, Measurement, RewardTap };
  Kind kind = Kind::Unitary;
  qcore::ComplexMatrix u;
  DissipationSpec dissipation;
  MeasurementFamily family;
  std::function<double(const qcore::DensityMatrix&)> reward;

  static StepElem unitary(qcore::ComplexMatrix m);
  static StepElem dissipation_of(DissipationSpec d);
  static StepElem measurement(MeasurementFamily f);
  static StepElem reward_tap(std::function<double(const qcore::DensityMatrix&)> fn);
};

struct TrajectoryResult {
  qcore::DensityMatrix rho;
  std::vector<MeasurementEvent> events;
  std::vector<double> rewards;
  double log_prob = 0.0;  // accumulated over all measurement events
};

// Applies the plan in order. When `forced_outcomes` is given, discrete
// measurements replay those outcome indices (in order) instead of sampling;
// continuous measurements cannot be forced.
TrajectoryResult trajectory_step(const qcore::HilbertLayout& l, qcore::DensityMatrix rho,
                                 const std::vector<StepElem>& plan, Rng& rng,
                                 const std::vector<std::size_t>* forced_outcomes = nullptr);

}  // namespace fgrape::channels
