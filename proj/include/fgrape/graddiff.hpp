// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode differentiation of a trajectory's surrogate scalar with respect
// to the flat parameter vector theta, plus an independent forward-sensitivity
// backend used to cross-check the tape.
//
// The estimator being differentiated is
//     G(theta) = sum_k r_k(theta) + sum_j detach(A_j) ln P(m_j | theta),
// where the sampled outcomes m_j are held fixed, A_j is the (detached) sum of
// rewards recorded after measurement j, and the ln P terms supply the
// score-function correction that plain pathwise differentiation misses.
// Reparametrized continuous outcomes are differentiated pathwise through the
// inverse-CDF map and carry no score term.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "fgrape/channels.hpp"
#include "fgrape/gates.hpp"
#include "fgrape/qcore.hpp"

namespace fgrape::graddiff {

constexpr std::size_t kNoNode = static_cast<std::size_t>(-1);

// Append-only record of primitive operations. Values are complex matrices
// (kets are n x 1) or flat real vectors; scalars are length-1 real vectors.
// Adjoints of complex values follow the convention
//     adj(x) = dL/dRe(x) + i dL/dIm(x),
// so dL = Re <adj(W), dW>_F for every primitive, and real inputs receive real
// gradients.
class Tape {
 public:
  enum class Kind {
    LeafTheta,
    ConstMat,
    ConstVec,
    SliceVec,
    Concat,
    MatVec,      // reshape a theta slice to rows x cols, multiply a vector
    VAdd,
    VMul,        // elementwise product of two vectors
    VMulConst,   // elementwise product with a constant vector (dropout masks)
    VRelu,
    VSigmoid,
    VTanh,
    VOneMinus,
    VecGet,
    Log,
    GateKet,     // U psi with stored dU/dcontrol matrices
    GateDm,      // U rho U^dag likewise
    Lindblad,
    PovmProbKet,  // sum_i mask_i^2 |psi_i|^2
    PovmPostKet,  // diag(mask) psi, unnormalized
    PovmProbDm,
    PovmPostDm,
    KetRenorm,   // phi / sqrt(p)
    DmScaleInv,  // B / p
    Purity,
    ExpectConst,     // Re tr(O rho), O constant Hermitian
    ExpectKetConst,  // Re <psi|O|psi>
    MatToVec,        // [Re rho ; Im rho] flattened row-major
    ContDensity,     // outcome-lattice densities from diag(rho)
    CumTrapz,
    PwlInvert,   // piecewise-linear inverse CDF at a fixed draw z
    ContProb,    // sum_i w_i(m)^2 rho_ii for the Gaussian readout masks
    ContPost,    // w_i(m) w_j(m) rho_ij, unnormalized
    EigVals,     // ascending eigenvalues of a Hermitian node
  };

  struct Node {
    Kind kind;
    std::vector<std::size_t> in;
    // forward value: exactly one of these is populated
    qcore::ComplexMatrix mval;
    std::vector<double> vval;
    bool is_mat = false;
    // kind-dependent payload
    qcore::ComplexMatrix u;                   // gate value / constant observable / eigenvectors
    std::vector<qcore::ComplexMatrix> du;     // per-control gate derivatives
    std::vector<double> rd;                   // masks, dropout scale, sigma table, lattice dens
    std::vector<std::vector<double>> rdd;     // per-control mask derivatives
    double x0 = 0.0, x1 = 0.0, x2 = 0.0;      // z / h / lattice_lo / noise_std as needed
    std::size_t i0 = 0, i1 = 0;               // offsets, lengths, widths
    qcore::HilbertLayout layout{2, 0};
    channels::DissipationSpec diss{};
  };

  // leaf and constants
  std::size_t leaf_theta(const std::vector<double>& theta);
  std::size_t const_mat(qcore::ComplexMatrix m);
  std::size_t const_vec(std::vector<double> v);

  // real-vector primitives
  std::size_t slice_vec(std::size_t x, std::size_t offset, std::size_t len);
  std::size_t concat(const std::vector<std::size_t>& xs);
  std::size_t matvec(std::size_t w, std::size_t x, std::size_t rows, std::size_t cols);
  std::size_t vadd(std::size_t a, std::size_t b);
  std::size_t vmul(std::size_t a, std::size_t b);
  std::size_t vmul_const(std::size_t a, std::vector<double> c);
  std::size_t vrelu(std::size_t a);
  std::size_t vsigmoid(std::size_t a);
  std::size_t vtanh(std::size_t a);
  std::size_t vone_minus(std::size_t a);
  std::size_t vec_get(std::size_t a, std::size_t i);
  std::size_t log_of(std::size_t a);

  // quantum primitives; controls = kNoNode means a parameter-free gate
  std::size_t gate_ket(std::size_t psi, std::size_t controls, const gates::GateResult& g);
  std::size_t gate_dm(std::size_t rho, std::size_t controls, const gates::GateResult& g);
  std::size_t lindblad(std::size_t rho, const qcore::HilbertLayout& l,
                       const channels::DissipationSpec& spec);
  std::size_t povm_prob_ket(std::size_t psi, std::size_t controls, std::vector<double> mask,
                            std::vector<std::vector<double>> dmask);
  std::size_t povm_post_ket(std::size_t psi, std::size_t controls, std::vector<double> mask,
                            std::vector<std::vector<double>> dmask);
  std::size_t povm_prob_dm(std::size_t rho, std::size_t controls, std::vector<double> mask,
                           std::vector<std::vector<double>> dmask);
  std::size_t povm_post_dm(std::size_t rho, std::size_t controls, std::vector<double> mask,
                           std::vector<std::vector<double>> dmask);
  std::size_t ket_renorm(std::size_t phi, std::size_t p);
  std::size_t dm_scale_inv(std::size_t b, std::size_t p);
  std::size_t purity(std::size_t rho);
  std::size_t expect_const(std::size_t rho, qcore::ComplexMatrix obs);
  std::size_t expect_ket_const(std::size_t psi, qcore::ComplexMatrix obs);
  std::size_t mat_to_vec(std::size_t rho);
  std::size_t eigvals(std::size_t rho);

  // continuous-outcome chain
  std::size_t cont_density(std::size_t rho, std::vector<double> sigma, double noise_std,
                           double lo, double hi, std::size_t points);
  std::size_t cum_trapz(std::size_t dens, double h);
  std::size_t pwl_invert(std::size_t cum, double z, double h, double lo);
  std::size_t cont_prob(std::size_t rho, std::size_t m, std::vector<double> sigma,
                        double noise_std);
  std::size_t cont_post(std::size_t rho, std::size_t m, std::vector<double> sigma,
                        double noise_std);

  // forward value access
  const std::vector<double>& rvec(std::size_t id) const;
  const qcore::ComplexMatrix& mat(std::size_t id) const;
  double scalar(std::size_t id) const;

  // Reverse sweep from the given scalar seeds; returns dL/dtheta for the
  // single LeafTheta node. A NaN adjoint raises GradientError naming the node;
  // an eigenvalue node with a spectral gap below 1e-10 does the same so the
  // caller can fall back to the sensitivity backend.
  std::vector<double> backward(const std::vector<std::pair<std::size_t, double>>& seeds) const;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }

 private:
  std::size_t push(Node n);
  std::vector<Node> nodes_;
  std::size_t theta_node_ = kNoNode;
};

// The sampled return plus the score terms needed by the estimator.
struct SurrogateScalar {
  double value = 0.0;                   // sampled return sum_k r_k
  std::vector<std::size_t> reward_nodes;
  std::vector<double> reward_weights;   // usually all ones
  struct Score {
    double coeff = 0.0;        // detached A_j (future return past measurement j)
    std::size_t logp_node = 0;
    std::size_t meas_ordinal = 0;
  };
  std::vector<Score> score_terms;

  // Seeds the reverse sweep with d/dr_k = w_k and d/dlnP_j = A_j.
  std::vector<double> gradient(const Tape& tape) const;
  // Pathwise part only (for demonstrating the necessity of the correction).
  std::vector<double> gradient_without_score(const Tape& tape) const;
};

// A linear trajectory program whose gate and measurement controls are slices
// of theta. Rich enough for open-loop chains and fixed-parameter feedback;
// closed-loop controllers drive the Tape directly through the training module.
struct ProgStep {
  enum class Kind { Gate, DispersiveMeasure, ContinuousMeasure, Dissipate, RewardExpect,
                    RewardPurity };
  Kind kind = Kind::Gate;
  gates::GateFamily family = gates::GateFamily::JcDrive;
  gates::FamilyConfig fc{};
  std::size_t slot = 0;
  double spin_g = 1.0;            // coupling for the spin-rotation family
  std::size_t theta_offset = 0;   // start of this step's controls within theta
  bool theta_controls = true;     // false: use fixed_vals, no gradient flows
  std::vector<double> fixed_vals;
  channels::DissipationSpec diss{};
  qcore::ComplexMatrix observable;  // RewardExpect

  static ProgStep gate(gates::GateFamily fam, std::size_t theta_offset,
                       gates::FamilyConfig fc = {}, std::size_t slot = 0);
  static ProgStep fixed_gate(gates::GateFamily fam, std::vector<double> vals,
                             gates::FamilyConfig fc = {}, std::size_t slot = 0);
  static ProgStep measure(std::size_t theta_offset);
  static ProgStep fixed_measure(double gamma, double delta);
  static ProgStep measure_continuous();
  static ProgStep dissipate(channels::DissipationSpec d);
  static ProgStep reward_expect(qcore::ComplexMatrix obs);
  static ProgStep reward_purity();
};

struct Program {
  qcore::HilbertLayout layout{2, 0};
  qcore::StateSpec initial{};
  bool use_density = false;  // kets unless dissipation or a mixed start demands otherwise
  std::vector<ProgStep> steps;
  std::size_t theta_size = 0;
};

// Outcome record sufficient to replay a trajectory deterministically.
struct DrawPlan {
  std::vector<std::size_t> discrete;  // outcome indices, in measurement order
  std::vector<double> continuous_z;   // unit draws, in measurement order
};

struct Recorded {
  Tape tape;
  SurrogateScalar surrogate;
  DrawPlan draws;
  std::vector<channels::MeasurementEvent> events;
};

// Walks the program once, sampling through rng (or replaying `replay` when
// given), recording every primitive on a fresh tape. With future_returns_only
// (the default) A_j sums only rewards recorded after measurement j; otherwise
// the full return is used.
Recorded forward_record(const Program& prog, const std::vector<double>& theta, Rng& rng,
                        const DrawPlan* replay = nullptr, bool future_returns_only = true);

// Independent gradient backend: forward sensitivity propagation of
// d rho / d theta_k through the same program under fixed outcomes, including
// the measurement update
//   S(t+) = N_k / P - rho(t+) tr(N_k) / P,
//   N_k = M S M^dag + (dM) rho M^dag + M rho (dM)^dag,
// and a log-likelihood track through the unnormalized state (divisions by P
// formally set to one), whose per-measurement trace increments give
// d ln P_j / d theta_k. Shares no code with Tape::backward.
std::vector<double> sensitivity_gradient(const Program& prog, const std::vector<double>& theta,
                                         const DrawPlan& draws, bool future_returns_only = true);

// Third route: costate (backward) sweeps in the classic gradient-ascent
// style. Each reward functional seeds a Hermitian costate sigma that is
// pulled back through the op log, picking up
//   2 Re tr(dU rho U^dag sigma)
// at every parametrized gate; a measurement pulls sigma back as
//   sigma(t-) = [M sigma M - tr(sigma rho(t+)) M M] / P.
// Log-likelihood terms ride the unnormalized state, for which every P in the
// pullback is formally set to one and the trace-subtraction term drops.
// Agrees with the other two routes to 1e-8 relative.
std::vector<double> adjoint_gradient(const Program& prog, const std::vector<double>& theta,
                                     const DrawPlan& draws, bool future_returns_only = true);

struct FdReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::vector<double> grad;
  std::vector<double> fd;
};

// Central finite differences of the surrogate with frozen outcomes, compared
// against the tape gradient; the worst case over the given trajectory seeds
// is reported.
FdReport finite_diff_check(const Program& prog, const std::vector<double>& theta, double h,
                           const std::vector<std::uint64_t>& seeds);

// Shared continuous-readout lattice: every caller discretizes [lo, hi] with
// the same point count so outcome draws replay across backends.
inline constexpr double kReadoutLo = -6.0;
inline constexpr double kReadoutHi = 6.0;
inline constexpr std::size_t kReadoutPoints = 401;

// Per-basis-state readout means: slot-0 qubit bit (or the bare two-level
// system), +1 for g and -1 for e.
std::vector<double> readout_sigma(const qcore::HilbertLayout& l);

// Gate-family dispatch shared with the trajectory executors.
gates::GateResult build_family_gate(const qcore::HilbertLayout& l, gates::GateFamily family,
                                    const gates::FamilyConfig& fc, std::size_t slot, double spin_g,
                                    const std::vector<double>& vals);

}  // namespace fgrape::graddiff
