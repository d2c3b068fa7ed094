// SPDX-License-Identifier: Apache-2.0
#pragma once

// Parametrized gate families, each returned together with its analytic
// parameter derivatives. Two-level blocks are closed-form rotations; the
// displacement family goes through the cached eigendecomposition of its
// Hermitian generator with exact divided-difference derivatives. No generic
// matrix exponentials anywhere.

#include <string>
#include <vector>

#include "fgrape/measurement.hpp"
#include "fgrape/qcore.hpp"

namespace fgrape::gates {

enum class GateFamily {
  JcDrive,         // U_q(alpha) = exp[-i (alpha s+ + alpha* s-) / 2]
  JcInteraction,   // U_qc(beta) = exp[-i (beta a s+ + beta* a^dag s-) / 2]
  DispersiveMeas,  // M(+1) = cos(gamma n + delta/2), M(-1) = sin(gamma n + delta/2)
  SnapBlock,       // D(alpha) S(phi) D(-alpha)
  Displacement,    // D(alpha)
  SpinRotation,    // exp(-i g tau sx / 2)
};

struct FamilyConfig {
  bool complex_jc = false;  // JC drives take (Re, Im) pairs instead of a real scalar
  std::size_t n_snap = 0;   // phases per SNAP block
};

std::size_t family_arity(GateFamily f, const FamilyConfig& cfg);
std::vector<std::string> family_component_names(GateFamily f, const FamilyConfig& cfg);

// One gate's control parameters, in family component order.
struct ControlVector {
  GateFamily family;
  std::vector<double> values;
};

struct GateResult {
  qcore::ComplexMatrix u;
  std::vector<qcore::ComplexMatrix> du;  // per real parameter component
};

// Cavity operator tensored with identity on the qubit slots.
qcore::ComplexMatrix embed_cavity(const qcore::HilbertLayout& l, const qcore::ComplexMatrix& cav);

// Qubit drive on the given slot; p = {alpha} or {Re alpha, Im alpha}.
GateResult jc_qubit_drive(const qcore::HilbertLayout& l, const std::vector<double>& p,
                          bool complex_mode = false, std::size_t slot = 0);

// Excitation exchange between cavity and the given qubit slot; block-diagonal
// on {|n,e>, |n+1,g>} with rotation angle |beta| sqrt(n+1).
GateResult jc_interaction(const qcore::HilbertLayout& l, const std::vector<double>& p,
                          bool complex_mode = false, std::size_t slot = 0);

// Dispersive readout family, diagonal in the Fock basis, with derivatives in
// (gamma, delta). Completeness is exact by cos^2 + sin^2 = 1.
channels::MeasurementFamily dispersive_povm(const qcore::HilbertLayout& l, double gamma,
                                            double delta);

// Selective number-dependent phase gate; phases beyond the supplied list are 0.
GateResult snap(const qcore::HilbertLayout& l, const std::vector<double>& phases);

// Displacement D(alpha); p = {Re alpha, Im alpha}. Warns (with the measured
// non-unitarity) when |alpha|^2 exceeds fock_cutoff / 4, and polar-projects
// the value back to a unitary if the deviation passes 1e-9; derivatives are
// taken through the unprojected form.
GateResult displacement_gate(const qcore::HilbertLayout& l, const std::vector<double>& p);

// D(alpha) S(phi) D(-alpha); p = {Re alpha, Im alpha, phi_0..phi_{n-1}}.
GateResult snap_block(const qcore::HilbertLayout& l, const std::vector<double>& p);

// Two-level rotation of Bloch angle g*tau about the x axis; p = {tau}.
GateResult spin_rotation(double g, const std::vector<double>& p);

}  // namespace fgrape::gates
