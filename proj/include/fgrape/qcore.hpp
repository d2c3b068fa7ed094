// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense complex linear algebra, Hilbert-space layouts, operator and state
// builders, and state functionals (fidelity, purity, Wigner quasiprobability).
//
// Conventions used throughout:
//   - Matrices are row-major.
//   - Basis ordering is cavity (x) qubit slots: index = n * 2^slots + bits,
//     where bit 0 of "bits" is the LAST slot. Qubit basis is (g, e) = (0, 1).
//   - The Wigner function is normalised so that W_vacuum(0, 0) = 1/pi and the
//     integral over dx dp is 1, with alpha = (x + i p) / sqrt(2).

#include <cstddef>
#include <vector>

#include "fgrape/common.hpp"

namespace fgrape::qcore {

class ComplexMatrix {
 public:
  ComplexMatrix() = default;
  ComplexMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), a_(rows * cols, cxd(0.0, 0.0)) {}

  static ComplexMatrix identity(std::size_t n);
  static ComplexMatrix diag(const std::vector<cxd>& d);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return a_.empty(); }

  cxd& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
  const cxd& operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }
  cxd* data() { return a_.data(); }
  const cxd* data() const { return a_.data(); }

  ComplexMatrix operator+(const ComplexMatrix& o) const;
  ComplexMatrix operator-(const ComplexMatrix& o) const;
  ComplexMatrix operator*(const ComplexMatrix& o) const;  // matrix product
  ComplexMatrix operator*(cxd s) const;
  ComplexMatrix& operator+=(const ComplexMatrix& o);
  ComplexMatrix& operator-=(const ComplexMatrix& o);
  ComplexMatrix& operator*=(cxd s);

  ComplexMatrix dagger() const;
  ComplexMatrix transpose() const;
  ComplexMatrix conj() const;
  cxd trace() const;
  double frob_norm() const;
  double max_abs() const;

  bool is_hermitian(double tol) const;
  bool is_unitary(double tol) const;  // max-abs deviation of U^dag U from I

  // C += s * A * B
  static void mul_acc(ComplexMatrix& c, const ComplexMatrix& a, const ComplexMatrix& b,
                      cxd s = cxd(1.0, 0.0));

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<cxd> a_;
};

cxd trace_prod(const ComplexMatrix& a, const ComplexMatrix& b);  // tr(a * b) without forming it

// Hermitian eigendecomposition A = V diag(values) V^dag via cyclic complex
// Jacobi rotations. Eigenvalues ascending; columns of `vectors` are the
// eigenvectors. Self-contained on purpose: no external LAPACK dependency.
struct EigHerm {
  std::vector<double> values;
  ComplexMatrix vectors;
};
EigHerm eig_hermitian(const ComplexMatrix& a);

class Ket {
 public:
  Ket() = default;
  explicit Ket(std::size_t dim) : v_(dim, cxd(0.0, 0.0)) {}
  // Validates unit norm within tol (throws StateError otherwise).
  static Ket from(std::vector<cxd> amps, double norm_tol = 1e-10);
  static Ket from_unchecked(std::vector<cxd> amps);
  static Ket basis(std::size_t dim, std::size_t i);

  std::size_t dim() const { return v_.size(); }
  cxd& operator[](std::size_t i) { return v_[i]; }
  const cxd& operator[](std::size_t i) const { return v_[i]; }
  const std::vector<cxd>& amplitudes() const { return v_; }

  double norm() const;
  void normalize();
  ComplexMatrix outer() const;  // |psi><psi|

 private:
  std::vector<cxd> v_;
};

cxd inner(const Ket& a, const Ket& b);       // <a|b>
Ket apply(const ComplexMatrix& m, const Ket& v);

class DensityMatrix {
 public:
  DensityMatrix() = default;
  // Validates Hermiticity within herm_tol and unit trace within trace_tol.
  // The positivity floor (min eigenvalue >= -1e-8) is only checked when
  // psd_check is set; it costs an eigendecomposition.
  static DensityMatrix from(ComplexMatrix m, double herm_tol = 1e-10,
                            double trace_tol = 1e-8, bool psd_check = false);
  static DensityMatrix from_unchecked(ComplexMatrix m);
  static DensityMatrix pure(const Ket& psi);

  std::size_t dim() const { return m_.rows(); }
  const ComplexMatrix& matrix() const { return m_; }
  ComplexMatrix& matrix() { return m_; }

 private:
  ComplexMatrix m_;
};

struct HilbertLayout {
  std::size_t fock_cutoff = 0;  // number of Fock levels kept (dimension of the cavity)
  std::size_t qubit_slots = 0;  // 0, 1 or 2 two-level systems after the cavity

  void validate() const;  // throws LayoutError on cutoff < 2 or slots > 2
  std::size_t dim() const { return fock_cutoff << qubit_slots; }
  std::size_t qdim() const { return std::size_t(1) << qubit_slots; }
  std::size_t index(std::size_t n, std::size_t bits) const { return n * qdim() + bits; }
  std::size_t fock_of(std::size_t idx) const { return idx / qdim(); }
  std::size_t bits_of(std::size_t idx) const { return idx % qdim(); }
  // bit of the given slot inside "bits" (slot 0 is the first qubit factor)
  std::size_t slot_bit(std::size_t bits, std::size_t slot) const {
    return (bits >> (qubit_slots - 1 - slot)) & 1u;
  }
  bool operator==(const HilbertLayout&) const = default;
};

// Cavity ladder / number operators and per-slot Paulis, embedded in the full
// layout dimension.
struct Operators {
  ComplexMatrix a, adag, number;
  std::vector<ComplexMatrix> sx, sy, sz, sp, sm;  // indexed by slot
};
Operators build_operators(const HilbertLayout& layout);

enum class StateKind { Fock, Coherent, Kitten2, Kitten4, Thermal, Gkp, Ground };

struct StateSpec {
  StateKind kind = StateKind::Ground;
  int fock_n = 0;          // Fock
  cxd alpha = 0.0;         // Coherent / kitten amplitude
  double nbar = 0.0;       // Thermal
  double delta = 0.15;     // Gkp envelope
  double leakage_tol = 1e-6;
};

struct StateBuild {
  bool pure = true;
  Ket ket;            // set when pure
  DensityMatrix dm;   // always set
  double leakage = 0.0;  // norm lost to the Fock cutoff before renormalisation
};

// Builds the requested cavity state, tensored with |g> on any qubit slots.
// Throws TruncationError when the norm lost to the cutoff exceeds
// spec.leakage_tol.
StateBuild build_state(const HilbertLayout& layout, const StateSpec& spec);

double purity(const DensityMatrix& rho);

// Uhlmann fidelity tr(sqrt(sqrt(sigma) rho sqrt(sigma)))^2 with the pure-target
// shortcut <sigma|rho|sigma> applied when sigma is pure.
double fidelity(const DensityMatrix& rho, const DensityMatrix& sigma);
double fidelity(const DensityMatrix& rho, const Ket& target);
double fidelity(const Ket& psi, const Ket& target);

// Truncated displacement operator exp(alpha a^dag - conj(alpha) a) built from
// the cached eigendecomposition of the Hermitian generator; exactly unitary up
// to eigensolver roundoff.
ComplexMatrix displacement_matrix(std::size_t dim, cxd alpha);

// Cached eigendecomposition of the displacement generator H0 = i(a^dag - a)
// at the given dimension. D(alpha) = P V exp(-i |alpha| L) V^dag P^dag with
// P = diag(e^{i arg(alpha) n}); shared with the differentiable gate path.
const EigHerm& displacement_generator_eig(std::size_t dim);

struct WignerGrid {
  std::vector<double> xs, ps;
  std::vector<double> w;  // row-major, ps index major: w[ip * xs.size() + ix]
  double at(std::size_t ip, std::size_t ix) const { return w[ip * xs.size() + ix]; }
};
// Cavity-only Wigner function; rho must live on a layout without qubit slots
// (trace out qubits first if needed).
WignerGrid wigner_grid(const DensityMatrix& rho, const std::vector<double>& xs,
                       const std::vector<double>& ps);

// Partial trace over all qubit slots, leaving the cavity state.
DensityMatrix trace_out_qubits(const HilbertLayout& layout, const DensityMatrix& rho);

// GKP grid-state stabilizers S_x = E D(sqrt(pi)) E^-1, S_p = E D(i sqrt(pi)) E^-1
// with envelope E = exp(-delta^2 n). Throws NumericalError when the inverse
// envelope amplification is numerically unsafe at this cutoff.
ComplexMatrix gkp_stabilizer_x(std::size_t dim, double delta);
ComplexMatrix gkp_stabilizer_p(std::size_t dim, double delta);

}  // namespace fgrape::qcore
