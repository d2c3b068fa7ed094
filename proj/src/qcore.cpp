// SPDX-License-Identifier: Apache-2.0

#include "fgrape/qcore.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>

namespace fgrape::qcore {

namespace {

std::string dim_str(std::size_t r, std::size_t c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

}  // namespace

ComplexMatrix ComplexMatrix::identity(std::size_t n) {
  ComplexMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

ComplexMatrix ComplexMatrix::diag(const std::vector<cxd>& d) {
  ComplexMatrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

ComplexMatrix ComplexMatrix::operator+(const ComplexMatrix& o) const {
  ComplexMatrix r = *this;
  r += o;
  return r;
}

ComplexMatrix ComplexMatrix::operator-(const ComplexMatrix& o) const {
  ComplexMatrix r = *this;
  r -= o;
  return r;
}

ComplexMatrix& ComplexMatrix::operator+=(const ComplexMatrix& o) {
  if (rows_ != o.rows_ || cols_ != o.cols_)
    throw DimensionError("matrix add: " + dim_str(rows_, cols_) + " vs " + dim_str(o.rows_, o.cols_));
  for (std::size_t i = 0; i < a_.size(); ++i) a_[i] += o.a_[i];
  return *this;
}

ComplexMatrix& ComplexMatrix::operator-=(const ComplexMatrix& o) {
  if (rows_ != o.rows_ || cols_ != o.cols_)
    throw DimensionError("matrix sub: " + dim_str(rows_, cols_) + " vs " + dim_str(o.rows_, o.cols_));
  for (std::size_t i = 0; i < a_.size(); ++i) a_[i] -= o.a_[i];
  return *this;
}

ComplexMatrix& ComplexMatrix::operator*=(cxd s) {
  for (auto& z : a_) z *= s;
  return *this;
}

ComplexMatrix ComplexMatrix::operator*(cxd s) const {
  ComplexMatrix r = *this;
  r *= s;
  return r;
}

void ComplexMatrix::mul_acc(ComplexMatrix& c, const ComplexMatrix& a, const ComplexMatrix& b, cxd s) {
  if (a.cols_ != b.rows_)
    throw DimensionError("matmul: " + dim_str(a.rows_, a.cols_) + " * " + dim_str(b.rows_, b.cols_));
  if (c.rows_ != a.rows_ || c.cols_ != b.cols_)
    throw DimensionError("matmul: bad accumulator shape");
  const std::size_t K = a.cols_, N = b.cols_;
  for (std::size_t i = 0; i < a.rows_; ++i) {
    cxd* crow = &c.a_[i * N];
    const cxd* arow = &a.a_[i * K];
    for (std::size_t k = 0; k < K; ++k) {
      cxd aik = arow[k] * s;
      if (aik == cxd(0.0, 0.0)) continue;
      const cxd* brow = &b.a_[k * N];
      for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
    }
  }
}

ComplexMatrix ComplexMatrix::operator*(const ComplexMatrix& o) const {
  ComplexMatrix c(rows_, o.cols_);
  mul_acc(c, *this, o);
  return c;
}

ComplexMatrix ComplexMatrix::dagger() const {
  ComplexMatrix r(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) r(j, i) = std::conj((*this)(i, j));
  return r;
}

ComplexMatrix ComplexMatrix::transpose() const {
  ComplexMatrix r(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) r(j, i) = (*this)(i, j);
  return r;
}

ComplexMatrix ComplexMatrix::conj() const {
  ComplexMatrix r(rows_, cols_);
  for (std::size_t i = 0; i < a_.size(); ++i) r.a_[i] = std::conj(a_[i]);
  return r;
}

cxd ComplexMatrix::trace() const {
  if (rows_ != cols_) throw DimensionError("trace of non-square matrix");
  cxd t = 0.0;
  for (std::size_t i = 0; i < rows_; ++i) t += (*this)(i, i);
  return t;
}

double ComplexMatrix::frob_norm() const {
  double s = 0.0;
  for (const auto& z : a_) s += std::norm(z);
  return std::sqrt(s);
}

double ComplexMatrix::max_abs() const {
  double m = 0.0;
  for (const auto& z : a_) m = std::max(m, std::abs(z));
  return m;
}

bool ComplexMatrix::is_hermitian(double tol) const {
  if (rows_ != cols_) return false;
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = i; j < cols_; ++j)
      if (std::abs((*this)(i, j) - std::conj((*this)(j, i))) > tol) return false;
  return true;
}

bool ComplexMatrix::is_unitary(double tol) const {
  if (rows_ != cols_) return false;
  ComplexMatrix p = dagger() * (*this);
  for (std::size_t i = 0; i < rows_; ++i) p(i, i) -= 1.0;
  return p.max_abs() <= tol;
}

cxd trace_prod(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (a.cols() != b.rows() || a.rows() != b.cols())
    throw DimensionError("trace_prod: incompatible shapes");
  cxd t = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t += a(i, j) * b(j, i);
  return t;
}

// ---------------------------------------------------------------------------
// Hermitian eigensolver: cyclic complex Jacobi.
//
// Each rotation diagonalises the 2x2 principal block (p, q). The off-diagonal
// element g = A[p][q] is first made real by the phase diag(1, e^{-i phi}),
// then annihilated by a real Jacobi rotation:
//   tau = (a_qq - a_pp) / (2 |g|),  t = sgn(tau)/(|tau| + sqrt(1 + tau^2)).

EigHerm eig_hermitian(const ComplexMatrix& a_in) {
  const std::size_t n = a_in.rows();
  if (a_in.cols() != n) throw DimensionError("eig_hermitian: non-square input");
  double scale = std::max(1.0, a_in.max_abs());
  if (!a_in.is_hermitian(1e-8 * scale))
    throw StateError("eig_hermitian: input not Hermitian within tolerance");

  ComplexMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (a_in(i, j) + std::conj(a_in(j, i)));
  ComplexMatrix v = ComplexMatrix::identity(n);

  const double stop = 1e-14 * std::max(1.0, a.frob_norm());
  for (int sweep = 0; sweep < 80; ++sweep) {
    double off2 = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off2 += std::norm(a(p, q));
    if (std::sqrt(2.0 * off2) <= stop) break;
    if (sweep == 79)
      throw NumericalError("eig_hermitian: Jacobi sweeps failed to converge");

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        cxd g = a(p, q);
        double ag = std::abs(g);
        if (ag < 1e-300) continue;
        cxd eiphi = g / ag;
        double app = std::real(a(p, p)), aqq = std::real(a(q, q));
        double tau = (aqq - app) / (2.0 * ag);
        double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = t * c;
        // U restricted to the (p, q) plane:
        //   U = [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
        cxd u10 = -s * std::conj(eiphi);
        cxd u11 = c * std::conj(eiphi);
        for (std::size_t r = 0; r < n; ++r) {  // A <- A U, V <- V U
          cxd arp = a(r, p), arq = a(r, q);
          a(r, p) = arp * c + arq * u10;
          a(r, q) = arp * s + arq * u11;
          cxd vrp = v(r, p), vrq = v(r, q);
          v(r, p) = vrp * c + vrq * u10;
          v(r, q) = vrp * s + vrq * u11;
        }
        for (std::size_t col = 0; col < n; ++col) {  // A <- U^dag A
          cxd apc = a(p, col), aqc = a(q, col);
          a(p, col) = c * apc + std::conj(u10) * aqc;
          a(q, col) = s * apc + std::conj(u11) * aqc;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
      }
    }
  }

  EigHerm out;
  out.values.resize(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = std::real(a(i, i));
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return d[x] < d[y]; });
  out.vectors = ComplexMatrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = d[order[j]];
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kets and density matrices

Ket Ket::from(std::vector<cxd> amps, double norm_tol) {
  double n2 = 0.0;
  for (const auto& z : amps) n2 += std::norm(z);
  if (std::abs(std::sqrt(n2) - 1.0) > norm_tol)
    throw StateError("ket norm deviates from 1 by more than tolerance");
  Ket k;
  k.v_ = std::move(amps);
  return k;
}

Ket Ket::from_unchecked(std::vector<cxd> amps) {
  Ket k;
  k.v_ = std::move(amps);
  return k;
}

Ket Ket::basis(std::size_t dim, std::size_t i) {
  if (i >= dim) throw DimensionError("basis index out of range");
  Ket k(dim);
  k.v_[i] = 1.0;
  return k;
}

double Ket::norm() const {
  double n2 = 0.0;
  for (const auto& z : v_) n2 += std::norm(z);
  return std::sqrt(n2);
}

void Ket::normalize() {
  double n = norm();
  if (n == 0.0) throw StateError("cannot normalize zero vector");
  for (auto& z : v_) z /= n;
}

ComplexMatrix Ket::outer() const {
  ComplexMatrix m(dim(), dim());
  for (std::size_t i = 0; i < dim(); ++i)
    for (std::size_t j = 0; j < dim(); ++j) m(i, j) = v_[i] * std::conj(v_[j]);
  return m;
}

cxd inner(const Ket& a, const Ket& b) {
  if (a.dim() != b.dim()) throw DimensionError("inner: dimension mismatch");
  cxd s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

Ket apply(const ComplexMatrix& m, const Ket& v) {
  if (m.cols() != v.dim()) throw DimensionError("apply: dimension mismatch");
  Ket r(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    cxd s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * v[j];
    r[i] = s;
  }
  return r;
}

DensityMatrix DensityMatrix::from(ComplexMatrix m, double herm_tol, double trace_tol, bool psd_check) {
  if (m.rows() != m.cols()) throw DimensionError("density matrix must be square");
  if (!m.is_hermitian(herm_tol)) throw StateError("density matrix not Hermitian within tolerance");
  if (std::abs(m.trace() - cxd(1.0, 0.0)) > trace_tol)
    throw StateError("density matrix trace deviates from 1");
  if (psd_check) {
    EigHerm e = eig_hermitian(m);
    if (e.values.front() < -1e-8)
      throw StateError("density matrix has eigenvalue below -1e-8");
  }
  DensityMatrix d;
  d.m_ = std::move(m);
  return d;
}

DensityMatrix DensityMatrix::from_unchecked(ComplexMatrix m) {
  DensityMatrix d;
  d.m_ = std::move(m);
  return d;
}

DensityMatrix DensityMatrix::pure(const Ket& psi) { return from_unchecked(psi.outer()); }

// ---------------------------------------------------------------------------
// Layout and operators

void HilbertLayout::validate() const {
  if (fock_cutoff < 2)
    throw LayoutError("invalid layout: fock_cutoff must be at least 2");
  if (qubit_slots > 2)
    throw LayoutError("invalid layout: at most 2 qubit slots supported");
}

Operators build_operators(const HilbertLayout& layout) {
  layout.validate();
  const std::size_t N = layout.fock_cutoff, Q = layout.qdim(), D = layout.dim();
  Operators ops;
  ops.a = ComplexMatrix(D, D);
  ops.adag = ComplexMatrix(D, D);
  ops.number = ComplexMatrix(D, D);
  for (std::size_t n = 1; n < N; ++n) {
    double r = std::sqrt(static_cast<double>(n));
    for (std::size_t b = 0; b < Q; ++b) {
      ops.a(layout.index(n - 1, b), layout.index(n, b)) = r;
      ops.adag(layout.index(n, b), layout.index(n - 1, b)) = r;
    }
  }
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t b = 0; b < Q; ++b)
      ops.number(layout.index(n, b), layout.index(n, b)) = static_cast<double>(n);

  for (std::size_t slot = 0; slot < layout.qubit_slots; ++slot) {
    ComplexMatrix sx(D, D), sy(D, D), sz(D, D), sp(D, D), sm(D, D);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t b = 0; b < Q; ++b) {
        std::size_t bit = layout.slot_bit(b, slot);
        std::size_t flipped = b ^ (std::size_t(1) << (layout.qubit_slots - 1 - slot));
        std::size_t i = layout.index(n, b), f = layout.index(n, flipped);
        sx(f, i) = 1.0;
        sy(f, i) = bit ? cxd(0.0, -1.0) : cxd(0.0, 1.0);  // sigma_y = i|e><g| - i|g><e|
        sz(i, i) = bit ? -1.0 : 1.0;                      // sigma_z|g> = +|g>
        if (bit == 0) sp(f, i) = 1.0;                     // sigma_+ = |e><g|
        if (bit == 1) sm(f, i) = 1.0;                     // sigma_- = |g><e|
      }
    }
    ops.sx.push_back(std::move(sx));
    ops.sy.push_back(std::move(sy));
    ops.sz.push_back(std::move(sz));
    ops.sp.push_back(std::move(sp));
    ops.sm.push_back(std::move(sm));
  }
  return ops;
}

// ---------------------------------------------------------------------------
// State builders

namespace {

// Coherent-state amplitudes alpha^n / sqrt(n!) * exp(-|alpha|^2/2) up to n_max
// (exclusive), accumulated iteratively for stability.
std::vector<cxd> coherent_amps(cxd alpha, std::size_t n_max) {
  std::vector<cxd> c(n_max);
  cxd cur = std::exp(cxd(-0.5 * std::norm(alpha), 0.0));
  for (std::size_t n = 0; n < n_max; ++n) {
    c[n] = cur;
    cur *= alpha / std::sqrt(static_cast<double>(n + 1));
  }
  return c;
}

// Normalised Hermite functions psi_n(x) for n < n_max, convention
// x = (a + a^dag)/sqrt(2).
std::vector<double> hermite_functions(double x, std::size_t n_max) {
  std::vector<double> h(n_max, 0.0);
  if (n_max == 0) return h;
  double h0 = std::pow(kPi, -0.25) * std::exp(-0.5 * x * x);
  h[0] = h0;
  if (n_max > 1) h[1] = std::sqrt(2.0) * x * h0;
  for (std::size_t n = 1; n + 1 < n_max; ++n) {
    double np1 = static_cast<double>(n + 1);
    h[n + 1] = std::sqrt(2.0 / np1) * x * h[n] - std::sqrt(static_cast<double>(n) / np1) * h[n - 1];
  }
  return h;
}

struct CavityKet {
  std::vector<cxd> amps;  // length = cutoff, normalised
  double leakage;
};

// Truncate a cavity state given by amplitudes on an extended range, report the
// norm fraction lost, and renormalise. Throws when leakage exceeds tol.
CavityKet truncate_and_normalize(const std::vector<cxd>& ext, std::size_t cutoff, double tol,
                                 const char* what) {
  double full = 0.0, kept = 0.0;
  for (std::size_t n = 0; n < ext.size(); ++n) {
    full += std::norm(ext[n]);
    if (n < cutoff) kept += std::norm(ext[n]);
  }
  if (full <= 0.0) throw StateError(std::string(what) + ": zero-norm construction");
  double leak = 1.0 - kept / full;
  if (leak > tol) {
    std::ostringstream os;
    os << what << ": truncation leakage " << leak << " exceeds tolerance " << tol
       << " at fock_cutoff " << cutoff;
    throw TruncationError(os.str(), leak);
  }
  CavityKet out;
  out.amps.assign(ext.begin(), ext.begin() + std::min<std::size_t>(cutoff, ext.size()));
  out.amps.resize(cutoff, cxd(0.0, 0.0));
  double s = std::sqrt(kept);
  for (auto& z : out.amps) z /= s;
  out.leakage = leak;
  return out;
}

CavityKet build_cavity_ket(const HilbertLayout& layout, const StateSpec& spec) {
  const std::size_t N = layout.fock_cutoff;
  switch (spec.kind) {
    case StateKind::Ground:
    case StateKind::Fock: {
      std::size_t n = spec.kind == StateKind::Ground ? 0 : static_cast<std::size_t>(spec.fock_n);
      if (spec.kind == StateKind::Fock && (spec.fock_n < 0 || n >= N))
        throw TruncationError("fock state index beyond cutoff", 1.0);
      CavityKet out;
      out.amps.assign(N, cxd(0.0, 0.0));
      out.amps[n] = 1.0;
      out.leakage = 0.0;
      return out;
    }
    case StateKind::Coherent: {
      std::size_t ext = N + static_cast<std::size_t>(std::ceil(std::norm(spec.alpha) + 20.0 * std::abs(spec.alpha))) + 64;
      return truncate_and_normalize(coherent_amps(spec.alpha, ext), N, spec.leakage_tol, "coherent");
    }
    case StateKind::Kitten2:
    case StateKind::Kitten4: {
      int legs = spec.kind == StateKind::Kitten2 ? 2 : 4;
      std::size_t ext = N + static_cast<std::size_t>(std::ceil(std::norm(spec.alpha) + 20.0 * std::abs(spec.alpha))) + 64;
      std::vector<cxd> sum(ext, cxd(0.0, 0.0));
      cxd rot = legs == 2 ? cxd(-1.0, 0.0) : cxd(0.0, 1.0);
      cxd amp = spec.alpha;
      for (int leg = 0; leg < legs; ++leg) {
        auto c = coherent_amps(amp, ext);
        for (std::size_t n = 0; n < ext; ++n) sum[n] += c[n];
        amp *= rot;
      }
      return truncate_and_normalize(sum, N, spec.leakage_tol, legs == 2 ? "kitten2" : "kitten4");
    }
    case StateKind::Gkp: {
      if (spec.delta <= 0.0) throw StateError("gkp: envelope delta must be positive");
      const double step = std::sqrt(2.0 * kPi);
      const std::size_t ext = N + 160;
      std::vector<double> comb = hermite_functions(0.0, ext);
      double total = 0.0;
      auto weighted_norm2 = [&](const std::vector<double>& h) {
        double s = 0.0;
        for (std::size_t n = 0; n < ext; ++n) {
          double w = h[n] * std::exp(-spec.delta * spec.delta * static_cast<double>(n));
          s += w * w;
        }
        return s;
      };
      total = weighted_norm2(comb);
      for (int j = 1; j <= 64; ++j) {
        auto h = hermite_functions(step * j, ext);
        double add = weighted_norm2(h);
        for (std::size_t n = 0; n < ext; ++n) {
          // +j and -j together; odd n cancels, even n doubles
          comb[n] += (n % 2 == 0) ? 2.0 * h[n] : 0.0;
        }
        total += 4.0 * add;
        if (add / total < 1e-16) break;  // pair tail below 1e-8 in amplitude
      }
      std::vector<cxd> amps(ext);
      for (std::size_t n = 0; n < ext; ++n)
        amps[n] = comb[n] * std::exp(-spec.delta * spec.delta * static_cast<double>(n));
      return truncate_and_normalize(amps, N, spec.leakage_tol, "gkp");
    }
    default:
      throw StateError("build_cavity_ket: not a pure cavity state kind");
  }
}

}  // namespace

StateBuild build_state(const HilbertLayout& layout, const StateSpec& spec) {
  layout.validate();
  const std::size_t D = layout.dim(), Q = layout.qdim(), N = layout.fock_cutoff;

  if (spec.kind == StateKind::Thermal) {
    if (spec.nbar < 0.0) throw StateError("thermal: nbar must be non-negative");
    StateBuild out;
    if (spec.nbar == 0.0) {
      out.pure = true;
      out.ket = Ket::basis(D, layout.index(0, 0));
      out.dm = DensityMatrix::pure(out.ket);
      out.leakage = 0.0;
      return out;
    }
    double q = spec.nbar / (spec.nbar + 1.0);
    double leak = std::pow(q, static_cast<double>(N));
    if (leak > spec.leakage_tol) {
      std::ostringstream os;
      os << "thermal: truncation leakage " << leak << " exceeds tolerance " << spec.leakage_tol
         << " at fock_cutoff " << N;
      throw TruncationError(os.str(), leak);
    }
    double norm = (1.0 - std::pow(q, static_cast<double>(N))) / (1.0 - q);
    ComplexMatrix m(D, D);
    for (std::size_t n = 0; n < N; ++n)
      m(layout.index(n, 0), layout.index(n, 0)) = std::pow(q, static_cast<double>(n)) / norm;
    out.pure = false;
    out.dm = DensityMatrix::from_unchecked(std::move(m));
    out.leakage = leak;
    return out;
  }

  CavityKet ck = build_cavity_ket(layout, spec);
  std::vector<cxd> full(D, cxd(0.0, 0.0));
  for (std::size_t n = 0; n < N; ++n) full[layout.index(n, 0)] = ck.amps[n];
  (void)Q;
  StateBuild out;
  out.pure = true;
  out.ket = Ket::from_unchecked(std::move(full));
  out.dm = DensityMatrix::pure(out.ket);
  out.leakage = ck.leakage;
  return out;
}

// ---------------------------------------------------------------------------
// Functionals

double purity(const DensityMatrix& rho) {
  return std::real(trace_prod(rho.matrix(), rho.matrix()));
}

double fidelity(const DensityMatrix& rho, const DensityMatrix& sigma) {
  if (rho.dim() != sigma.dim()) throw DimensionError("fidelity: dimension mismatch");
  if (std::abs(purity(sigma) - 1.0) < 1e-10)
    return std::clamp(std::real(trace_prod(sigma.matrix(), rho.matrix())), 0.0, 1.0 + 1e-9);
  if (std::abs(purity(rho) - 1.0) < 1e-10)
    return std::clamp(std::real(trace_prod(rho.matrix(), sigma.matrix())), 0.0, 1.0 + 1e-9);
  // Uhlmann: (tr sqrt(sqrt(sigma) rho sqrt(sigma)))^2
  EigHerm es = eig_hermitian(sigma.matrix());
  const std::size_t n = sigma.dim();
  ComplexMatrix w = es.vectors;
  ComplexMatrix sq(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double lam = std::sqrt(std::max(0.0, es.values[j]));
    for (std::size_t i = 0; i < n; ++i) sq(i, j) = w(i, j) * lam;
  }
  ComplexMatrix root = sq * w.dagger();  // sqrt(sigma)
  ComplexMatrix mid = root * rho.matrix() * root;
  EigHerm em = eig_hermitian(mid);
  double s = 0.0;
  for (double lam : em.values) s += std::sqrt(std::max(0.0, lam));
  return s * s;
}

double fidelity(const DensityMatrix& rho, const Ket& target) {
  if (rho.dim() != target.dim()) throw DimensionError("fidelity: dimension mismatch");
  cxd s = 0.0;
  for (std::size_t i = 0; i < rho.dim(); ++i)
    for (std::size_t j = 0; j < rho.dim(); ++j)
      s += std::conj(target[i]) * rho.matrix()(i, j) * target[j];
  return std::clamp(std::real(s), 0.0, 1.0 + 1e-9);
}

double fidelity(const Ket& psi, const Ket& target) { return std::norm(inner(target, psi)); }

// ---------------------------------------------------------------------------
// Displacement and Wigner

namespace {

struct DispGen {
  EigHerm eig;  // of H0 = i(a^dag - a)
};

const DispGen& disp_gen(std::size_t dim) {
  static std::mutex mu;
  static std::map<std::size_t, DispGen> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(dim);
  if (it != cache.end()) return it->second;
  ComplexMatrix h(dim, dim);
  for (std::size_t n = 1; n < dim; ++n) {
    double r = std::sqrt(static_cast<double>(n));
    h(n, n - 1) = cxd(0.0, 1.0) * r;   // i a^dag
    h(n - 1, n) = cxd(0.0, -1.0) * r;  // -i a
  }
  DispGen g;
  g.eig = eig_hermitian(h);
  return cache.emplace(dim, std::move(g)).first->second;
}

}  // namespace

const EigHerm& displacement_generator_eig(std::size_t dim) { return disp_gen(dim).eig; }

ComplexMatrix displacement_matrix(std::size_t dim, cxd alpha) {
  const DispGen& g = disp_gen(dim);
  double r = std::abs(alpha);
  double phi = r == 0.0 ? 0.0 : std::arg(alpha);
  // D(alpha) = P_phi exp(-i r H0) P_phi^dag with P_phi = diag(e^{i phi n})
  ComplexMatrix vp(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    cxd ph = std::exp(cxd(0.0, phi * static_cast<double>(i)));
    for (std::size_t j = 0; j < dim; ++j) vp(i, j) = ph * g.eig.vectors(i, j);
  }
  ComplexMatrix t(dim, dim);
  for (std::size_t j = 0; j < dim; ++j) {
    cxd ph = std::exp(cxd(0.0, -r * g.eig.values[j]));
    for (std::size_t i = 0; i < dim; ++i) t(i, j) = vp(i, j) * ph;
  }
  return t * vp.dagger();
}

DensityMatrix trace_out_qubits(const HilbertLayout& layout, const DensityMatrix& rho) {
  layout.validate();
  if (rho.dim() != layout.dim()) throw DimensionError("trace_out_qubits: dimension mismatch");
  const std::size_t N = layout.fock_cutoff, Q = layout.qdim();
  ComplexMatrix m(N, N);
  for (std::size_t a = 0; a < N; ++a)
    for (std::size_t b = 0; b < N; ++b) {
      cxd s = 0.0;
      for (std::size_t q = 0; q < Q; ++q) s += rho.matrix()(layout.index(a, q), layout.index(b, q));
      m(a, b) = s;
    }
  return DensityMatrix::from_unchecked(std::move(m));
}

WignerGrid wigner_grid(const DensityMatrix& rho, const std::vector<double>& xs,
                       const std::vector<double>& ps) {
  const std::size_t d = rho.dim();
  WignerGrid grid;
  grid.xs = xs;
  grid.ps = ps;
  grid.w.assign(xs.size() * ps.size(), 0.0);
  for (std::size_t ip = 0; ip < ps.size(); ++ip) {
    for (std::size_t ix = 0; ix < xs.size(); ++ix) {
      cxd alpha(xs[ix] / std::sqrt(2.0), ps[ip] / std::sqrt(2.0));
      ComplexMatrix dm = displacement_matrix(d, alpha);
      ComplexMatrix b = rho.matrix() * dm;
      // sum_n (-1)^n [D^dag rho D]_nn = sum_n (-1)^n sum_r conj(D_rn) B_rn
      double w = 0.0;
      for (std::size_t n = 0; n < d; ++n) {
        cxd s = 0.0;
        for (std::size_t r = 0; r < d; ++r) s += std::conj(dm(r, n)) * b(r, n);
        w += (n % 2 == 0 ? 1.0 : -1.0) * std::real(s);
      }
      grid.w[ip * xs.size() + ix] = w / kPi;
    }
  }
  return grid;
}

namespace {

ComplexMatrix gkp_stabilizer(std::size_t dim, double delta, bool momentum) {
  if (delta <= 0.0) throw StateError("gkp stabilizer: delta must be positive");
  cxd arg = momentum ? cxd(0.0, std::sqrt(kPi)) : cxd(std::sqrt(kPi), 0.0);
  ComplexMatrix d = displacement_matrix(dim, arg);
  ComplexMatrix s(dim, dim);
  for (std::size_t m = 0; m < dim; ++m)
    for (std::size_t n = 0; n < dim; ++n)
      s(m, n) = d(m, n) * std::exp(delta * delta * (static_cast<double>(n) - static_cast<double>(m)));
  double big = s.max_abs();
  if (!(big < 1e6)) {
    std::ostringstream os;
    os << "gkp stabilizer: inverse-envelope amplification unsafe at fock_cutoff " << dim
       << " (max element " << big << "); increase fock_cutoff or reduce delta";
    throw NumericalError(os.str());
  }
  return s;
}

}  // namespace

ComplexMatrix gkp_stabilizer_x(std::size_t dim, double delta) {
  return gkp_stabilizer(dim, delta, false);
}

ComplexMatrix gkp_stabilizer_p(std::size_t dim, double delta) {
  return gkp_stabilizer(dim, delta, true);
}

}  // namespace fgrape::qcore
