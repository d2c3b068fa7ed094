// SPDX-License-Identifier: Apache-2.0

#include "fgrape/gates.hpp"

#include <cmath>
#include <sstream>

namespace fgrape::gates {

using qcore::ComplexMatrix;
using qcore::EigHerm;
using qcore::HilbertLayout;

namespace {

void check_arity(const std::vector<double>& p, std::size_t want, const char* family) {
  if (p.size() != want) {
    std::ostringstream os;
    os << family << ": expected " << want << " control components, got " << p.size();
    throw DimensionError(os.str());
  }
}

struct Block2 {
  cxd u00, u01, u10, u11;
};

// U = exp(-i G / 2) on a two-level block with G = [[0, z], [conj(z), 0]].
Block2 block_rot(cxd z) {
  double r = std::abs(z);
  double c = std::cos(0.5 * r);
  double f = r < 1e-8 ? 0.5 - r * r / 48.0 : std::sin(0.5 * r) / r;
  cxd mif(0.0, -f);
  return {cxd(c, 0.0), mif * z, mif * std::conj(z), cxd(c, 0.0)};
}

// Directional derivative of block_rot when the parameter moves z by dz.
Block2 block_rot_deriv(cxd z, cxd dz) {
  double r = std::abs(z);
  cxd mi(0.0, -1.0);
  if (r < 1e-12) return {cxd(0.0, 0.0), 0.5 * mi * dz, 0.5 * mi * std::conj(dz), cxd(0.0, 0.0)};
  double rd = (std::real(z) * std::real(dz) + std::imag(z) * std::imag(dz)) / r;
  double c = std::cos(0.5 * r), s = std::sin(0.5 * r);
  double f = r < 1e-8 ? 0.5 - r * r / 48.0 : s / r;
  double fp = r < 1e-6 ? -r / 24.0 : (0.5 * c * r - s) / (r * r);  // d(sin(r/2)/r)/dr
  cxd dc(-0.5 * s * rd, 0.0);
  cxd d01 = mi * (fp * rd * z + f * dz);
  cxd d10 = mi * (fp * rd * std::conj(z) + f * std::conj(dz));
  return {dc, d01, d10, dc};
}

cxd param_alpha(const std::vector<double>& p, bool complex_mode) {
  return complex_mode ? cxd(p[0], p[1]) : cxd(p[0], 0.0);
}

void check_slot(const HilbertLayout& l, std::size_t slot) {
  if (slot >= l.qubit_slots) throw LayoutError("gate references a qubit slot the layout lacks");
}

}  // namespace

std::size_t family_arity(GateFamily f, const FamilyConfig& cfg) {
  switch (f) {
    case GateFamily::JcDrive:
    case GateFamily::JcInteraction:
      return cfg.complex_jc ? 2 : 1;
    case GateFamily::DispersiveMeas:
      return 2;
    case GateFamily::SnapBlock:
      return 2 + cfg.n_snap;
    case GateFamily::Displacement:
      return 2;
    case GateFamily::SpinRotation:
      return 1;
  }
  throw ConfigError("unknown gate family");
}

std::vector<std::string> family_component_names(GateFamily f, const FamilyConfig& cfg) {
  switch (f) {
    case GateFamily::JcDrive:
      return cfg.complex_jc ? std::vector<std::string>{"re_alpha", "im_alpha"}
                            : std::vector<std::string>{"alpha"};
    case GateFamily::JcInteraction:
      return cfg.complex_jc ? std::vector<std::string>{"re_beta", "im_beta"}
                            : std::vector<std::string>{"beta"};
    case GateFamily::DispersiveMeas:
      return {"gamma", "delta"};
    case GateFamily::SnapBlock: {
      std::vector<std::string> names = {"re_alpha", "im_alpha"};
      for (std::size_t i = 0; i < cfg.n_snap; ++i) names.push_back("phi_" + std::to_string(i));
      return names;
    }
    case GateFamily::Displacement:
      return {"re_alpha", "im_alpha"};
    case GateFamily::SpinRotation:
      return {"tau"};
  }
  throw ConfigError("unknown gate family");
}

ComplexMatrix embed_cavity(const HilbertLayout& l, const ComplexMatrix& cav) {
  if (cav.rows() != l.fock_cutoff || cav.cols() != l.fock_cutoff)
    throw DimensionError("embed_cavity: operator does not match fock_cutoff");
  const std::size_t Q = l.qdim();
  ComplexMatrix full(l.dim(), l.dim());
  for (std::size_t m = 0; m < l.fock_cutoff; ++m)
    for (std::size_t n = 0; n < l.fock_cutoff; ++n) {
      cxd v = cav(m, n);
      if (v == cxd(0.0, 0.0)) continue;
      for (std::size_t b = 0; b < Q; ++b) full(l.index(m, b), l.index(n, b)) = v;
    }
  return full;
}

GateResult jc_qubit_drive(const HilbertLayout& l, const std::vector<double>& p, bool complex_mode,
                          std::size_t slot) {
  l.validate();
  check_slot(l, slot);
  check_arity(p, complex_mode ? 2 : 1, "jc_qubit_drive");
  cxd alpha = param_alpha(p, complex_mode);
  // Block basis (|n,g>, |n,e>) for the chosen slot: G = [[0, alpha*], [alpha, 0]].
  cxd z = std::conj(alpha);
  Block2 u = block_rot(z);
  std::vector<Block2> d;
  d.push_back(block_rot_deriv(z, cxd(1.0, 0.0)));
  if (complex_mode) d.push_back(block_rot_deriv(z, cxd(0.0, -1.0)));  // dz/d(Im alpha) = conj(i)

  const std::size_t D = l.dim(), mask = std::size_t(1) << (l.qubit_slots - 1 - slot);
  GateResult out;
  out.u = ComplexMatrix::identity(D);
  for (std::size_t k = 0; k < d.size(); ++k) out.du.emplace_back(D, D);
  for (std::size_t n = 0; n < l.fock_cutoff; ++n) {
    for (std::size_t b = 0; b < l.qdim(); ++b) {
      if (b & mask) continue;  // enumerate ground-slot states once per pair
      std::size_t i0 = l.index(n, b), i1 = l.index(n, b | mask);
      out.u(i0, i0) = u.u00;
      out.u(i0, i1) = u.u01;
      out.u(i1, i0) = u.u10;
      out.u(i1, i1) = u.u11;
      for (std::size_t k = 0; k < d.size(); ++k) {
        out.du[k](i0, i0) = d[k].u00;
        out.du[k](i0, i1) = d[k].u01;
        out.du[k](i1, i0) = d[k].u10;
        out.du[k](i1, i1) = d[k].u11;
      }
    }
  }
  return out;
}

GateResult jc_interaction(const HilbertLayout& l, const std::vector<double>& p, bool complex_mode,
                          std::size_t slot) {
  l.validate();
  check_slot(l, slot);
  check_arity(p, complex_mode ? 2 : 1, "jc_interaction");
  cxd beta = param_alpha(p, complex_mode);

  const std::size_t D = l.dim(), mask = std::size_t(1) << (l.qubit_slots - 1 - slot);
  GateResult out;
  out.u = ComplexMatrix::identity(D);
  std::size_t nparam = complex_mode ? 2 : 1;
  for (std::size_t k = 0; k < nparam; ++k) out.du.emplace_back(D, D);
  for (std::size_t n = 0; n + 1 < l.fock_cutoff; ++n) {
    double root = std::sqrt(static_cast<double>(n + 1));
    // Block basis (|n,e>, |n+1,g>): G = [[0, beta sqrt(n+1)], [conj, 0]].
    cxd z = beta * root;
    Block2 u = block_rot(z);
    Block2 dx = block_rot_deriv(z, cxd(root, 0.0));
    Block2 dy = block_rot_deriv(z, cxd(0.0, root));
    for (std::size_t b = 0; b < l.qdim(); ++b) {
      if (b & mask) continue;
      std::size_t i0 = l.index(n, b | mask), i1 = l.index(n + 1, b);
      out.u(i0, i0) = u.u00;
      out.u(i0, i1) = u.u01;
      out.u(i1, i0) = u.u10;
      out.u(i1, i1) = u.u11;
      const Block2* dd[2] = {&dx, &dy};
      for (std::size_t k = 0; k < nparam; ++k) {
        out.du[k](i0, i0) = dd[k]->u00;
        out.du[k](i0, i1) = dd[k]->u01;
        out.du[k](i1, i0) = dd[k]->u10;
        out.du[k](i1, i1) = dd[k]->u11;
      }
    }
  }
  return out;
}

channels::MeasurementFamily dispersive_povm(const HilbertLayout& l, double gamma, double delta) {
  l.validate();
  const std::size_t D = l.dim();
  channels::MeasurementFamily fam;
  fam.kind = channels::MeasurementFamily::Kind::Discrete;
  fam.outcomes = {+1, -1};
  fam.diagonal = true;
  fam.diag.assign(2, std::vector<double>(D, 0.0));
  fam.ddiag.assign(2, std::vector<std::vector<double>>(2, std::vector<double>(D, 0.0)));
  for (std::size_t n = 0; n < l.fock_cutoff; ++n) {
    double arg = gamma * static_cast<double>(n) + 0.5 * delta;
    double c = std::cos(arg), s = std::sin(arg), nn = static_cast<double>(n);
    for (std::size_t b = 0; b < l.qdim(); ++b) {
      std::size_t i = l.index(n, b);
      fam.diag[0][i] = c;
      fam.diag[1][i] = s;
      fam.ddiag[0][0][i] = -nn * s;  // d cos / d gamma
      fam.ddiag[0][1][i] = -0.5 * s;
      fam.ddiag[1][0][i] = nn * c;
      fam.ddiag[1][1][i] = 0.5 * c;
    }
  }
  for (std::size_t o = 0; o < 2; ++o) {
    ComplexMatrix m(D, D);
    for (std::size_t i = 0; i < D; ++i) m(i, i) = fam.diag[o][i];
    fam.ops.push_back(std::move(m));
    std::vector<ComplexMatrix> dm;
    for (std::size_t k = 0; k < 2; ++k) {
      ComplexMatrix d(D, D);
      for (std::size_t i = 0; i < D; ++i) d(i, i) = fam.ddiag[o][k][i];
      dm.push_back(std::move(d));
    }
    fam.dops.push_back(std::move(dm));
  }
  return fam;
}

GateResult snap(const HilbertLayout& l, const std::vector<double>& phases) {
  l.validate();
  if (phases.size() > l.fock_cutoff)
    throw DimensionError("snap: more phases than Fock levels");
  const std::size_t D = l.dim();
  GateResult out;
  out.u = ComplexMatrix::identity(D);
  for (std::size_t k = 0; k < phases.size(); ++k) out.du.emplace_back(D, D);
  for (std::size_t n = 0; n < phases.size(); ++n) {
    cxd ph = std::exp(cxd(0.0, phases[n]));
    for (std::size_t b = 0; b < l.qdim(); ++b) {
      std::size_t i = l.index(n, b);
      out.u(i, i) = ph;
      out.du[n](i, i) = cxd(0.0, 1.0) * ph;
    }
  }
  return out;
}

namespace {

// Cavity-dimension displacement with derivatives; shared by displacement_gate
// and snap_block. All spectra come from the cached generator decomposition:
// H(x, y) = P (r H0) P^dag, so no per-call eigensolve is needed.
struct CavityDisplacement {
  ComplexMatrix u;
  ComplexMatrix dux, duy;
};

CavityDisplacement cavity_displacement(std::size_t dim, double x, double y) {
  const EigHerm& gen = qcore::displacement_generator_eig(dim);
  double r = std::hypot(x, y);
  double phi = r == 0.0 ? 0.0 : std::atan2(y, x);

  ComplexMatrix v(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    cxd ph = std::exp(cxd(0.0, phi * static_cast<double>(i)));
    for (std::size_t j = 0; j < dim; ++j) v(i, j) = ph * gen.vectors(i, j);
  }
  std::vector<double> lam(dim);
  for (std::size_t j = 0; j < dim; ++j) lam[j] = r * gen.values[j];

  ComplexMatrix t(dim, dim);
  for (std::size_t j = 0; j < dim; ++j) {
    cxd e = std::exp(cxd(0.0, -lam[j]));
    for (std::size_t i = 0; i < dim; ++i) t(i, j) = v(i, j) * e;
  }
  ComplexMatrix vd = v.dagger();
  CavityDisplacement out;
  out.u = t * vd;

  // dU = V (F o (V^dag dH V)) V^dag with the exact divided difference
  // F_ij = -i e^{-i mu} sinc(D/2), mu = (l_i + l_j)/2, D = l_i - l_j.
  ComplexMatrix f(dim, dim);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      double mu = 0.5 * (lam[i] + lam[j]), hd = 0.5 * (lam[i] - lam[j]);
      double sinc = std::abs(hd) < 1e-8 ? 1.0 - hd * hd / 6.0 : std::sin(hd) / hd;
      f(i, j) = cxd(0.0, -1.0) * std::exp(cxd(0.0, -mu)) * sinc;
    }

  // dH/dx = i(a^dag - a), dH/dy = -(a + a^dag): both tridiagonal-sparse.
  auto deriv_for = [&](bool is_x) {
    ComplexMatrix b(dim, dim);  // dH * V
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        cxd acc = 0.0;
        if (i > 0) {
          double root = std::sqrt(static_cast<double>(i));
          acc += (is_x ? cxd(0.0, root) : cxd(-root, 0.0)) * v(i - 1, j);
        }
        if (i + 1 < dim) {
          double root = std::sqrt(static_cast<double>(i + 1));
          acc += (is_x ? cxd(0.0, -root) : cxd(-root, 0.0)) * v(i + 1, j);
        }
        b(i, j) = acc;
      }
    }
    ComplexMatrix w = vd * b;
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) w(i, j) *= f(i, j);
    return ComplexMatrix(v * w * vd);
  };
  out.dux = deriv_for(true);
  out.duy = deriv_for(false);
  return out;
}

}  // namespace

GateResult displacement_gate(const HilbertLayout& l, const std::vector<double>& p) {
  l.validate();
  check_arity(p, 2, "displacement");
  CavityDisplacement cd = cavity_displacement(l.fock_cutoff, p[0], p[1]);
  double a2 = p[0] * p[0] + p[1] * p[1];
  if (a2 > 0.25 * static_cast<double>(l.fock_cutoff)) {
    ComplexMatrix g = cd.u.dagger() * cd.u;
    for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
    double err = g.max_abs();
    std::ostringstream os;
    os << "displacement |alpha|^2=" << a2 << " exceeds fock_cutoff/4=" << 0.25 * l.fock_cutoff
       << "; measured non-unitarity " << err;
    warn(os.str());
    if (err > 1e-9) {
      // polar projection U (U^dag U)^{-1/2}; gradient stays unprojected
      for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) += 1.0;
      EigHerm eg = qcore::eig_hermitian(g);
      ComplexMatrix inv_root(g.rows(), g.rows());
      for (std::size_t j = 0; j < g.rows(); ++j) {
        double val = 1.0 / std::sqrt(std::max(eg.values[j], 1e-300));
        for (std::size_t i = 0; i < g.rows(); ++i) inv_root(i, j) = eg.vectors(i, j) * val;
      }
      cd.u = cd.u * (inv_root * eg.vectors.dagger());
    }
  }
  GateResult out;
  out.u = embed_cavity(l, cd.u);
  out.du.push_back(embed_cavity(l, cd.dux));
  out.du.push_back(embed_cavity(l, cd.duy));
  return out;
}

GateResult snap_block(const HilbertLayout& l, const std::vector<double>& p) {
  l.validate();
  if (p.size() < 2) throw DimensionError("snap_block: needs at least (Re alpha, Im alpha)");
  std::vector<double> phases(p.begin() + 2, p.end());
  if (phases.size() > l.fock_cutoff)
    throw DimensionError("snap_block: more phases than Fock levels");
  const std::size_t N = l.fock_cutoff;

  CavityDisplacement fwd = cavity_displacement(N, p[0], p[1]);
  CavityDisplacement bwd = cavity_displacement(N, -p[0], -p[1]);
  ComplexMatrix s(N, N);
  std::vector<cxd> ph(N, cxd(1.0, 0.0));
  for (std::size_t n = 0; n < phases.size(); ++n) ph[n] = std::exp(cxd(0.0, phases[n]));
  for (std::size_t n = 0; n < N; ++n) s(n, n) = ph[n];

  // U = D(alpha) S D(-alpha); columns of D(alpha) get phased, then D(-alpha).
  ComplexMatrix fs = fwd.u;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) fs(i, j) *= ph[j];
  ComplexMatrix u = fs * bwd.u;

  GateResult out;
  out.u = embed_cavity(l, u);
  // d/dx: dD(alpha) S D(-alpha) - D(alpha) S [dD/dRe at -alpha]  (chain rule)
  for (int k = 0; k < 2; ++k) {
    const ComplexMatrix& dfwd = k == 0 ? fwd.dux : fwd.duy;
    const ComplexMatrix& dbwd = k == 0 ? bwd.dux : bwd.duy;
    ComplexMatrix dfs = dfwd;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) dfs(i, j) *= ph[j];
    ComplexMatrix du = dfs * bwd.u;
    ComplexMatrix::mul_acc(du, fs, dbwd, cxd(-1.0, 0.0));
    out.du.push_back(embed_cavity(l, du));
  }
  // d/d phi_n = i e^{i phi_n} D[:, n] outer Dinv[n, :]
  for (std::size_t n = 0; n < phases.size(); ++n) {
    ComplexMatrix du(N, N);
    cxd scale = cxd(0.0, 1.0) * ph[n];
    for (std::size_t i = 0; i < N; ++i) {
      cxd left = fwd.u(i, n) * scale;
      if (left == cxd(0.0, 0.0)) continue;
      for (std::size_t j = 0; j < N; ++j) du(i, j) = left * bwd.u(n, j);
    }
    out.du.push_back(embed_cavity(l, du));
  }
  return out;
}

GateResult spin_rotation(double g, const std::vector<double>& p) {
  check_arity(p, 1, "spin_rotation");
  cxd z(g * p[0], 0.0);  // G = g tau sigma_x
  Block2 u = block_rot(z);
  Block2 d = block_rot_deriv(z, cxd(g, 0.0));
  GateResult out;
  out.u = ComplexMatrix(2, 2);
  out.u(0, 0) = u.u00;
  out.u(0, 1) = u.u01;
  out.u(1, 0) = u.u10;
  out.u(1, 1) = u.u11;
  out.du.emplace_back(2, 2);
  out.du[0](0, 0) = d.u00;
  out.du[0](0, 1) = d.u01;
  out.du[0](1, 0) = d.u10;
  out.du[0](1, 1) = d.u11;
  return out;
}

}  // namespace fgrape::gates
