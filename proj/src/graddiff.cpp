// SPDX-License-Identifier: Apache-2.0

#include "fgrape/graddiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fgrape::graddiff {

using qcore::ComplexMatrix;
using qcore::HilbertLayout;

namespace {

const char* kind_name(Tape::Kind k) {
  switch (k) {
    case Tape::Kind::LeafTheta: return "leaf_theta";
    case Tape::Kind::ConstMat: return "const_mat";
    case Tape::Kind::ConstVec: return "const_vec";
    case Tape::Kind::SliceVec: return "slice_vec";
    case Tape::Kind::Concat: return "concat";
    case Tape::Kind::MatVec: return "matvec";
    case Tape::Kind::VAdd: return "vadd";
    case Tape::Kind::VMul: return "vmul";
    case Tape::Kind::VMulConst: return "vmul_const";
    case Tape::Kind::VRelu: return "vrelu";
    case Tape::Kind::VSigmoid: return "vsigmoid";
    case Tape::Kind::VTanh: return "vtanh";
    case Tape::Kind::VOneMinus: return "vone_minus";
    case Tape::Kind::VecGet: return "vec_get";
    case Tape::Kind::Log: return "log";
    case Tape::Kind::GateKet: return "gate_ket";
    case Tape::Kind::GateDm: return "gate_dm";
    case Tape::Kind::Lindblad: return "lindblad";
    case Tape::Kind::PovmProbKet: return "povm_prob_ket";
    case Tape::Kind::PovmPostKet: return "povm_post_ket";
    case Tape::Kind::PovmProbDm: return "povm_prob_dm";
    case Tape::Kind::PovmPostDm: return "povm_post_dm";
    case Tape::Kind::KetRenorm: return "ket_renorm";
    case Tape::Kind::DmScaleInv: return "dm_scale_inv";
    case Tape::Kind::Purity: return "purity";
    case Tape::Kind::ExpectConst: return "expect_const";
    case Tape::Kind::ExpectKetConst: return "expect_ket_const";
    case Tape::Kind::MatToVec: return "mat_to_vec";
    case Tape::Kind::ContDensity: return "cont_density";
    case Tape::Kind::CumTrapz: return "cum_trapz";
    case Tape::Kind::PwlInvert: return "pwl_invert";
    case Tape::Kind::ContProb: return "cont_prob";
    case Tape::Kind::ContPost: return "cont_post";
    case Tape::Kind::EigVals: return "eigvals";
  }
  return "?";
}

double gauss_density(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi); }

// Diagonal entry i of a ket-or-density node value: |psi_i|^2 or Re rho_ii.
double diag_weight(const ComplexMatrix& v, std::size_t i) {
  return v.cols() == 1 ? std::norm(v(i, 0)) : std::real(v(i, i));
}

}  // namespace

std::size_t Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

std::size_t Tape::leaf_theta(const std::vector<double>& theta) {
  if (theta_node_ != kNoNode) throw ConfigError("tape already has a parameter leaf");
  Node n;
  n.kind = Kind::LeafTheta;
  n.vval = theta;
  theta_node_ = nodes_.size();
  return push(std::move(n));
}

std::size_t Tape::const_mat(ComplexMatrix m) {
  Node n;
  n.kind = Kind::ConstMat;
  n.mval = std::move(m);
  n.is_mat = true;
  return push(std::move(n));
}

std::size_t Tape::const_vec(std::vector<double> v) {
  Node n;
  n.kind = Kind::ConstVec;
  n.vval = std::move(v);
  return push(std::move(n));
}

std::size_t Tape::slice_vec(std::size_t x, std::size_t offset, std::size_t len) {
  const auto& src = rvec(x);
  if (offset + len > src.size()) throw DimensionError("slice_vec: out of range");
  Node n;
  n.kind = Kind::SliceVec;
  n.in = {x};
  n.i0 = offset;
  n.i1 = len;
  n.vval.assign(src.begin() + offset, src.begin() + offset + len);
  return push(std::move(n));
}

std::size_t Tape::concat(const std::vector<std::size_t>& xs) {
  Node n;
  n.kind = Kind::Concat;
  n.in = xs;
  for (std::size_t x : xs) {
    const auto& v = rvec(x);
    n.vval.insert(n.vval.end(), v.begin(), v.end());
  }
  return push(std::move(n));
}

std::size_t Tape::matvec(std::size_t w, std::size_t x, std::size_t rows, std::size_t cols) {
  const auto& wv = rvec(w);
  const auto& xv = rvec(x);
  if (wv.size() != rows * cols || xv.size() != cols)
    throw DimensionError("matvec: shape mismatch");
  Node n;
  n.kind = Kind::MatVec;
  n.in = {w, x};
  n.i0 = rows;
  n.i1 = cols;
  n.vval.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += wv[r * cols + c] * xv[c];
    n.vval[r] = s;
  }
  return push(std::move(n));
}

std::size_t Tape::vadd(std::size_t a, std::size_t b) {
  const auto& av = rvec(a);
  const auto& bv = rvec(b);
  if (av.size() != bv.size()) throw DimensionError("vadd: length mismatch");
  Node n;
  n.kind = Kind::VAdd;
  n.in = {a, b};
  n.vval = av;
  for (std::size_t i = 0; i < bv.size(); ++i) n.vval[i] += bv[i];
  return push(std::move(n));
}

std::size_t Tape::vmul(std::size_t a, std::size_t b) {
  const auto& av = rvec(a);
  const auto& bv = rvec(b);
  if (av.size() != bv.size()) throw DimensionError("vmul: length mismatch");
  Node n;
  n.kind = Kind::VMul;
  n.in = {a, b};
  n.vval = av;
  for (std::size_t i = 0; i < bv.size(); ++i) n.vval[i] *= bv[i];
  return push(std::move(n));
}

std::size_t Tape::vmul_const(std::size_t a, std::vector<double> c) {
  const auto& av = rvec(a);
  if (av.size() != c.size()) throw DimensionError("vmul_const: length mismatch");
  Node n;
  n.kind = Kind::VMulConst;
  n.in = {a};
  n.rd = std::move(c);
  n.vval = av;
  for (std::size_t i = 0; i < n.rd.size(); ++i) n.vval[i] *= n.rd[i];
  return push(std::move(n));
}

std::size_t Tape::vrelu(std::size_t a) {
  Node n;
  n.kind = Kind::VRelu;
  n.in = {a};
  n.vval = rvec(a);
  for (double& v : n.vval) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

std::size_t Tape::vsigmoid(std::size_t a) {
  Node n;
  n.kind = Kind::VSigmoid;
  n.in = {a};
  n.vval = rvec(a);
  for (double& v : n.vval) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(n));
}

std::size_t Tape::vtanh(std::size_t a) {
  Node n;
  n.kind = Kind::VTanh;
  n.in = {a};
  n.vval = rvec(a);
  for (double& v : n.vval) v = std::tanh(v);
  return push(std::move(n));
}

std::size_t Tape::vone_minus(std::size_t a) {
  Node n;
  n.kind = Kind::VOneMinus;
  n.in = {a};
  n.vval = rvec(a);
  for (double& v : n.vval) v = 1.0 - v;
  return push(std::move(n));
}

std::size_t Tape::vec_get(std::size_t a, std::size_t i) {
  const auto& av = rvec(a);
  if (i >= av.size()) throw DimensionError("vec_get: out of range");
  Node n;
  n.kind = Kind::VecGet;
  n.in = {a};
  n.i0 = i;
  n.vval = {av[i]};
  return push(std::move(n));
}

std::size_t Tape::log_of(std::size_t a) {
  double x = scalar(a);
  if (x <= 0.0) throw GradientError("log of a non-positive branch probability");
  Node n;
  n.kind = Kind::Log;
  n.in = {a};
  n.vval = {std::log(x)};
  return push(std::move(n));
}

std::size_t Tape::gate_ket(std::size_t psi, std::size_t controls, const gates::GateResult& g) {
  Node n;
  n.kind = Kind::GateKet;
  n.in = {psi};
  if (controls != kNoNode) n.in.push_back(controls);
  n.u = g.u;
  n.du = g.du;
  n.mval = g.u * mat(psi);
  n.is_mat = true;
  return push(std::move(n));
}

std::size_t Tape::gate_dm(std::size_t rho, std::size_t controls, const gates::GateResult& g) {
  Node n;
  n.kind = Kind::GateDm;
  n.in = {rho};
  if (controls != kNoNode) n.in.push_back(controls);
  n.u = g.u;
  n.du = g.du;
  n.mval = g.u * mat(rho) * g.u.dagger();
  n.is_mat = true;
  return push(std::move(n));
}

std::size_t Tape::lindblad(std::size_t rho, const HilbertLayout& l,
                           const channels::DissipationSpec& spec) {
  Node n;
  n.kind = Kind::Lindblad;
  n.in = {rho};
  n.layout = l;
  n.diss = spec;
  n.mval = channels::lindblad_rk4_raw(l, mat(rho), spec);
  n.is_mat = true;
  return push(std::move(n));
}

std::size_t Tape::povm_prob_ket(std::size_t psi, std::size_t controls, std::vector<double> mask,
                                std::vector<std::vector<double>> dmask) {
  const ComplexMatrix& v = mat(psi);
  Node n;
  n.kind = Kind::PovmProbKet;
  n.in = {psi};
  if (controls != kNoNode) n.in.push_back(controls);
  n.rd = std::move(mask);
  n.rdd = std::move(dmask);
  double p = 0.0;
  for (std::size_t i = 0; i < n.rd.size(); ++i) p += n.rd[i] * n.rd[i] * std::norm(v(i, 0));
  n.vval = {p};
  return push(std::move(n));
}

std::size_t Tape::povm_post_ket(std::size_t psi, std::size_t controls, std::vector<double> mask,
                                std::vector<std::vector<double>> dmask) {
  const ComplexMatrix& v = mat(psi);
  Node n;
  n.kind = Kind::PovmPostKet;
  n.in = {psi};
  if (controls != kNoNode) n.in.push_back(controls);
  n.rd = std::move(mask);
  n.rdd = std::move(dmask);
  n.mval = ComplexMatrix(v.rows(), 1);
  for (std::size_t i = 0; i < n.rd.size(); ++i) n.mval(i, 0) = n.rd[i] * v(i, 0);
  n.is_mat = true;
  return push(std::move(n));
}

std::size_t Tape::povm_prob_dm(std::size_t rho, std::size_t controls, std::vector<double> mask,
                               std::vector<std::vector<double>> dmask) {
  const ComplexMatrix& v = mat(rho);
  Node n;
  n.kind = Kind::PovmProbDm;
  n.in = {rho};
  if (controls != kNoNode) n.in.push_back(controls);
  n.rd = std::move(mask);
  n.rdd = std::move(dmask);
  double p = 0.0;
  for (std::size_t i = 0; i < n.rd.size(); ++i) p += n.rd[i] * n.rd[i] * std::real(v(i, i));
  n.vval = {p};
  return push(std::move(n));
}

std::size_t Tape::povm_post_dm(std::size_t rho, std::size_t controls, std::vector<double> mask,
                               std::vector<std::vector<double>> dmask) {
  const ComplexMatrix& v = mat(rho);
  Node n;
  n.kind = Kind::PovmPostDm;
  n.in = {rho};
  if (controls != kNoNode) n.in.push_back(controls);
  n.rd = std::move(mask);
  n.rdd = std::move(dmask);
  const std::size_t d = v.rows();
  n.mval = ComplexMatrix(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) n.mval(i, j) = n.rd[i] * n.rd[j] * v(i, j);
  n.is_mat = true;
  return push(std::move(n));
}

std::size_t Tape::ket_renorm(std::size_t phi, std::size_t p) {
  const ComplexMatrix& v = mat(phi);
  double pv = scalar(p);
  if (pv <= 0.0) throw GradientError("ket_renorm: non-positive branch probability");
  Node n;
  n.kind = Kind::KetRenorm;
  n.in = {phi, p};
  n.mval = v * cxd(1.0 / std::sqrt(pv), 0.0);
  n.is_mat = true;
  return push(std::move(n));
}

std::size_t Tape::dm_scale_inv(std::size_t b, std::size_t p) {
  const ComplexMatrix& v = mat(b);
  double pv = scalar(p);
  if (pv <= 0.0) throw GradientError("dm_scale_inv: non-positive branch probability");
  Node n;
  n.kind = Kind::DmScaleInv;
  n.in = {b, p};
  n.mval = v * cxd(1.0 / pv, 0.0);
  n.is_mat = true;
  return push(std::move(n));
}

std::size_t Tape::purity(std::size_t rho) {
  const ComplexMatrix& v = mat(rho);
  Node n;
  n.kind = Kind::Purity;
  n.in = {rho};
  n.vval = {std::real(qcore::trace_prod(v, v))};
  return push(std::move(n));
}

std::size_t Tape::expect_const(std::size_t rho, ComplexMatrix obs) {
  const ComplexMatrix& v = mat(rho);
  Node n;
  n.kind = Kind::ExpectConst;
  n.in = {rho};
  n.u = std::move(obs);
  n.vval = {std::real(qcore::trace_prod(n.u, v))};
  return push(std::move(n));
}

std::size_t Tape::expect_ket_const(std::size_t psi, ComplexMatrix obs) {
  const ComplexMatrix& v = mat(psi);
  Node n;
  n.kind = Kind::ExpectKetConst;
  n.in = {psi};
  n.u = std::move(obs);
  ComplexMatrix ov = n.u * v;
  cxd s = 0.0;
  for (std::size_t i = 0; i < v.rows(); ++i) s += std::conj(v(i, 0)) * ov(i, 0);
  n.vval = {std::real(s)};
  return push(std::move(n));
}

std::size_t Tape::mat_to_vec(std::size_t rho) {
  const ComplexMatrix& v = mat(rho);
  Node n;
  n.kind = Kind::MatToVec;
  n.in = {rho};
  const std::size_t d2 = v.rows() * v.cols();
  n.vval.resize(2 * d2);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) {
      n.vval[i * v.cols() + j] = std::real(v(i, j));
      n.vval[d2 + i * v.cols() + j] = std::imag(v(i, j));
    }
  return push(std::move(n));
}

std::size_t Tape::eigvals(std::size_t rho) {
  const ComplexMatrix& v = mat(rho);
  qcore::EigHerm eig = qcore::eig_hermitian(v);
  Node n;
  n.kind = Kind::EigVals;
  n.in = {rho};
  n.u = eig.vectors;
  n.vval = eig.values;
  return push(std::move(n));
}

std::size_t Tape::cont_density(std::size_t rho, std::vector<double> sigma, double noise_std,
                               double lo, double hi, std::size_t points) {
  if (points < 2) throw ConfigError("cont_density: lattice needs at least two points");
  const ComplexMatrix& v = mat(rho);
  if (sigma.size() != v.rows()) throw DimensionError("cont_density: sigma size mismatch");
  Node n;
  n.kind = Kind::ContDensity;
  n.in = {rho};
  n.rd = std::move(sigma);
  n.x0 = lo;
  n.x1 = (hi - lo) / static_cast<double>(points - 1);
  n.x2 = noise_std;
  n.i0 = points;
  n.vval.assign(points, 0.0);
  for (std::size_t p = 0; p < points; ++p) {
    double m = lo + n.x1 * static_cast<double>(p);
    double s = 0.0;
    for (std::size_t b = 0; b < n.rd.size(); ++b)
      s += gauss_density((m - n.rd[b]) / noise_std) / noise_std * diag_weight(v, b);
    n.vval[p] = s;
  }
  return push(std::move(n));
}

std::size_t Tape::cum_trapz(std::size_t dens, double h) {
  const auto& d = rvec(dens);
  Node n;
  n.kind = Kind::CumTrapz;
  n.in = {dens};
  n.x0 = h;
  n.vval.assign(d.size(), 0.0);
  for (std::size_t i = 1; i < d.size(); ++i)
    n.vval[i] = n.vval[i - 1] + 0.5 * h * (d[i - 1] + d[i]);
  return push(std::move(n));
}

std::size_t Tape::pwl_invert(std::size_t cum, double z, double h, double lo) {
  const auto& c = rvec(cum);
  Node n;
  n.kind = Kind::PwlInvert;
  n.in = {cum};
  n.x0 = z;
  n.x1 = h;
  n.x2 = lo;
  if (z >= c.back()) {
    n.i1 = 1;  // clamped, zero slope
    n.vval = {lo + h * static_cast<double>(c.size() - 1)};
  } else if (z <= 0.0) {
    n.i1 = 1;
    n.vval = {lo};
  } else {
    std::size_t hi = static_cast<std::size_t>(std::upper_bound(c.begin(), c.end(), z) - c.begin());
    n.i0 = hi - 1;
    double span = c[hi] - c[n.i0];
    double frac = span > 0.0 ? (z - c[n.i0]) / span : 0.0;
    n.vval = {lo + h * (static_cast<double>(n.i0) + frac)};
  }
  return push(std::move(n));
}

std::size_t Tape::cont_prob(std::size_t rho, std::size_t m, std::vector<double> sigma,
                            double noise_std) {
  const ComplexMatrix& v = mat(rho);
  double mv = scalar(m);
  Node n;
  n.kind = Kind::ContProb;
  n.in = {rho, m};
  n.rd = std::move(sigma);
  n.x2 = noise_std;
  double p = 0.0;
  for (std::size_t b = 0; b < n.rd.size(); ++b)
    p += gauss_density((mv - n.rd[b]) / noise_std) / noise_std * diag_weight(v, b);
  n.vval = {p};
  return push(std::move(n));
}

std::size_t Tape::cont_post(std::size_t rho, std::size_t m, std::vector<double> sigma,
                            double noise_std) {
  const ComplexMatrix& v = mat(rho);
  double mv = scalar(m);
  Node n;
  n.kind = Kind::ContPost;
  n.in = {rho, m};
  n.rd = std::move(sigma);
  n.x2 = noise_std;
  std::vector<double> w(n.rd.size());
  for (std::size_t b = 0; b < w.size(); ++b)
    w[b] = std::sqrt(gauss_density((mv - n.rd[b]) / noise_std) / noise_std);
  n.is_mat = true;
  if (v.cols() == 1) {
    n.mval = ComplexMatrix(v.rows(), 1);
    for (std::size_t i = 0; i < v.rows(); ++i) n.mval(i, 0) = w[i] * v(i, 0);
  } else {
    n.mval = ComplexMatrix(v.rows(), v.cols());
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) n.mval(i, j) = w[i] * w[j] * v(i, j);
  }
  return push(std::move(n));
}

const std::vector<double>& Tape::rvec(std::size_t id) const {
  if (id >= nodes_.size() || nodes_[id].is_mat)
    throw DimensionError("tape: node is not a real vector");
  return nodes_[id].vval;
}

const ComplexMatrix& Tape::mat(std::size_t id) const {
  if (id >= nodes_.size() || !nodes_[id].is_mat) throw DimensionError("tape: node is not a matrix");
  return nodes_[id].mval;
}

double Tape::scalar(std::size_t id) const {
  const auto& v = rvec(id);
  if (v.size() != 1) throw DimensionError("tape: node is not a scalar");
  return v[0];
}

std::vector<double> Tape::backward(
    const std::vector<std::pair<std::size_t, double>>& seeds) const {
  if (theta_node_ == kNoNode) throw ConfigError("tape has no parameter leaf");
  const std::size_t n = nodes_.size();
  std::vector<ComplexMatrix> amat(n);
  std::vector<std::vector<double>> avec(n);
  std::vector<bool> touched(n, false);

  auto amat_of = [&](std::size_t i) -> ComplexMatrix& {
    if (!touched[i]) {
      amat[i] = ComplexMatrix(nodes_[i].mval.rows(), nodes_[i].mval.cols());
      touched[i] = true;
    }
    return amat[i];
  };
  auto avec_of = [&](std::size_t i) -> std::vector<double>& {
    if (!touched[i]) {
      avec[i].assign(nodes_[i].vval.size(), 0.0);
      touched[i] = true;
    }
    return avec[i];
  };

  for (const auto& [id, w] : seeds) {
    if (id >= n || nodes_[id].is_mat || nodes_[id].vval.size() != 1)
      throw ConfigError("backward: seeds must be scalar nodes");
    avec_of(id)[0] += w;
  }

  // Frobenius pairing Re<adj, d(value)>; each case moves the adjoint of a
  // node onto the adjoints of its inputs.
  for (std::size_t idx = n; idx-- > 0;) {
    if (!touched[idx]) continue;
    const Node& nd = nodes_[idx];
    if (nd.is_mat) {
      for (std::size_t k = 0; k < amat[idx].rows() * amat[idx].cols(); ++k) {
        cxd v = amat[idx].data()[k];
        if (std::isnan(std::real(v)) || std::isnan(std::imag(v)))
          throw GradientError(std::string("NaN adjoint at node ") + kind_name(nd.kind) + "#" +
                              std::to_string(idx));
      }
    } else {
      for (double v : avec[idx])
        if (std::isnan(v))
          throw GradientError(std::string("NaN adjoint at node ") + kind_name(nd.kind) + "#" +
                              std::to_string(idx));
    }

    switch (nd.kind) {
      case Kind::LeafTheta:
      case Kind::ConstMat:
      case Kind::ConstVec:
        break;
      case Kind::SliceVec: {
        auto& ax = avec_of(nd.in[0]);
        for (std::size_t i = 0; i < nd.i1; ++i) ax[nd.i0 + i] += avec[idx][i];
        break;
      }
      case Kind::Concat: {
        std::size_t off = 0;
        for (std::size_t s : nd.in) {
          auto& ax = avec_of(s);
          for (std::size_t i = 0; i < ax.size(); ++i) ax[i] += avec[idx][off + i];
          off += ax.size();
        }
        break;
      }
      case Kind::MatVec: {
        const auto& wv = rvec(nd.in[0]);
        const auto& xv = rvec(nd.in[1]);
        auto& aw = avec_of(nd.in[0]);
        auto& ax = avec_of(nd.in[1]);
        for (std::size_t r = 0; r < nd.i0; ++r) {
          double g = avec[idx][r];
          if (g == 0.0) continue;
          for (std::size_t c = 0; c < nd.i1; ++c) {
            aw[r * nd.i1 + c] += g * xv[c];
            ax[c] += g * wv[r * nd.i1 + c];
          }
        }
        break;
      }
      case Kind::VAdd: {
        auto& aa = avec_of(nd.in[0]);
        auto& ab = avec_of(nd.in[1]);
        for (std::size_t i = 0; i < avec[idx].size(); ++i) {
          aa[i] += avec[idx][i];
          ab[i] += avec[idx][i];
        }
        break;
      }
      case Kind::VMul: {
        const auto& av = rvec(nd.in[0]);
        const auto& bv = rvec(nd.in[1]);
        auto& aa = avec_of(nd.in[0]);
        auto& ab = avec_of(nd.in[1]);
        for (std::size_t i = 0; i < avec[idx].size(); ++i) {
          aa[i] += bv[i] * avec[idx][i];
          ab[i] += av[i] * avec[idx][i];
        }
        break;
      }
      case Kind::VMulConst: {
        auto& aa = avec_of(nd.in[0]);
        for (std::size_t i = 0; i < avec[idx].size(); ++i) aa[i] += nd.rd[i] * avec[idx][i];
        break;
      }
      case Kind::VRelu: {
        const auto& xv = rvec(nd.in[0]);
        auto& ax = avec_of(nd.in[0]);
        for (std::size_t i = 0; i < avec[idx].size(); ++i)
          if (xv[i] > 0.0) ax[i] += avec[idx][i];
        break;
      }
      case Kind::VSigmoid: {
        auto& ax = avec_of(nd.in[0]);
        for (std::size_t i = 0; i < avec[idx].size(); ++i) {
          double s = nd.vval[i];
          ax[i] += s * (1.0 - s) * avec[idx][i];
        }
        break;
      }
      case Kind::VTanh: {
        auto& ax = avec_of(nd.in[0]);
        for (std::size_t i = 0; i < avec[idx].size(); ++i)
          ax[i] += (1.0 - nd.vval[i] * nd.vval[i]) * avec[idx][i];
        break;
      }
      case Kind::VOneMinus: {
        auto& ax = avec_of(nd.in[0]);
        for (std::size_t i = 0; i < avec[idx].size(); ++i) ax[i] -= avec[idx][i];
        break;
      }
      case Kind::VecGet: {
        avec_of(nd.in[0])[nd.i0] += avec[idx][0];
        break;
      }
      case Kind::Log: {
        avec_of(nd.in[0])[0] += avec[idx][0] / scalar(nd.in[0]);
        break;
      }
      case Kind::GateKet: {
        const ComplexMatrix& aw = amat[idx];
        ComplexMatrix& apsi = amat_of(nd.in[0]);
        ComplexMatrix back = nd.u.dagger() * aw;
        for (std::size_t i = 0; i < back.rows(); ++i) apsi(i, 0) += back(i, 0);
        if (nd.in.size() == 2 && !nd.du.empty()) {
          const ComplexMatrix& psi = mat(nd.in[0]);
          auto& ac = avec_of(nd.in[1]);
          for (std::size_t k = 0; k < nd.du.size(); ++k) {
            ComplexMatrix dv = nd.du[k] * psi;
            double g = 0.0;
            for (std::size_t i = 0; i < dv.rows(); ++i)
              g += std::real(std::conj(aw(i, 0)) * dv(i, 0));
            ac[k] += g;
          }
        }
        break;
      }
      case Kind::GateDm: {
        const ComplexMatrix& aw = amat[idx];
        const ComplexMatrix& rho = mat(nd.in[0]);
        ComplexMatrix& arho = amat_of(nd.in[0]);
        ComplexMatrix t = nd.u.dagger() * aw * nd.u;
        for (std::size_t i = 0; i < t.rows() * t.cols(); ++i) arho.data()[i] += t.data()[i];
        if (nd.in.size() == 2 && !nd.du.empty()) {
          auto& ac = avec_of(nd.in[1]);
          ComplexMatrix awd = aw.dagger();
          ComplexMatrix z1 = (rho * nd.u.dagger()) * awd;   // tr(z1 du) pairs with dU rho U^dag
          ComplexMatrix z2 = awd * (nd.u * rho);            // sum z2 conj(du) pairs with U rho dU^dag
          for (std::size_t k = 0; k < nd.du.size(); ++k) {
            cxd t1 = qcore::trace_prod(z1, nd.du[k]);
            cxd t2 = 0.0;
            for (std::size_t i = 0; i < z2.rows() * z2.cols(); ++i)
              t2 += z2.data()[i] * std::conj(nd.du[k].data()[i]);
            ac[k] += std::real(t1 + t2);
          }
        }
        break;
      }
      case Kind::Lindblad: {
        ComplexMatrix back = channels::lindblad_rk4_raw(nd.layout, amat[idx], nd.diss, true);
        ComplexMatrix& arho = amat_of(nd.in[0]);
        for (std::size_t i = 0; i < back.rows() * back.cols(); ++i)
          arho.data()[i] += back.data()[i];
        break;
      }
      case Kind::PovmProbKet: {
        const ComplexMatrix& psi = mat(nd.in[0]);
        double ap = avec[idx][0];
        ComplexMatrix& apsi = amat_of(nd.in[0]);
        for (std::size_t i = 0; i < nd.rd.size(); ++i)
          apsi(i, 0) += 2.0 * ap * nd.rd[i] * nd.rd[i] * psi(i, 0);
        if (nd.in.size() == 2 && !nd.rdd.empty()) {
          auto& ac = avec_of(nd.in[1]);
          for (std::size_t k = 0; k < nd.rdd.size(); ++k) {
            double g = 0.0;
            for (std::size_t i = 0; i < nd.rd.size(); ++i)
              g += 2.0 * nd.rd[i] * nd.rdd[k][i] * std::norm(psi(i, 0));
            ac[k] += ap * g;
          }
        }
        break;
      }
      case Kind::PovmPostKet: {
        const ComplexMatrix& psi = mat(nd.in[0]);
        const ComplexMatrix& aphi = amat[idx];
        ComplexMatrix& apsi = amat_of(nd.in[0]);
        for (std::size_t i = 0; i < nd.rd.size(); ++i) apsi(i, 0) += nd.rd[i] * aphi(i, 0);
        if (nd.in.size() == 2 && !nd.rdd.empty()) {
          auto& ac = avec_of(nd.in[1]);
          for (std::size_t k = 0; k < nd.rdd.size(); ++k) {
            double g = 0.0;
            for (std::size_t i = 0; i < nd.rd.size(); ++i)
              g += std::real(std::conj(aphi(i, 0)) * psi(i, 0)) * nd.rdd[k][i];
            ac[k] += g;
          }
        }
        break;
      }
      case Kind::PovmProbDm: {
        const ComplexMatrix& rho = mat(nd.in[0]);
        double ap = avec[idx][0];
        ComplexMatrix& arho = amat_of(nd.in[0]);
        for (std::size_t i = 0; i < nd.rd.size(); ++i) arho(i, i) += ap * nd.rd[i] * nd.rd[i];
        if (nd.in.size() == 2 && !nd.rdd.empty()) {
          auto& ac = avec_of(nd.in[1]);
          for (std::size_t k = 0; k < nd.rdd.size(); ++k) {
            double g = 0.0;
            for (std::size_t i = 0; i < nd.rd.size(); ++i)
              g += 2.0 * nd.rd[i] * nd.rdd[k][i] * std::real(rho(i, i));
            ac[k] += ap * g;
          }
        }
        break;
      }
      case Kind::PovmPostDm: {
        const ComplexMatrix& rho = mat(nd.in[0]);
        const ComplexMatrix& ab = amat[idx];
        ComplexMatrix& arho = amat_of(nd.in[0]);
        const std::size_t d = rho.rows();
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) arho(i, j) += nd.rd[i] * nd.rd[j] * ab(i, j);
        if (nd.in.size() == 2 && !nd.rdd.empty()) {
          auto& ac = avec_of(nd.in[1]);
          for (std::size_t k = 0; k < nd.rdd.size(); ++k) {
            double g = 0.0;
            for (std::size_t i = 0; i < d; ++i)
              for (std::size_t j = 0; j < d; ++j)
                g += std::real(std::conj(ab(i, j)) * rho(i, j)) *
                     (nd.rdd[k][i] * nd.rd[j] + nd.rd[i] * nd.rdd[k][j]);
            ac[k] += g;
          }
        }
        break;
      }
      case Kind::KetRenorm: {
        const ComplexMatrix& phi = mat(nd.in[0]);
        double p = scalar(nd.in[1]);
        const ComplexMatrix& aw = amat[idx];
        ComplexMatrix& aphi = amat_of(nd.in[0]);
        double invs = 1.0 / std::sqrt(p);
        double dot = 0.0;
        for (std::size_t i = 0; i < phi.rows(); ++i) {
          aphi(i, 0) += invs * aw(i, 0);
          dot += std::real(std::conj(aw(i, 0)) * phi(i, 0));
        }
        avec_of(nd.in[1])[0] -= 0.5 * dot * invs / p;
        break;
      }
      case Kind::DmScaleInv: {
        const ComplexMatrix& b = mat(nd.in[0]);
        double p = scalar(nd.in[1]);
        const ComplexMatrix& aw = amat[idx];
        ComplexMatrix& ab = amat_of(nd.in[0]);
        double dot = 0.0;
        for (std::size_t i = 0; i < b.rows() * b.cols(); ++i) {
          ab.data()[i] += aw.data()[i] / p;
          dot += std::real(std::conj(aw.data()[i]) * b.data()[i]);
        }
        avec_of(nd.in[1])[0] -= dot / (p * p);
        break;
      }
      case Kind::Purity: {
        const ComplexMatrix& rho = mat(nd.in[0]);
        double ap = avec[idx][0];
        ComplexMatrix& arho = amat_of(nd.in[0]);
        for (std::size_t i = 0; i < rho.rows(); ++i)
          for (std::size_t j = 0; j < rho.cols(); ++j)
            arho(i, j) += 2.0 * ap * std::conj(rho(j, i));
        break;
      }
      case Kind::ExpectConst: {
        double ae = avec[idx][0];
        ComplexMatrix& arho = amat_of(nd.in[0]);
        for (std::size_t i = 0; i < nd.u.rows(); ++i)
          for (std::size_t j = 0; j < nd.u.cols(); ++j)
            arho(i, j) += ae * std::conj(nd.u(j, i));
        break;
      }
      case Kind::ExpectKetConst: {
        const ComplexMatrix& psi = mat(nd.in[0]);
        double ae = avec[idx][0];
        ComplexMatrix ov = nd.u * psi;
        ComplexMatrix& apsi = amat_of(nd.in[0]);
        for (std::size_t i = 0; i < psi.rows(); ++i) apsi(i, 0) += 2.0 * ae * ov(i, 0);
        break;
      }
      case Kind::MatToVec: {
        const ComplexMatrix& rho = mat(nd.in[0]);
        ComplexMatrix& arho = amat_of(nd.in[0]);
        const std::size_t d2 = rho.rows() * rho.cols();
        for (std::size_t i = 0; i < rho.rows(); ++i)
          for (std::size_t j = 0; j < rho.cols(); ++j)
            arho(i, j) += cxd(avec[idx][i * rho.cols() + j], avec[idx][d2 + i * rho.cols() + j]);
        break;
      }
      case Kind::EigVals: {
        for (std::size_t i = 1; i < nd.vval.size(); ++i)
          if (nd.vval[i] - nd.vval[i - 1] < 1e-10)
            throw GradientError(
                "eigvals: spectral gap below 1e-10, derivative ill-conditioned; use the "
                "sensitivity backend for this program");
        const std::size_t d = nd.vval.size();
        ComplexMatrix& arho = amat_of(nd.in[0]);
        for (std::size_t k = 0; k < d; ++k) {
          double g = avec[idx][k];
          if (g == 0.0) continue;
          for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
              arho(i, j) += g * nd.u(i, k) * std::conj(nd.u(j, k));
        }
        break;
      }
      case Kind::ContDensity: {
        const ComplexMatrix& v = mat(nd.in[0]);
        ComplexMatrix& arho = amat_of(nd.in[0]);
        for (std::size_t b = 0; b < nd.rd.size(); ++b) {
          double acc = 0.0;
          for (std::size_t p = 0; p < nd.i0; ++p) {
            double m = nd.x0 + nd.x1 * static_cast<double>(p);
            acc += gauss_density((m - nd.rd[b]) / nd.x2) / nd.x2 * avec[idx][p];
          }
          if (v.cols() == 1)
            arho(b, 0) += 2.0 * acc * v(b, 0);
          else
            arho(b, b) += acc;
        }
        break;
      }
      case Kind::CumTrapz: {
        const std::size_t m = avec[idx].size();
        auto& ad = avec_of(nd.in[0]);
        // suffix sums of the cumulative adjoint
        double suffix = 0.0;
        std::vector<double> s(m + 1, 0.0);
        for (std::size_t i = m; i-- > 0;) {
          suffix += avec[idx][i];
          s[i] = suffix;
        }
        for (std::size_t k = 0; k < m; ++k) {
          double g = s[k + 1];
          if (k >= 1) g += s[k];
          ad[k] += 0.5 * nd.x0 * g;
        }
        break;
      }
      case Kind::PwlInvert: {
        if (nd.i1 == 1) break;  // clamped draw, flat
        const auto& c = rvec(nd.in[0]);
        auto& ac = avec_of(nd.in[0]);
        double am = avec[idx][0];
        std::size_t lo = nd.i0, hi = nd.i0 + 1;
        double span = c[hi] - c[lo];
        ac[lo] += am * nd.x1 * (nd.x0 - c[hi]) / (span * span);
        ac[hi] -= am * nd.x1 * (nd.x0 - c[lo]) / (span * span);
        break;
      }
      case Kind::ContProb: {
        const ComplexMatrix& v = mat(nd.in[0]);
        double mv = scalar(nd.in[1]);
        double ap = avec[idx][0];
        ComplexMatrix& arho = amat_of(nd.in[0]);
        double gm = 0.0;
        for (std::size_t b = 0; b < nd.rd.size(); ++b) {
          double w2 = gauss_density((mv - nd.rd[b]) / nd.x2) / nd.x2;
          if (v.cols() == 1)
            arho(b, 0) += 2.0 * ap * w2 * v(b, 0);
          else
            arho(b, b) += ap * w2;
          gm += -((mv - nd.rd[b]) / (nd.x2 * nd.x2)) * w2 * diag_weight(v, b);
        }
        avec_of(nd.in[1])[0] += ap * gm;
        break;
      }
      case Kind::ContPost: {
        const ComplexMatrix& v = mat(nd.in[0]);
        double mv = scalar(nd.in[1]);
        const ComplexMatrix& ab = amat[idx];
        ComplexMatrix& arho = amat_of(nd.in[0]);
        const std::size_t d = nd.rd.size();
        std::vector<double> w(d), wp(d);
        for (std::size_t b = 0; b < d; ++b) {
          w[b] = std::sqrt(gauss_density((mv - nd.rd[b]) / nd.x2) / nd.x2);
          wp[b] = w[b] * (-(mv - nd.rd[b]) / (2.0 * nd.x2 * nd.x2));
        }
        double gm = 0.0;
        if (v.cols() == 1) {
          for (std::size_t i = 0; i < d; ++i) {
            arho(i, 0) += w[i] * ab(i, 0);
            gm += std::real(std::conj(ab(i, 0)) * v(i, 0)) * wp[i];
          }
        } else {
          for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              arho(i, j) += w[i] * w[j] * ab(i, j);
              gm += std::real(std::conj(ab(i, j)) * v(i, j)) * (wp[i] * w[j] + w[i] * wp[j]);
            }
        }
        avec_of(nd.in[1])[0] += gm;
        break;
      }
    }
  }

  if (!touched[theta_node_]) return std::vector<double>(nodes_[theta_node_].vval.size(), 0.0);
  return avec[theta_node_];
}

std::vector<double> SurrogateScalar::gradient(const Tape& tape) const {
  std::vector<std::pair<std::size_t, double>> seeds;
  for (std::size_t k = 0; k < reward_nodes.size(); ++k)
    seeds.emplace_back(reward_nodes[k], reward_weights.empty() ? 1.0 : reward_weights[k]);
  for (const Score& s : score_terms) seeds.emplace_back(s.logp_node, s.coeff);
  return tape.backward(seeds);
}

std::vector<double> SurrogateScalar::gradient_without_score(const Tape& tape) const {
  std::vector<std::pair<std::size_t, double>> seeds;
  for (std::size_t k = 0; k < reward_nodes.size(); ++k)
    seeds.emplace_back(reward_nodes[k], reward_weights.empty() ? 1.0 : reward_weights[k]);
  return tape.backward(seeds);
}

ProgStep ProgStep::gate(gates::GateFamily fam, std::size_t theta_offset, gates::FamilyConfig fc,
                        std::size_t slot) {
  ProgStep s;
  s.kind = Kind::Gate;
  s.family = fam;
  s.fc = fc;
  s.slot = slot;
  s.theta_offset = theta_offset;
  return s;
}

ProgStep ProgStep::fixed_gate(gates::GateFamily fam, std::vector<double> vals,
                              gates::FamilyConfig fc, std::size_t slot) {
  ProgStep s;
  s.kind = Kind::Gate;
  s.family = fam;
  s.fc = fc;
  s.slot = slot;
  s.theta_controls = false;
  s.fixed_vals = std::move(vals);
  return s;
}

ProgStep ProgStep::measure(std::size_t theta_offset) {
  ProgStep s;
  s.kind = Kind::DispersiveMeasure;
  s.theta_offset = theta_offset;
  return s;
}

ProgStep ProgStep::fixed_measure(double gamma, double delta) {
  ProgStep s;
  s.kind = Kind::DispersiveMeasure;
  s.theta_controls = false;
  s.fixed_vals = {gamma, delta};
  return s;
}

ProgStep ProgStep::measure_continuous() {
  ProgStep s;
  s.kind = Kind::ContinuousMeasure;
  return s;
}

ProgStep ProgStep::dissipate(channels::DissipationSpec d) {
  ProgStep s;
  s.kind = Kind::Dissipate;
  s.diss = d;
  return s;
}

ProgStep ProgStep::reward_expect(ComplexMatrix obs) {
  ProgStep s;
  s.kind = Kind::RewardExpect;
  s.observable = std::move(obs);
  return s;
}

ProgStep ProgStep::reward_purity() {
  ProgStep s;
  s.kind = Kind::RewardPurity;
  return s;
}

namespace {

gates::GateResult build_gate(const HilbertLayout& l, const ProgStep& st,
                             const std::vector<double>& vals) {
  switch (st.family) {
    case gates::GateFamily::JcDrive:
      return gates::jc_qubit_drive(l, vals, st.fc.complex_jc, st.slot);
    case gates::GateFamily::JcInteraction:
      return gates::jc_interaction(l, vals, st.fc.complex_jc, st.slot);
    case gates::GateFamily::SnapBlock:
      return gates::snap_block(l, vals);
    case gates::GateFamily::Displacement:
      return gates::displacement_gate(l, vals);
    case gates::GateFamily::SpinRotation:
      return gates::spin_rotation(st.spin_g, vals);
    case gates::GateFamily::DispersiveMeas:
      break;
  }
  throw ConfigError("program: dispersive family is a measurement, not a gate");
}

}  // namespace

std::vector<double> readout_sigma(const HilbertLayout& l) {
  std::vector<double> sigma(l.dim(), 0.0);
  if (l.qubit_slots == 0) {
    if (l.fock_cutoff != 2)
      throw LayoutError("continuous readout: slotless layout must be two-level");
    sigma[0] = 1.0;
    sigma[1] = -1.0;
  } else {
    for (std::size_t i = 0; i < l.dim(); ++i)
      sigma[i] = l.slot_bit(l.bits_of(i), 0) == 0 ? 1.0 : -1.0;
  }
  return sigma;
}

gates::GateResult build_family_gate(const HilbertLayout& l, gates::GateFamily family,
                                    const gates::FamilyConfig& fc, std::size_t slot,
                                    double spin_g, const std::vector<double>& vals) {
  ProgStep st;
  st.family = family;
  st.fc = fc;
  st.slot = slot;
  st.spin_g = spin_g;
  return build_gate(l, st, vals);
}

Recorded forward_record(const Program& prog, const std::vector<double>& theta, Rng& rng,
                        const DrawPlan* replay, bool future_returns_only) {
  prog.layout.validate();
  if (prog.theta_size != 0 && theta.size() != prog.theta_size)
    throw ConfigError("forward_record: theta size does not match the program");

  bool need_dm = prog.use_density;
  for (const ProgStep& st : prog.steps)
    if (st.kind == ProgStep::Kind::Dissipate || st.kind == ProgStep::Kind::RewardPurity)
      need_dm = true;
  qcore::StateBuild init = qcore::build_state(prog.layout, prog.initial);
  if (!init.pure) need_dm = true;

  Recorded rec;
  Tape& tape = rec.tape;
  std::size_t th = tape.leaf_theta(theta);

  std::size_t state;
  bool is_ket = !need_dm;
  if (is_ket) {
    ComplexMatrix psi(prog.layout.dim(), 1);
    for (std::size_t i = 0; i < init.ket.dim(); ++i) psi(i, 0) = init.ket[i];
    state = tape.const_mat(std::move(psi));
  } else {
    state = tape.const_mat(init.dm.matrix());
  }

  std::size_t meas_count = 0;
  std::size_t replay_d = 0, replay_c = 0;
  std::vector<std::size_t> reward_meas_before;  // measurements seen before each reward

  for (const ProgStep& st : prog.steps) {
    switch (st.kind) {
      case ProgStep::Kind::Gate: {
        std::size_t ctrl;
        std::vector<double> vals;
        if (st.theta_controls) {
          std::size_t arity = gates::family_arity(st.family, st.fc);
          ctrl = tape.slice_vec(th, st.theta_offset, arity);
          vals = tape.rvec(ctrl);
        } else {
          ctrl = tape.const_vec(st.fixed_vals);
          vals = st.fixed_vals;
        }
        gates::GateResult g = build_gate(prog.layout, st, vals);
        state = is_ket ? tape.gate_ket(state, ctrl, g) : tape.gate_dm(state, ctrl, g);
        break;
      }
      case ProgStep::Kind::Dissipate: {
        state = tape.lindblad(state, prog.layout, st.diss);
        break;
      }
      case ProgStep::Kind::DispersiveMeasure: {
        std::size_t ctrl;
        std::vector<double> vals;
        if (st.theta_controls) {
          ctrl = tape.slice_vec(th, st.theta_offset, 2);
          vals = tape.rvec(ctrl);
        } else {
          ctrl = tape.const_vec(st.fixed_vals);
          vals = st.fixed_vals;
        }
        channels::MeasurementFamily fam = gates::dispersive_povm(prog.layout, vals[0], vals[1]);

        // branch probabilities from the current value (selection is not taped)
        const ComplexMatrix& sv = tape.mat(state);
        std::vector<double> probs(fam.diag.size(), 0.0);
        for (std::size_t o = 0; o < fam.diag.size(); ++o)
          for (std::size_t i = 0; i < prog.layout.dim(); ++i)
            probs[o] += fam.diag[o][i] * fam.diag[o][i] * diag_weight(sv, i);

        std::size_t o;
        if (replay) {
          if (replay_d >= replay->discrete.size())
            throw ConfigError("forward_record: replay plan exhausted");
          o = replay->discrete[replay_d++];
        } else {
          double total = 0.0;
          for (double p : probs) total += p;
          double target = rng.uniform() * total;
          double cum = 0.0;
          o = probs.size() - 1;
          for (std::size_t c = 0; c < probs.size(); ++c) {
            if (probs[c] < 1e-15 * total) continue;
            cum += probs[c];
            if (target <= cum) {
              o = c;
              break;
            }
          }
        }
        if (probs[o] <= 0.0) throw GradientError("forward_record: zero-probability branch");

        std::size_t pnode = is_ket
                                ? tape.povm_prob_ket(state, ctrl, fam.diag[o], fam.ddiag[o])
                                : tape.povm_prob_dm(state, ctrl, fam.diag[o], fam.ddiag[o]);
        std::size_t logp = tape.log_of(pnode);
        std::size_t post = is_ket
                               ? tape.povm_post_ket(state, ctrl, fam.diag[o], fam.ddiag[o])
                               : tape.povm_post_dm(state, ctrl, fam.diag[o], fam.ddiag[o]);
        state = is_ket ? tape.ket_renorm(post, pnode) : tape.dm_scale_inv(post, pnode);

        SurrogateScalar::Score sc;
        sc.logp_node = logp;
        sc.meas_ordinal = meas_count;
        rec.surrogate.score_terms.push_back(sc);

        channels::MeasurementEvent ev;
        ev.outcome_index = o;
        ev.outcome = fam.outcomes[o];
        ev.probability = tape.scalar(pnode);
        ev.log_prob = tape.scalar(logp);
        rec.events.push_back(ev);
        rec.draws.discrete.push_back(o);
        ++meas_count;
        break;
      }
      case ProgStep::Kind::ContinuousMeasure: {
        std::vector<double> sigma = readout_sigma(prog.layout);
        double z;
        if (replay) {
          if (replay_c >= replay->continuous_z.size())
            throw ConfigError("forward_record: replay plan exhausted");
          z = replay->continuous_z[replay_c++];
        } else {
          z = rng.uniform();
        }
        double h = (kReadoutHi - kReadoutLo) / static_cast<double>(kReadoutPoints - 1);
        std::size_t dens =
            tape.cont_density(state, sigma, 1.0, kReadoutLo, kReadoutHi, kReadoutPoints);
        std::size_t cum = tape.cum_trapz(dens, h);
        std::size_t m = tape.pwl_invert(cum, z, h, kReadoutLo);
        std::size_t pnode = tape.cont_prob(state, m, sigma, 1.0);
        std::size_t post = tape.cont_post(state, m, sigma, 1.0);
        state = is_ket ? tape.ket_renorm(post, pnode) : tape.dm_scale_inv(post, pnode);

        channels::MeasurementEvent ev;
        ev.outcome = tape.scalar(m);
        ev.probability = tape.scalar(pnode);
        rec.events.push_back(ev);
        rec.draws.continuous_z.push_back(z);
        ++meas_count;
        break;
      }
      case ProgStep::Kind::RewardExpect: {
        std::size_t r = is_ket ? tape.expect_ket_const(state, st.observable)
                               : tape.expect_const(state, st.observable);
        rec.surrogate.reward_nodes.push_back(r);
        rec.surrogate.reward_weights.push_back(1.0);
        rec.surrogate.value += tape.scalar(r);
        reward_meas_before.push_back(meas_count);
        break;
      }
      case ProgStep::Kind::RewardPurity: {
        std::size_t r = tape.purity(state);
        rec.surrogate.reward_nodes.push_back(r);
        rec.surrogate.reward_weights.push_back(1.0);
        rec.surrogate.value += tape.scalar(r);
        reward_meas_before.push_back(meas_count);
        break;
      }
    }
  }

  for (SurrogateScalar::Score& sc : rec.surrogate.score_terms) {
    double a = 0.0;
    for (std::size_t k = 0; k < rec.surrogate.reward_nodes.size(); ++k) {
      bool future = reward_meas_before[k] > sc.meas_ordinal;
      if (!future_returns_only || future) a += tape.scalar(rec.surrogate.reward_nodes[k]);
    }
    sc.coeff = a;
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Forward-sensitivity backend. Carries, for every parameter, the derivative
// of the normalized state (for pathwise reward terms) and of an unnormalized
// copy whose per-measurement trace increments yield d ln P_j / d theta_k.
// ---------------------------------------------------------------------------
std::vector<double> sensitivity_gradient(const Program& prog, const std::vector<double>& theta,
                                         const DrawPlan& draws, bool future_returns_only) {
  prog.layout.validate();
  const std::size_t P = theta.size();
  const std::size_t D = prog.layout.dim();

  qcore::StateBuild init = qcore::build_state(prog.layout, prog.initial);
  ComplexMatrix rho = init.pure ? qcore::DensityMatrix::pure(init.ket).matrix()
                                : init.dm.matrix();
  ComplexMatrix rho_u = rho;  // unnormalized track
  std::vector<ComplexMatrix> S(P, ComplexMatrix(D, D));    // d rho / d theta_k
  std::vector<ComplexMatrix> Su(P, ComplexMatrix(D, D));   // unnormalized derivative

  struct LogTerm {
    std::vector<double> dlogp;
    std::size_t ordinal;
  };
  std::vector<LogTerm> log_terms;
  std::vector<double> reward_vals;
  std::vector<std::vector<double>> reward_grads;
  std::vector<std::size_t> reward_meas_before;
  std::size_t meas_count = 0;
  std::size_t di = 0, ci = 0;

  auto trace_of = [](const ComplexMatrix& x) {
    return std::real(x.trace());
  };

  for (const ProgStep& st : prog.steps) {
    switch (st.kind) {
      case ProgStep::Kind::Gate: {
        std::vector<double> vals;
        if (st.theta_controls) {
          std::size_t arity = gates::family_arity(st.family, st.fc);
          vals.assign(theta.begin() + st.theta_offset, theta.begin() + st.theta_offset + arity);
        } else {
          vals = st.fixed_vals;
        }
        gates::GateResult g = build_gate(prog.layout, st, vals);
        ComplexMatrix ud = g.u.dagger();
        ComplexMatrix rho_old = rho;
        ComplexMatrix rho_u_old = rho_u;
        rho = g.u * rho_old * ud;
        rho_u = g.u * rho_u_old * ud;
        for (std::size_t k = 0; k < P; ++k) {
          ComplexMatrix sk = g.u * S[k] * ud;
          ComplexMatrix sku = g.u * Su[k] * ud;
          if (st.theta_controls && k >= st.theta_offset && k < st.theta_offset + g.du.size()) {
            const ComplexMatrix& duk = g.du[k - st.theta_offset];
            ComplexMatrix a = duk * rho_old * ud;
            ComplexMatrix au = duk * rho_u_old * ud;
            for (std::size_t i = 0; i < D; ++i)
              for (std::size_t j = 0; j < D; ++j) {
                sk(i, j) += a(i, j) + std::conj(a(j, i));
                sku(i, j) += au(i, j) + std::conj(au(j, i));
              }
          }
          S[k] = std::move(sk);
          Su[k] = std::move(sku);
        }
        break;
      }
      case ProgStep::Kind::Dissipate: {
        rho = channels::lindblad_rk4_raw(prog.layout, rho, st.diss);
        rho_u = channels::lindblad_rk4_raw(prog.layout, rho_u, st.diss);
        for (std::size_t k = 0; k < P; ++k) {
          S[k] = channels::lindblad_rk4_raw(prog.layout, S[k], st.diss);
          Su[k] = channels::lindblad_rk4_raw(prog.layout, Su[k], st.diss);
        }
        break;
      }
      case ProgStep::Kind::DispersiveMeasure: {
        std::vector<double> vals = st.theta_controls
                                       ? std::vector<double>{theta[st.theta_offset],
                                                             theta[st.theta_offset + 1]}
                                       : st.fixed_vals;
        channels::MeasurementFamily fam = gates::dispersive_povm(prog.layout, vals[0], vals[1]);
        if (di >= draws.discrete.size())
          throw ConfigError("sensitivity_gradient: outcome plan exhausted");
        std::size_t o = draws.discrete[di++];
        const std::vector<double>& msk = fam.diag[o];

        double prob = 0.0;
        for (std::size_t i = 0; i < D; ++i) prob += msk[i] * msk[i] * std::real(rho(i, i));
        if (prob <= 0.0) throw GradientError("sensitivity_gradient: zero-probability branch");

        ComplexMatrix rho_post(D, D);
        for (std::size_t i = 0; i < D; ++i)
          for (std::size_t j = 0; j < D; ++j) rho_post(i, j) = msk[i] * msk[j] * rho(i, j) / prob;
        ComplexMatrix rho_u_post(D, D);
        for (std::size_t i = 0; i < D; ++i)
          for (std::size_t j = 0; j < D; ++j) rho_u_post(i, j) = msk[i] * msk[j] * rho_u(i, j);

        double tr_u_pre = trace_of(rho_u);
        double tr_u_post = trace_of(rho_u_post);
        LogTerm lt;
        lt.ordinal = meas_count;
        lt.dlogp.assign(P, 0.0);

        for (std::size_t k = 0; k < P; ++k) {
          bool has_param = st.theta_controls && k >= st.theta_offset && k < st.theta_offset + 2;
          const std::vector<double>* dmsk =
              has_param ? &fam.ddiag[o][k - st.theta_offset] : nullptr;

          ComplexMatrix N(D, D), Nu(D, D);
          for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j) {
              cxd v = msk[i] * msk[j] * S[k](i, j);
              cxd vu = msk[i] * msk[j] * Su[k](i, j);
              if (dmsk) {
                double dm = (*dmsk)[i] * msk[j] + msk[i] * (*dmsk)[j];
                v += dm * rho(i, j);
                vu += dm * rho_u(i, j);
              }
              N(i, j) = v;
              Nu(i, j) = vu;
            }
          double trN = trace_of(N);
          for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j)
              S[k](i, j) = N(i, j) / prob - rho_post(i, j) * trN / prob;
          // log-likelihood track: the unnormalized update keeps every P = 1
          lt.dlogp[k] = trace_of(Nu) / tr_u_post - trace_of(Su[k]) / tr_u_pre;
          Su[k] = std::move(Nu);
        }
        log_terms.push_back(std::move(lt));
        rho = std::move(rho_post);
        rho_u = std::move(rho_u_post);
        ++meas_count;
        break;
      }
      case ProgStep::Kind::ContinuousMeasure: {
        std::vector<double> sigma = readout_sigma(prog.layout);
        if (ci >= draws.continuous_z.size())
          throw ConfigError("sensitivity_gradient: outcome plan exhausted");
        double z = draws.continuous_z[ci++];
        const double h = (kReadoutHi - kReadoutLo) / static_cast<double>(kReadoutPoints - 1);

        // lattice densities of the normalized state and their sensitivities
        std::vector<double> dens(kReadoutPoints, 0.0);
        std::vector<std::vector<double>> ddens(P, std::vector<double>(kReadoutPoints, 0.0));
        for (std::size_t p = 0; p < kReadoutPoints; ++p) {
          double m = kReadoutLo + h * static_cast<double>(p);
          for (std::size_t b = 0; b < D; ++b) {
            double g = gauss_density(m - sigma[b]);
            dens[p] += g * std::real(rho(b, b));
            for (std::size_t k = 0; k < P; ++k) ddens[k][p] += g * std::real(S[k](b, b));
          }
        }
        std::vector<double> cum(kReadoutPoints, 0.0);
        for (std::size_t i = 1; i < kReadoutPoints; ++i)
          cum[i] = cum[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);

        double m_s;
        std::vector<double> dm(P, 0.0);
        if (z >= cum.back()) {
          m_s = kReadoutHi;
        } else if (z <= 0.0) {
          m_s = kReadoutLo;
        } else {
          std::size_t hi =
              static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), z) - cum.begin());
          std::size_t lo = hi - 1;
          double span = cum[hi] - cum[lo];
          double frac = span > 0.0 ? (z - cum[lo]) / span : 0.0;
          m_s = kReadoutLo + h * (static_cast<double>(lo) + frac);
          for (std::size_t k = 0; k < P; ++k) {
            double dclo = 0.0, dchi = 0.0;
            for (std::size_t i = 1; i <= hi; ++i) {
              double inc = 0.5 * h * (ddens[k][i - 1] + ddens[k][i]);
              dchi += inc;
              if (i <= lo) dclo += inc;
            }
            dm[k] = h * ((z - cum[hi]) * dclo - (z - cum[lo]) * dchi) / (span * span);
          }
        }

        std::vector<double> w(D), wp(D);
        double prob = 0.0;
        for (std::size_t b = 0; b < D; ++b) {
          double g = gauss_density(m_s - sigma[b]);
          w[b] = std::sqrt(g);
          wp[b] = w[b] * (-(m_s - sigma[b]) / 2.0);
          prob += g * std::real(rho(b, b));
        }
        if (prob <= 0.0) throw GradientError("sensitivity_gradient: zero density at outcome");

        ComplexMatrix rho_post(D, D);
        for (std::size_t i = 0; i < D; ++i)
          for (std::size_t j = 0; j < D; ++j) rho_post(i, j) = w[i] * w[j] * rho(i, j) / prob;
        ComplexMatrix rho_u_post(D, D);
        for (std::size_t i = 0; i < D; ++i)
          for (std::size_t j = 0; j < D; ++j) rho_u_post(i, j) = w[i] * w[j] * rho_u(i, j);

        for (std::size_t k = 0; k < P; ++k) {
          ComplexMatrix N(D, D), Nu(D, D);
          for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j) {
              double dwij = (wp[i] * w[j] + w[i] * wp[j]) * dm[k];
              N(i, j) = w[i] * w[j] * S[k](i, j) + dwij * rho(i, j);
              Nu(i, j) = w[i] * w[j] * Su[k](i, j) + dwij * rho_u(i, j);
            }
          double trN = trace_of(N);
          for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j)
              S[k](i, j) = N(i, j) / prob - rho_post(i, j) * trN / prob;
          Su[k] = std::move(Nu);
        }
        rho = std::move(rho_post);
        rho_u = std::move(rho_u_post);
        ++meas_count;
        break;
      }
      case ProgStep::Kind::RewardExpect: {
        reward_vals.push_back(std::real(qcore::trace_prod(st.observable, rho)));
        std::vector<double> g(P, 0.0);
        for (std::size_t k = 0; k < P; ++k)
          g[k] = std::real(qcore::trace_prod(st.observable, S[k]));
        reward_grads.push_back(std::move(g));
        reward_meas_before.push_back(meas_count);
        break;
      }
      case ProgStep::Kind::RewardPurity: {
        reward_vals.push_back(std::real(qcore::trace_prod(rho, rho)));
        std::vector<double> g(P, 0.0);
        for (std::size_t k = 0; k < P; ++k)
          g[k] = 2.0 * std::real(qcore::trace_prod(rho, S[k]));
        reward_grads.push_back(std::move(g));
        reward_meas_before.push_back(meas_count);
        break;
      }
    }
  }

  std::vector<double> grad(P, 0.0);
  for (const auto& g : reward_grads)
    for (std::size_t k = 0; k < P; ++k) grad[k] += g[k];
  for (const LogTerm& lt : log_terms) {
    double a = 0.0;
    for (std::size_t r = 0; r < reward_vals.size(); ++r) {
      bool future = reward_meas_before[r] > lt.ordinal;
      if (!future_returns_only || future) a += reward_vals[r];
    }
    for (std::size_t k = 0; k < P; ++k) grad[k] += a * lt.dlogp[k];
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Costate-sweep backend. Forward pass records the op log (both state tracks
// and the measurement data); every functional is then pulled back to the
// start, accumulating parameter pickups along the way.
// ---------------------------------------------------------------------------
namespace {

struct AdjEntry {
  const ProgStep* step = nullptr;
  ComplexMatrix rho_pre, rho_u_pre;
  gates::GateResult gate;
  // discrete measurement
  std::vector<double> mask;
  std::vector<std::vector<double>> dmask;
  double prob = 1.0;
  ComplexMatrix rho_post;
  // continuous measurement
  double m = 0.0;
  std::vector<double> w, wprime, gamma_diag;
  double dp_dm = 0.0;
};

// tr(sigma (dM rho M + M rho dM)) for real diagonal masks
double mask_pickup(const ComplexMatrix& sigma, const ComplexMatrix& rho,
                   const std::vector<double>& m, const std::vector<double>& dm) {
  const std::size_t d = m.size();
  cxd acc = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      acc += sigma(i, j) * rho(j, i) * (dm[j] * m[i] + m[j] * dm[i]);
  return std::real(acc);
}

double herm_overlap(const ComplexMatrix& a, const ComplexMatrix& b) {
  return std::real(qcore::trace_prod(a, b));
}

}  // namespace

std::vector<double> adjoint_gradient(const Program& prog, const std::vector<double>& theta,
                                     const DrawPlan& draws, bool future_returns_only) {
  prog.layout.validate();
  const std::size_t P = theta.size();
  const std::size_t D = prog.layout.dim();

  qcore::StateBuild init = qcore::build_state(prog.layout, prog.initial);
  ComplexMatrix rho =
      init.pure ? qcore::DensityMatrix::pure(init.ket).matrix() : init.dm.matrix();
  ComplexMatrix rho_u = rho;

  std::vector<AdjEntry> entries(prog.steps.size());
  struct RewardRec {
    std::size_t pos;
    double value;
    std::size_t meas_before;
    bool is_purity;
  };
  std::vector<RewardRec> rewards;
  struct LogRec {
    std::size_t pos;
    double tr_pre, tr_post;
    std::size_t ordinal;
  };
  std::vector<LogRec> logs;
  std::size_t meas_count = 0, di = 0, ci = 0;

  for (std::size_t s = 0; s < prog.steps.size(); ++s) {
    const ProgStep& st = prog.steps[s];
    AdjEntry& en = entries[s];
    en.step = &st;
    en.rho_pre = rho;
    en.rho_u_pre = rho_u;
    switch (st.kind) {
      case ProgStep::Kind::Gate: {
        std::vector<double> vals;
        if (st.theta_controls) {
          std::size_t arity = gates::family_arity(st.family, st.fc);
          vals.assign(theta.begin() + st.theta_offset, theta.begin() + st.theta_offset + arity);
        } else {
          vals = st.fixed_vals;
        }
        en.gate = build_gate(prog.layout, st, vals);
        ComplexMatrix ud = en.gate.u.dagger();
        rho = en.gate.u * rho * ud;
        rho_u = en.gate.u * rho_u * ud;
        break;
      }
      case ProgStep::Kind::Dissipate:
        rho = channels::lindblad_rk4_raw(prog.layout, rho, st.diss);
        rho_u = channels::lindblad_rk4_raw(prog.layout, rho_u, st.diss);
        break;
      case ProgStep::Kind::DispersiveMeasure: {
        std::vector<double> vals = st.theta_controls
                                       ? std::vector<double>{theta[st.theta_offset],
                                                             theta[st.theta_offset + 1]}
                                       : st.fixed_vals;
        channels::MeasurementFamily fam = gates::dispersive_povm(prog.layout, vals[0], vals[1]);
        if (di >= draws.discrete.size())
          throw ConfigError("adjoint_gradient: outcome plan exhausted");
        std::size_t o = draws.discrete[di++];
        en.mask = fam.diag[o];
        en.dmask = fam.ddiag[o];
        double prob = 0.0;
        for (std::size_t i = 0; i < D; ++i)
          prob += en.mask[i] * en.mask[i] * std::real(rho(i, i));
        if (prob <= 0.0) throw GradientError("adjoint_gradient: zero-probability branch");
        en.prob = prob;
        LogRec lr;
        lr.pos = s;
        lr.tr_pre = std::real(rho_u.trace());
        lr.ordinal = meas_count;
        ComplexMatrix post(D, D), post_u(D, D);
        for (std::size_t i = 0; i < D; ++i)
          for (std::size_t j = 0; j < D; ++j) {
            post(i, j) = en.mask[i] * en.mask[j] * rho(i, j) / prob;
            post_u(i, j) = en.mask[i] * en.mask[j] * rho_u(i, j);
          }
        lr.tr_post = std::real(post_u.trace());
        logs.push_back(lr);
        en.rho_post = post;
        rho = std::move(post);
        rho_u = std::move(post_u);
        ++meas_count;
        break;
      }
      case ProgStep::Kind::ContinuousMeasure: {
        std::vector<double> sigma = readout_sigma(prog.layout);
        if (ci >= draws.continuous_z.size())
          throw ConfigError("adjoint_gradient: outcome plan exhausted");
        double z = draws.continuous_z[ci++];
        const double h = (kReadoutHi - kReadoutLo) / static_cast<double>(kReadoutPoints - 1);
        std::vector<double> dens(kReadoutPoints, 0.0);
        for (std::size_t p = 0; p < kReadoutPoints; ++p) {
          double m = kReadoutLo + h * static_cast<double>(p);
          for (std::size_t b = 0; b < D; ++b)
            dens[p] += gauss_density(m - sigma[b]) * std::real(rho(b, b));
        }
        std::vector<double> cum(kReadoutPoints, 0.0);
        for (std::size_t i = 1; i < kReadoutPoints; ++i)
          cum[i] = cum[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);

        en.gamma_diag.assign(D, 0.0);
        if (z >= cum.back()) {
          en.m = kReadoutHi;
        } else if (z <= 0.0) {
          en.m = kReadoutLo;
        } else {
          std::size_t hi =
              static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), z) - cum.begin());
          std::size_t lo = hi - 1;
          double span = cum[hi] - cum[lo];
          double frac = span > 0.0 ? (z - cum[lo]) / span : 0.0;
          en.m = kReadoutLo + h * (static_cast<double>(lo) + frac);
          double dmdclo = h * (z - cum[hi]) / (span * span);
          double dmdchi = -h * (z - cum[lo]) / (span * span);
          // dc_i / d rho_bb summed through the trapezoid cumulative
          for (std::size_t b = 0; b < D; ++b) {
            double tlo = 0.0, thi = 0.0;
            for (std::size_t q = 1; q <= hi; ++q) {
              double mq1 = kReadoutLo + h * static_cast<double>(q - 1);
              double mq = kReadoutLo + h * static_cast<double>(q);
              double inc =
                  0.5 * h * (gauss_density(mq1 - sigma[b]) + gauss_density(mq - sigma[b]));
              thi += inc;
              if (q <= lo) tlo += inc;
            }
            en.gamma_diag[b] = dmdclo * tlo + dmdchi * thi;
          }
        }

        en.w.assign(D, 0.0);
        en.wprime.assign(D, 0.0);
        double prob = 0.0;
        en.dp_dm = 0.0;
        for (std::size_t b = 0; b < D; ++b) {
          double g = gauss_density(en.m - sigma[b]);
          en.w[b] = std::sqrt(g);
          en.wprime[b] = en.w[b] * (-(en.m - sigma[b]) / 2.0);
          prob += g * std::real(rho(b, b));
          en.dp_dm += -(en.m - sigma[b]) * g * std::real(rho(b, b));
        }
        if (prob <= 0.0) throw GradientError("adjoint_gradient: zero density at outcome");
        en.prob = prob;
        ComplexMatrix post(D, D), post_u(D, D);
        for (std::size_t i = 0; i < D; ++i)
          for (std::size_t j = 0; j < D; ++j) {
            post(i, j) = en.w[i] * en.w[j] * rho(i, j) / prob;
            post_u(i, j) = en.w[i] * en.w[j] * rho_u(i, j);
          }
        en.rho_post = post;
        rho = std::move(post);
        rho_u = std::move(post_u);
        ++meas_count;
        break;
      }
      case ProgStep::Kind::RewardExpect:
        rewards.push_back({s, std::real(qcore::trace_prod(st.observable, rho)), meas_count,
                           false});
        break;
      case ProgStep::Kind::RewardPurity:
        rewards.push_back({s, std::real(qcore::trace_prod(rho, rho)), meas_count, true});
        break;
    }
  }

  std::vector<double> grad(P, 0.0);

  // Pull a costate pair back from entry `start` to the first step. sn rides
  // the normalized track, su the unnormalized one; a continuous outcome
  // couples su into sn through the sampled-m dependence.
  auto sweep = [&](std::size_t start, ComplexMatrix sn, ComplexMatrix su, bool sn_live,
                   bool su_live) {
    for (std::size_t idx = start + 1; idx-- > 0;) {
      const AdjEntry& en = entries[idx];
      const ProgStep& st = *en.step;
      switch (st.kind) {
        case ProgStep::Kind::Gate: {
          if (st.theta_controls && !en.gate.du.empty()) {
            ComplexMatrix ud = en.gate.u.dagger();
            ComplexMatrix xn, xu;
            if (sn_live) xn = (en.rho_pre * ud) * sn;
            if (su_live) xu = (en.rho_u_pre * ud) * su;
            for (std::size_t k = 0; k < en.gate.du.size(); ++k) {
              double pick = 0.0;
              if (sn_live) pick += 2.0 * std::real(qcore::trace_prod(en.gate.du[k], xn));
              if (su_live) pick += 2.0 * std::real(qcore::trace_prod(en.gate.du[k], xu));
              grad[st.theta_offset + k] += pick;
            }
          }
          if (sn_live) sn = en.gate.u.dagger() * sn * en.gate.u;
          if (su_live) su = en.gate.u.dagger() * su * en.gate.u;
          break;
        }
        case ProgStep::Kind::Dissipate:
          if (sn_live) sn = channels::lindblad_rk4_raw(prog.layout, sn, st.diss, true);
          if (su_live) su = channels::lindblad_rk4_raw(prog.layout, su, st.diss, true);
          break;
        case ProgStep::Kind::DispersiveMeasure: {
          if (st.theta_controls) {
            for (std::size_t k = 0; k < 2; ++k) {
              double pick = 0.0;
              if (sn_live) {
                double t1 = mask_pickup(sn, en.rho_pre, en.mask, en.dmask[k]);
                double dpk = 0.0;
                for (std::size_t i = 0; i < D; ++i)
                  dpk += 2.0 * en.mask[i] * en.dmask[k][i] * std::real(en.rho_pre(i, i));
                pick += (t1 - herm_overlap(sn, en.rho_post) * dpk) / en.prob;
              }
              if (su_live) pick += mask_pickup(su, en.rho_u_pre, en.mask, en.dmask[k]);
              grad[st.theta_offset + k] += pick;
            }
          }
          if (sn_live) {
            double c = herm_overlap(sn, en.rho_post);
            ComplexMatrix next(D, D);
            for (std::size_t i = 0; i < D; ++i)
              for (std::size_t j = 0; j < D; ++j) {
                next(i, j) = en.mask[i] * sn(i, j) * en.mask[j] / en.prob;
                if (i == j) next(i, i) -= c * en.mask[i] * en.mask[i] / en.prob;
              }
            sn = std::move(next);
          }
          if (su_live) {
            ComplexMatrix next(D, D);
            for (std::size_t i = 0; i < D; ++i)
              for (std::size_t j = 0; j < D; ++j)
                next(i, j) = en.mask[i] * su(i, j) * en.mask[j];
            su = std::move(next);
          }
          break;
        }
        case ProgStep::Kind::ContinuousMeasure: {
          // coefficient of dm across both tracks
          double lambda = 0.0;
          auto wd_overlap = [&](const ComplexMatrix& s, const ComplexMatrix& r) {
            cxd acc = 0.0;
            for (std::size_t i = 0; i < D; ++i)
              for (std::size_t j = 0; j < D; ++j)
                acc += s(i, j) * r(j, i) *
                       (en.wprime[j] * en.w[i] + en.w[j] * en.wprime[i]);
            return std::real(acc);
          };
          if (sn_live)
            lambda += wd_overlap(sn, en.rho_pre) / en.prob -
                      herm_overlap(sn, en.rho_post) * en.dp_dm / en.prob;
          if (su_live) lambda += wd_overlap(su, en.rho_u_pre);

          ComplexMatrix next_n(D, D);
          if (sn_live) {
            double c = herm_overlap(sn, en.rho_post);
            for (std::size_t i = 0; i < D; ++i)
              for (std::size_t j = 0; j < D; ++j) {
                next_n(i, j) = en.w[i] * sn(i, j) * en.w[j] / en.prob;
                if (i == j) next_n(i, i) -= c * en.w[i] * en.w[i] / en.prob;
              }
          }
          if (lambda != 0.0) {
            for (std::size_t b = 0; b < D; ++b) next_n(b, b) += lambda * en.gamma_diag[b];
            sn_live = true;
          }
          sn = std::move(next_n);
          if (su_live) {
            ComplexMatrix next(D, D);
            for (std::size_t i = 0; i < D; ++i)
              for (std::size_t j = 0; j < D; ++j) next(i, j) = en.w[i] * su(i, j) * en.w[j];
            su = std::move(next);
          }
          break;
        }
        case ProgStep::Kind::RewardExpect:
        case ProgStep::Kind::RewardPurity:
          break;
      }
    }
  };

  for (const RewardRec& r : rewards) {
    ComplexMatrix sn;
    if (r.is_purity) {
      sn = entries[r.pos].rho_pre * cxd(2.0, 0.0);
    } else {
      sn = prog.steps[r.pos].observable;
    }
    if (r.pos == 0) continue;  // nothing upstream to differentiate
    sweep(r.pos - 1, std::move(sn), ComplexMatrix(D, D), true, false);
  }
  for (const LogRec& lr : logs) {
    double a = 0.0;
    for (const RewardRec& r : rewards) {
      bool future = r.meas_before > lr.ordinal;
      if (!future_returns_only || future) a += r.value;
    }
    if (a == 0.0) continue;
    ComplexMatrix plus = ComplexMatrix::identity(D) * cxd(a / lr.tr_post, 0.0);
    sweep(lr.pos, ComplexMatrix(D, D), std::move(plus), false, true);
    if (lr.pos > 0) {
      ComplexMatrix minus = ComplexMatrix::identity(D) * cxd(-a / lr.tr_pre, 0.0);
      sweep(lr.pos - 1, ComplexMatrix(D, D), std::move(minus), false, true);
    }
  }
  return grad;
}

FdReport finite_diff_check(const Program& prog, const std::vector<double>& theta, double h,
                           const std::vector<std::uint64_t>& seeds) {
  FdReport report;
  report.grad.assign(theta.size(), 0.0);
  report.fd.assign(theta.size(), 0.0);

  for (std::uint64_t seed : seeds) {
    Rng rng(seed);
    Recorded base = forward_record(prog, theta, rng);
    std::vector<double> grad = base.surrogate.gradient(base.tape);

    auto surrogate_at = [&](const std::vector<double>& th) {
      Rng unused(1);
      Recorded r = forward_record(prog, th, unused, &base.draws);
      double g = r.surrogate.value;
      for (std::size_t j = 0; j < r.surrogate.score_terms.size(); ++j)
        g += base.surrogate.score_terms[j].coeff *
             r.tape.scalar(r.surrogate.score_terms[j].logp_node);
      return g;
    };

    std::vector<double> fd(theta.size(), 0.0);
    double seed_rel = 0.0, seed_abs = 0.0;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      std::vector<double> tp = theta, tm = theta;
      tp[k] += h;
      tm[k] -= h;
      fd[k] = (surrogate_at(tp) - surrogate_at(tm)) / (2.0 * h);
      double scale = std::max(std::abs(grad[k]), std::abs(fd[k]));
      double rel = scale > 1e-10 ? std::abs(grad[k] - fd[k]) / scale : std::abs(grad[k] - fd[k]);
      seed_rel = std::max(seed_rel, rel);
      seed_abs = std::max(seed_abs, std::abs(grad[k] - fd[k]));
    }
    if (seed_rel >= report.max_rel_err) {
      report.max_rel_err = seed_rel;
      report.grad = grad;
      report.fd = fd;
    }
    report.max_abs_err = std::max(report.max_abs_err, seed_abs);
  }
  return report;
}

}  // namespace fgrape::graddiff
