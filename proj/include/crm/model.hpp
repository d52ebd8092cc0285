// Finite-chain lattices, k-grids and Bloch coefficient fields (ribbons).
//
// A BlochField stores, for every grid point k_p, an n_bands x n_bands unitary
// matrix whose column n holds the band-n coefficients a_i^{(n)}(k_p). Indices
// are zero-based throughout: cells j = 0..N-1, grid points p = 0..N-1.

#ifndef CRM_MODEL_HPP
#define CRM_MODEL_HPP

#include "crm/core.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <utility>

namespace crm {

struct LatticeSpec {
  int n_cells = 1;
  double lattice_constant = 1.0;
  int n_bands = 1;
  // Position of the first site. Zero reproduces R_j = j * a.
  double origin = 0.0;

  void validate() const {
    if (n_cells < 1) throw InvalidArgument("lattice.N must be >= 1");
    if (n_bands < 1) throw InvalidArgument("lattice.bands must be >= 1");
    if (!(lattice_constant > 0.0) || !std::isfinite(lattice_constant)) {
      throw InvalidArgument("lattice.a must be a finite positive length");
    }
    if (!std::isfinite(origin)) throw InvalidArgument("lattice.origin must be finite");
  }

  double site_position(int j) const { return origin + j * lattice_constant; }

  // Crystal mass center (1/N) sum_j R_j in closed form.
  double mean_position() const {
    return origin + 0.5 * (n_cells - 1) * lattice_constant;
  }

  std::vector<double> site_positions() const {
    std::vector<double> r(static_cast<std::size_t>(n_cells));
    for (int j = 0; j < n_cells; ++j) r[static_cast<std::size_t>(j)] = site_position(j);
    return r;
  }
};

class KGrid {
 public:
  KGrid() = default;
  KGrid(int n, double spacing) : spacing_(spacing), points_(static_cast<std::size_t>(n)) {
    for (int p = 0; p < n; ++p) points_[static_cast<std::size_t>(p)] = p * spacing;
  }

  int size() const { return static_cast<int>(points_.size()); }
  double spacing() const { return spacing_; }
  double operator[](int p) const { return points_[static_cast<std::size_t>(p)]; }
  const std::vector<double>& points() const { return points_; }

  int next(int p) const { return p + 1 == size() ? 0 : p + 1; }
  int prev(int p) const { return p == 0 ? size() - 1 : p - 1; }

 private:
  double spacing_ = 0.0;
  std::vector<double> points_;
};

inline KGrid build_kgrid(const LatticeSpec& spec) {
  spec.validate();
  return KGrid(spec.n_cells, two_pi / (spec.n_cells * spec.lattice_constant));
}

enum class DerivativeScheme { Analytic, CentralDifference };

inline const char* to_string(DerivativeScheme s) {
  return s == DerivativeScheme::Analytic ? "analytic" : "central-difference";
}

class BlochField {
 public:
  static constexpr double unitarity_tolerance = 1e-12;

  BlochField(LatticeSpec lattice, std::vector<CMatrix> coeffs,
             std::optional<std::vector<CMatrix>> derivatives = std::nullopt,
             std::optional<std::vector<RVector>> energies = std::nullopt)
      : lattice_(std::move(lattice)),
        grid_(build_kgrid(lattice_)),
        coeffs_(std::move(coeffs)),
        derivatives_(std::move(derivatives)),
        energies_(std::move(energies)) {
    validate();
  }

  const LatticeSpec& lattice() const { return lattice_; }
  const KGrid& grid() const { return grid_; }
  int n_bands() const { return lattice_.n_bands; }
  int size() const { return grid_.size(); }

  const CMatrix& coeffs(int p) const { return coeffs_.at(static_cast<std::size_t>(p)); }
  CVector column(int p, int n) const { return coeffs(p).col(n); }

  bool has_analytic_derivatives() const { return derivatives_.has_value(); }
  DerivativeScheme scheme() const {
    return derivatives_ ? DerivativeScheme::Analytic : DerivativeScheme::CentralDifference;
  }

  // d/dk of the coefficient matrix at k_p: analytic when supplied, otherwise
  // (C(k_{p+1}) - C(k_{p-1})) / (2 dk) with periodic wrap.
  CMatrix derivative(int p) const {
    if (derivatives_) return (*derivatives_)[static_cast<std::size_t>(p)];
    const int n = size();
    if (n < 3) return CMatrix::Zero(n_bands(), n_bands());
    return (coeffs(grid_.next(p)) - coeffs(grid_.prev(p))) / (2.0 * grid_.spacing());
  }

  bool has_energies() const { return energies_.has_value(); }
  const RVector& energies(int p) const {
    if (!energies_) throw InvalidArgument("field carries no band energies");
    return (*energies_)[static_cast<std::size_t>(p)];
  }
  const std::optional<std::vector<RVector>>& energy_table() const { return energies_; }
  const std::optional<std::vector<CMatrix>>& derivative_table() const { return derivatives_; }
  const std::vector<CMatrix>& coefficient_table() const { return coeffs_; }

 private:
  void validate() const {
    lattice_.validate();
    const auto n = static_cast<std::size_t>(lattice_.n_cells);
    const Eigen::Index nb = lattice_.n_bands;
    if (coeffs_.size() != n) throw InvalidArgument("coefficient table length must equal lattice.N");
    if (derivatives_ && derivatives_->size() != n) {
      throw InvalidArgument("derivative table length must equal lattice.N");
    }
    if (energies_ && energies_->size() != n) {
      throw InvalidArgument("energy table length must equal lattice.N");
    }
    for (std::size_t p = 0; p < n; ++p) {
      const CMatrix& c = coeffs_[p];
      if (c.rows() != nb || c.cols() != nb) {
        throw InvalidArgument("coefficient matrix at p=" + std::to_string(p) + " has wrong shape");
      }
      if (!c.allFinite()) {
        throw InvalidArgument("non-finite coefficient at p=" + std::to_string(p));
      }
      const double defect = unitarity_defect(c);
      if (defect > unitarity_tolerance) {
        std::ostringstream os;
        os << "coefficient matrix at p=" << p << " is not unitary (defect " << defect << ")";
        throw InvalidArgument(os.str());
      }
      if (derivatives_) {
        const CMatrix& d = (*derivatives_)[p];
        if (d.rows() != nb || d.cols() != nb || !d.allFinite()) {
          throw InvalidArgument("bad derivative matrix at p=" + std::to_string(p));
        }
      }
      if (energies_) {
        const RVector& e = (*energies_)[p];
        if (e.size() != nb || !e.allFinite()) {
          throw InvalidArgument("bad energy vector at p=" + std::to_string(p));
        }
        for (Eigen::Index b = 1; b < nb; ++b) {
          if (e[b] < e[b - 1]) {
            throw InvalidArgument("band energies not ascending at p=" + std::to_string(p));
          }
        }
      }
    }
  }

  LatticeSpec lattice_;
  KGrid grid_;
  std::vector<CMatrix> coeffs_;
  std::optional<std::vector<CMatrix>> derivatives_;
  std::optional<std::vector<RVector>> energies_;
};

// k-independent coefficients; the identity field is the plain Wannier basis.
inline BlochField constant_field(const LatticeSpec& lattice, const CMatrix& c) {
  lattice.validate();
  std::vector<CMatrix> coeffs(static_cast<std::size_t>(lattice.n_cells), c);
  std::vector<CMatrix> derivs(static_cast<std::size_t>(lattice.n_cells),
                              CMatrix::Zero(c.rows(), c.cols()));
  return BlochField(lattice, std::move(coeffs), std::move(derivs));
}

inline BlochField identity_field(const LatticeSpec& lattice) {
  return constant_field(lattice, CMatrix::Identity(lattice.n_bands, lattice.n_bands));
}

// ---------------------------------------------------------------------------
// Two-band angle parametrization.

struct TwoBandAngles {
  std::function<double(double)> theta;
  std::function<double(double)> phi;
  std::function<double(double)> dtheta;  // optional
  std::function<double(double)> dphi;    // optional

  bool has_derivatives() const { return static_cast<bool>(dtheta) && static_cast<bool>(dphi); }
};

// Columns (cos(t/2), sin(t/2) e^{i phi}) and (-sin(t/2) e^{-i phi}, cos(t/2)).
inline CMatrix two_band_coefficients(double theta, double phi) {
  const double c = std::cos(0.5 * theta);
  const double s = std::sin(0.5 * theta);
  const cplx e = std::polar(1.0, phi);
  CMatrix m(2, 2);
  m(0, 0) = c;
  m(1, 0) = s * e;
  m(0, 1) = -s * std::conj(e);
  m(1, 1) = c;
  return m;
}

inline CMatrix two_band_coefficient_derivative(double theta, double phi, double dtheta,
                                               double dphi) {
  const double c = std::cos(0.5 * theta);
  const double s = std::sin(0.5 * theta);
  const cplx e = std::polar(1.0, phi);
  CMatrix d(2, 2);
  d(0, 0) = -0.5 * s * dtheta;
  d(1, 0) = (0.5 * c * dtheta + I * s * dphi) * e;
  d(0, 1) = (-0.5 * c * dtheta + I * s * dphi) * std::conj(e);
  d(1, 1) = -0.5 * s * dtheta;
  return d;
}

using EnergyFunction = std::function<RVector(double)>;

inline BlochField two_band_field(const TwoBandAngles& angles, const LatticeSpec& lattice,
                                 const EnergyFunction& energies = {}) {
  if (lattice.n_bands != 2) throw InvalidArgument("two_band_field requires lattice.bands == 2");
  if (!angles.theta || !angles.phi) throw InvalidArgument("two_band_field needs theta and phi");
  const KGrid grid = build_kgrid(lattice);
  const auto n = static_cast<std::size_t>(grid.size());
  std::vector<CMatrix> coeffs(n);
  std::vector<CMatrix> derivs(angles.has_derivatives() ? n : 0);
  std::vector<RVector> e(energies ? n : 0);
  parallel_for(n, [&](std::size_t p) {
    const double k = grid[static_cast<int>(p)];
    const double t = angles.theta(k);
    const double f = angles.phi(k);
    if (!std::isfinite(t) || !std::isfinite(f)) {
      throw InvalidArgument("non-finite angle at k=" + std::to_string(k));
    }
    coeffs[p] = two_band_coefficients(t, f);
    if (angles.has_derivatives()) {
      const double dt = angles.dtheta(k);
      const double df = angles.dphi(k);
      if (!std::isfinite(dt) || !std::isfinite(df)) {
        throw InvalidArgument("non-finite angle derivative at k=" + std::to_string(k));
      }
      derivs[p] = two_band_coefficient_derivative(t, f, dt, df);
    }
    if (energies) e[p] = energies(k);
  });
  std::optional<std::vector<CMatrix>> d;
  if (angles.has_derivatives()) d = std::move(derivs);
  std::optional<std::vector<RVector>> en;
  if (energies) en = std::move(e);
  return BlochField(lattice, std::move(coeffs), std::move(d), std::move(en));
}

// ---------------------------------------------------------------------------
// Graphene nearest-neighbour phasors.

// e^{i kx b} + e^{i(-kx/2 + sqrt3 ky/2) b} + e^{i(-kx/2 - sqrt3 ky/2) b}
inline cplx graphene_phasor(double kx, double ky, double bond) {
  const double s3 = std::sqrt(3.0);
  return std::polar(1.0, kx * bond) + std::polar(1.0, (-0.5 * kx + 0.5 * s3 * ky) * bond) +
         std::polar(1.0, (-0.5 * kx - 0.5 * s3 * ky) * bond);
}

struct AnglePair {
  double theta;
  double phi;
};

inline AnglePair graphene_phases(double kx, double ky, double bond) {
  if (!(bond > 0.0)) throw InvalidArgument("graphene bond length must be positive");
  const cplx f = graphene_phasor(kx, ky, bond);
  if (std::abs(f) < 1e-12) {
    throw DegenerateRibbon("graphene phasor sum vanishes (Dirac point); arg undefined", kx,
                           std::abs(f));
  }
  return {0.5 * pi, -std::arg(f)};
}

inline double dirac_point_ky(double bond) { return 4.0 * pi / (3.0 * std::sqrt(3.0) * bond); }

// ---------------------------------------------------------------------------
// Eigen-decomposition of user Hamiltonian fields.

using HamiltonianFunction = std::function<CMatrix(double)>;

// Makes the largest-magnitude component of every column real and positive.
// Near-ties (relative 1e-12) resolve to the lowest index, which keeps the
// choice stable under the rounding introduced by the fix itself.
inline void fix_phase(CMatrix& c) {
  for (Eigen::Index n = 0; n < c.cols(); ++n) {
    double best = 0.0;
    for (Eigen::Index i = 0; i < c.rows(); ++i) best = std::max(best, std::abs(c(i, n)));
    if (best == 0.0) continue;
    Eigen::Index pick = 0;
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      if (std::abs(c(i, n)) >= best * (1.0 - 1e-12)) {
        pick = i;
        break;
      }
    }
    const cplx v = c(pick, n);
    const double mag = std::abs(v);
    if (v.imag() == 0.0 && v.real() > 0.0) continue;
    const cplx phase = std::conj(v) / mag;
    c.col(n) *= phase;
    c(pick, n) = cplx(std::abs(c(pick, n)), 0.0);
  }
}

inline BlochField eigenfield_from_hamiltonian(const HamiltonianFunction& h,
                                              const LatticeSpec& lattice, double gap_tol) {
  const KGrid grid = build_kgrid(lattice);
  const auto n = static_cast<std::size_t>(grid.size());
  const Eigen::Index nb = lattice.n_bands;
  std::vector<CMatrix> coeffs(n);
  std::vector<RVector> energies(n);
  std::vector<double> gaps(n, std::numeric_limits<double>::infinity());
  parallel_for(n, [&](std::size_t p) {
    const double k = grid[static_cast<int>(p)];
    const CMatrix hk = h(k);
    if (hk.rows() != nb || hk.cols() != nb) {
      throw InvalidArgument("Hamiltonian at k=" + std::to_string(k) + " has wrong shape");
    }
    if (!hk.allFinite() || hermiticity_defect(hk) > 1e-12) {
      throw InvalidArgument("Hamiltonian at k=" + std::to_string(k) + " is not Hermitian");
    }
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(hk);
    energies[p] = solver.eigenvalues();
    coeffs[p] = solver.eigenvectors();
    fix_phase(coeffs[p]);
    for (Eigen::Index b = 1; b < nb; ++b) {
      gaps[p] = std::min(gaps[p], energies[p][b] - energies[p][b - 1]);
    }
  });
  for (std::size_t p = 0; p < n; ++p) {
    if (gaps[p] < gap_tol) {
      const double k = grid[static_cast<int>(p)];
      std::ostringstream os;
      os << "degenerate bands at grid point p=" << p << " (k=" << k << "), gap " << gaps[p];
      throw DegenerateRibbon(os.str(), k, gaps[p]);
    }
  }
  return BlochField(lattice, std::move(coeffs), std::nullopt, std::move(energies));
}

// ---------------------------------------------------------------------------
// Analytic two-band presets. Both use h(k) = -d(k).sigma so that the first
// column (lower band) carries the lower energy.

struct TwoBandModel {
  TwoBandAngles angles;
  EnergyFunction energies;
};

// d = (t1 + t2 cos ka, t2 sin ka, mass): a Rice-Mele type chain with broken
// inversion for mass != 0.
inline TwoBandModel two_band_generic(double a, double t1 = 1.0, double t2 = 0.6,
                                     double mass = 0.4) {
  struct D {
    double x, y, z, dx, dy;
  };
  auto d = [=](double k) {
    return D{t1 + t2 * std::cos(k * a), t2 * std::sin(k * a), mass, -t2 * a * std::sin(k * a),
             t2 * a * std::cos(k * a)};
  };
  TwoBandModel m;
  m.angles.theta = [=](double k) {
    const D v = d(k);
    return std::atan2(std::hypot(v.x, v.y), v.z);
  };
  m.angles.phi = [=](double k) {
    const D v = d(k);
    return std::atan2(v.y, v.x);
  };
  m.angles.dphi = [=](double k) {
    const D v = d(k);
    return (v.x * v.dy - v.y * v.dx) / (v.x * v.x + v.y * v.y);
  };
  m.angles.dtheta = [=](double k) {
    const D v = d(k);
    const double rho = std::hypot(v.x, v.y);
    const double drho = (v.x * v.dx + v.y * v.dy) / rho;
    return v.z * drho / (rho * rho + v.z * v.z);
  };
  m.energies = [=](double k) {
    const D v = d(k);
    const double e = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
    RVector out(2);
    out << -e, e;
    return out;
  };
  return m;
}

// Circular loop of the given radius around the graphene Dirac point at
// (0, 4 pi / (3 sqrt3 b)); the chain's k-grid parametrizes the loop angle.
inline TwoBandModel graphene_ribbon(double a, double radius = 0.5, double bond = 1.0,
                                    double hopping = 1.0) {
  const double ky0 = dirac_point_ky(bond);
  const double s3 = std::sqrt(3.0);
  auto point = [=](double k) {
    return std::pair{radius * std::cos(k * a), ky0 + radius * std::sin(k * a)};
  };
  TwoBandModel m;
  m.angles.theta = [](double) { return 0.5 * pi; };
  m.angles.dtheta = [](double) { return 0.0; };
  m.angles.phi = [=](double k) {
    const auto [kx, ky] = point(k);
    return graphene_phases(kx, ky, bond).phi;
  };
  m.angles.dphi = [=](double k) {
    const auto [kx, ky] = point(k);
    const cplx e1 = std::polar(1.0, kx * bond);
    const cplx e2 = std::polar(1.0, (-0.5 * kx + 0.5 * s3 * ky) * bond);
    const cplx e3 = std::polar(1.0, (-0.5 * kx - 0.5 * s3 * ky) * bond);
    const cplx f = e1 + e2 + e3;
    const cplx dfx = I * bond * e1 - 0.5 * I * bond * (e2 + e3);
    const cplx dfy = 0.5 * I * s3 * bond * (e2 - e3);
    const cplx df = dfx * (-radius * a * std::sin(k * a)) + dfy * (radius * a * std::cos(k * a));
    return -(df / f).imag();
  };
  m.energies = [=](double k) {
    const auto [kx, ky] = point(k);
    const double e = hopping * std::abs(graphene_phasor(kx, ky, bond));
    RVector out(2);
    out << -e, e;
    return out;
  };
  return m;
}

}  // namespace crm

#endif  // CRM_MODEL_HPP
