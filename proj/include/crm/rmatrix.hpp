// Convergent r-matrix on a finite chain, the Berry connection and reduced
// r-matrix on the band factor, the k-matrix and the commutator check.
//
// Composite index of the CRM: row = m * N + p (band outer, grid point inner).

#ifndef CRM_RMATRIX_HPP
#define CRM_RMATRIX_HPP

#include "crm/csv.hpp"
#include "crm/model.hpp"

#include <ostream>

namespace crm {

// S(d) = (1/N) sum_j R_j e^{i d R_j}, summed directly. S(0) is the mass center.
inline cplx weighted_site_sum(const LatticeSpec& spec, double dk) {
  cplx sum = 0.0;
  for (int j = 0; j < spec.n_cells; ++j) {
    const double r = spec.site_position(j);
    sum += r * std::polar(1.0, dk * r);
  }
  return sum / static_cast<double>(spec.n_cells);
}

// K_{mn}(p, q) = sum_l conj(a_l^{(m)}(k_p)) a_l^{(n)}(k_q) for all m, n.
inline CMatrix overlap_matrix(const BlochField& field, int p, int q) {
  return field.coeffs(p).adjoint() * field.coeffs(q);
}

enum class ConnectionKind { BerryConnection, ReducedR };

inline const char* to_string(ConnectionKind k) {
  return k == ConnectionKind::BerryConnection ? "berry-connection" : "reduced-r";
}

struct ConnectionField {
  ConnectionKind kind = ConnectionKind::BerryConnection;
  std::vector<CMatrix> mats;
  // Largest anti-Hermitian part removed by symmetrization (0 on the analytic path).
  double defect = 0.0;

  int size() const { return static_cast<int>(mats.size()); }
  const CMatrix& operator[](int p) const { return mats[static_cast<std::size_t>(p)]; }
};

// A(k_p) = i C(k_p)^dagger dC(k_p). Finite-difference connections are
// symmetrized; analytic ones are returned as computed.
inline ConnectionField berry_connection(const BlochField& field) {
  const auto n = static_cast<std::size_t>(field.size());
  ConnectionField out;
  out.kind = ConnectionKind::BerryConnection;
  out.mats.resize(n);
  std::vector<double> defects(n, 0.0);
  const bool symmetrize = field.scheme() == DerivativeScheme::CentralDifference;
  parallel_for(n, [&](std::size_t p) {
    const int pi_ = static_cast<int>(p);
    CMatrix a = I * field.coeffs(pi_).adjoint() * field.derivative(pi_);
    if (symmetrize) {
      defects[p] = hermiticity_defect(a);
      a = 0.5 * (a + a.adjoint()).eval();
    }
    out.mats[p] = std::move(a);
  });
  for (double d : defects) out.defect = std::max(out.defect, d);
  return out;
}

inline ConnectionField reduced_rmatrix(const BlochField& field) {
  ConnectionField out = berry_connection(field);
  out.kind = ConnectionKind::ReducedR;
  const double rbar = field.lattice().mean_position();
  for (auto& m : out.mats) m.diagonal().array() += rbar;
  return out;
}

struct CRMatrix {
  CMatrix matrix;
  LatticeSpec lattice;
  DerivativeScheme scheme = DerivativeScheme::Analytic;
  double connection_defect = 0.0;
  double hermiticity_defect = 0.0;

  int dim() const { return static_cast<int>(matrix.rows()); }
  cplx entry(int m, int p, int n, int q) const {
    const int nc = lattice.n_cells;
    return matrix(m * nc + p, n * nc + q);
  }
};

// entry((m,p),(n,q)) = delta_pq A_mn(k_p) + K_mn(p,q) S(k_p - k_q).
inline CRMatrix crm(const BlochField& field, double hermiticity_tolerance = 1e-10) {
  const LatticeSpec& spec = field.lattice();
  const KGrid& grid = field.grid();
  const int n = field.size();
  const int nb = field.n_bands();
  const ConnectionField conn = berry_connection(field);

  CRMatrix out;
  out.lattice = spec;
  out.scheme = field.scheme();
  out.connection_defect = conn.defect;
  out.matrix = CMatrix::Zero(static_cast<Eigen::Index>(nb) * n, static_cast<Eigen::Index>(nb) * n);

  parallel_for(static_cast<std::size_t>(n) * n, [&](std::size_t idx) {
    const int p = static_cast<int>(idx / static_cast<std::size_t>(n));
    const int q = static_cast<int>(idx % static_cast<std::size_t>(n));
    const cplx s = weighted_site_sum(spec, grid[p] - grid[q]);
    CMatrix block = overlap_matrix(field, p, q) * s;
    if (p == q) block += conn[p];
    for (int m = 0; m < nb; ++m) {
      for (int l = 0; l < nb; ++l) out.matrix(m * n + p, l * n + q) = block(m, l);
    }
  });

  if (!out.matrix.allFinite()) throw NonHermitian("r-matrix has non-finite entries",
                                          std::numeric_limits<double>::infinity());
  out.hermiticity_defect = crm::hermiticity_defect(out.matrix);
  if (out.hermiticity_defect > hermiticity_tolerance) {
    throw NonHermitian("r-matrix Hermiticity defect " + csv::num(out.hermiticity_defect) +
                           " exceeds tolerance",
                       out.hermiticity_defect);
  }
  return out;
}

// The p = q block of a CRM as an n_bands x n_bands matrix.
inline CMatrix crm_block(const CRMatrix& r, int p, int q) {
  const int nc = r.lattice.n_cells;
  const int nb = r.dim() / nc;
  CMatrix b(nb, nb);
  for (int m = 0; m < nb; ++m) {
    for (int l = 0; l < nb; ++l) b(m, l) = r.matrix(m * nc + p, l * nc + q);
  }
  return b;
}

inline std::vector<CMatrix> kmatrix(const KGrid& grid, int n_bands) {
  std::vector<CMatrix> out(static_cast<std::size_t>(grid.size()));
  for (int p = 0; p < grid.size(); ++p) {
    out[static_cast<std::size_t>(p)] = grid[p] * CMatrix::Identity(n_bands, n_bands);
  }
  return out;
}

// [r(k), k(k)] per grid point. Zero by construction since k(k) is scalar.
inline std::vector<CMatrix> commutator_check(const BlochField& field) {
  const ConnectionField r = reduced_rmatrix(field);
  const auto k = kmatrix(field.grid(), field.n_bands());
  std::vector<CMatrix> out(k.size());
  for (std::size_t p = 0; p < k.size(); ++p) out[p] = r.mats[p] * k[p] - k[p] * r.mats[p];
  return out;
}

// Frobenius distance of each commutator from i * identity.
inline std::vector<double> weyl_defect(const std::vector<CMatrix>& commutators) {
  std::vector<double> out;
  out.reserve(commutators.size());
  for (const auto& c : commutators) {
    out.push_back((c - I * CMatrix::Identity(c.rows(), c.cols())).norm());
  }
  return out;
}

inline void write_csv(std::ostream& os, const CRMatrix& r) {
  csv::Writer w(os, {"m", "p", "n", "q", "re", "im"});
  const int nc = r.lattice.n_cells;
  const int nb = r.dim() / nc;
  for (int m = 0; m < nb; ++m) {
    for (int p = 0; p < nc; ++p) {
      for (int n = 0; n < nb; ++n) {
        for (int q = 0; q < nc; ++q) {
          const cplx v = r.entry(m, p, n, q);
          w.values(m, p, n, q, v.real(), v.imag());
        }
      }
    }
  }
}

inline void write_csv(std::ostream& os, const ConnectionField& c) {
  csv::Writer w(os, {"p", "m", "n", "re", "im"});
  for (int p = 0; p < c.size(); ++p) {
    for (Eigen::Index m = 0; m < c[p].rows(); ++m) {
      for (Eigen::Index n = 0; n < c[p].cols(); ++n) {
        w.values(p, static_cast<int>(m), static_cast<int>(n), c[p](m, n).real(),
                 c[p](m, n).imag());
      }
    }
  }
}

}  // namespace crm

#endif  // CRM_RMATRIX_HPP
