// The inner-product preserving map from Bloch states to the product space
// V (x) E: |psi_{n,k}> -> |A_{n,k}> (x) |E_k>.
//
// Normalization lives in |E_k> (entries e^{-i k R_j} / sqrt N). The
// generalized Wannier coefficients are stored without the 1/sqrt N and
// re-normalized by recover_band_coefficients.

#ifndef CRM_PROJECTION_HPP
#define CRM_PROJECTION_HPP

#include "crm/model.hpp"

namespace crm {

struct FactorVectorA {
  CVector entries;
};

struct FactorVectorE {
  CVector entries;
};

struct ProductVector {
  CVector entries;
};

namespace detail {
inline void check_band(const BlochField& field, int n) {
  if (n < 0 || n >= field.n_bands()) {
    throw InvalidArgument("band index " + std::to_string(n) + " out of range");
  }
}
inline void check_k(int size, int p) {
  if (p < 0 || p >= size) throw InvalidArgument("k index " + std::to_string(p) + " out of range");
}
}  // namespace detail

inline FactorVectorA project_A(const BlochField& field, int band, int kindex) {
  detail::check_band(field, band);
  detail::check_k(field.size(), kindex);
  return {field.column(kindex, band)};
}

inline FactorVectorE project_E(const LatticeSpec& spec, const KGrid& grid, int kindex) {
  detail::check_k(grid.size(), kindex);
  const int n = spec.n_cells;
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  CVector e(n);
  for (int j = 0; j < n; ++j) e[j] = norm * std::polar(1.0, -grid[kindex] * spec.site_position(j));
  return {e};
}

// Kronecker order: the A index is outer, the site index inner.
inline ProductVector embed(const FactorVectorA& a, const FactorVectorE& e) {
  const Eigen::Index na = a.entries.size();
  const Eigen::Index ne = e.entries.size();
  CVector out(na * ne);
  for (Eigen::Index i = 0; i < na; ++i) {
    for (Eigen::Index j = 0; j < ne; ++j) out[i * ne + j] = a.entries[i] * e.entries[j];
  }
  return {out};
}

// <E_{k_p}|E_{k_q}> = (1/N) sum_j e^{i (k_p - k_q) R_j}, summed directly.
inline cplx e_factor_overlap(const LatticeSpec& spec, const KGrid& grid, int p, int q) {
  cplx sum = 0.0;
  const double dk = grid[p] - grid[q];
  for (int j = 0; j < spec.n_cells; ++j) sum += std::polar(1.0, dk * spec.site_position(j));
  return sum / static_cast<double>(spec.n_cells);
}

inline cplx a_factor_overlap(const BlochField& field, int m, int p, int n, int q) {
  return field.column(p, m).dot(field.column(q, n));
}

struct BandK {
  int band;
  int kindex;
};

inline cplx inner_product_pair(const BlochField& field, BandK left, BandK right) {
  detail::check_band(field, left.band);
  detail::check_band(field, right.band);
  detail::check_k(field.size(), left.kindex);
  detail::check_k(field.size(), right.kindex);
  return a_factor_overlap(field, left.band, left.kindex, right.band, right.kindex) *
         e_factor_overlap(field.lattice(), field.grid(), left.kindex, right.kindex);
}

// All n_bands * N embedded basis vectors as columns, ordered (band, k).
inline CMatrix embedded_basis(const BlochField& field) {
  const int nb = field.n_bands();
  const int n = field.size();
  CMatrix basis(static_cast<Eigen::Index>(nb) * n, static_cast<Eigen::Index>(nb) * n);
  for (int m = 0; m < nb; ++m) {
    for (int p = 0; p < n; ++p) {
      basis.col(m * n + p) =
          embed(project_A(field, m, p), project_E(field.lattice(), field.grid(), p)).entries;
    }
  }
  return basis;
}

// Coefficient of |X_{i,R_j}> in the expansion of |psi_{n,k_p}>.
inline cplx wannier_coeff(const BlochField& field, int band, int kindex, int orbital, int site) {
  detail::check_band(field, band);
  detail::check_band(field, orbital);
  detail::check_k(field.size(), kindex);
  if (site < 0 || site >= field.lattice().n_cells) throw InvalidArgument("site index out of range");
  return field.coeffs(kindex)(orbital, band) *
         std::polar(1.0, -field.grid()[kindex] * field.lattice().site_position(site));
}

// n_bands x N table of wannier_coeff for one Bloch state.
inline CMatrix wannier_coefficients(const BlochField& field, int band, int kindex) {
  CMatrix out(field.n_bands(), field.lattice().n_cells);
  for (int i = 0; i < field.n_bands(); ++i) {
    for (int j = 0; j < field.lattice().n_cells; ++j) out(i, j) = wannier_coeff(field, band, kindex, i, j);
  }
  return out;
}

// Inverts the expansion: a_i(k_p) = (1/N) sum_j c_{ij} e^{+i k_p R_j}.
inline CVector recover_band_coefficients(const CMatrix& wannier, const LatticeSpec& spec,
                                         const KGrid& grid, int kindex) {
  CVector a = CVector::Zero(wannier.rows());
  for (Eigen::Index i = 0; i < wannier.rows(); ++i) {
    for (int j = 0; j < spec.n_cells; ++j) {
      a[i] += wannier(i, j) * std::polar(1.0, grid[kindex] * spec.site_position(j));
    }
  }
  return a / static_cast<double>(spec.n_cells);
}

}  // namespace crm

#endif  // CRM_PROJECTION_HPP
