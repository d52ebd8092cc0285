// Ribbon (gauge) transformations, the discrete Berry phase, observable
// functionals and derivative identities.
//
// A gauge field U(k) acts on a coefficient field as C'(k) = C(k) U(k)^dagger,
// so that a differential-operator matrix such as the Berry connection
// transforms as M' = U M U^dagger + U i d_k(U^dagger), while a matrix-operator
// field transforms by similarity only.

#ifndef CRM_GAUGE_HPP
#define CRM_GAUGE_HPP

#include "crm/csv.hpp"
#include "crm/model.hpp"
#include "crm/rmatrix.hpp"

#include <cstdint>
#include <ostream>
#include <random>

namespace crm {

// How U i d_k(U^dagger) is evaluated on the grid.
enum class GaugeDerivative {
  Exact,              // closed-form derivative of exp(-iH(k)) from the generator series
  CentralDifference,  // U(k_p) i (U^dagger(k_{p+1}) - U^dagger(k_{p-1})) / (2 dk)
  Auto,               // Exact for diagonal generators, CentralDifference otherwise
};

inline const char* to_string(GaugeDerivative d) {
  switch (d) {
    case GaugeDerivative::Exact: return "exact";
    case GaugeDerivative::CentralDifference: return "central-difference";
    default: return "auto";
  }
}

namespace detail {

// exp(i s H) for Hermitian H and its eigen-decomposition.
struct HermitianExp {
  RVector values;
  CMatrix vectors;

  explicit HermitianExp(const CMatrix& h) {
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(h);
    values = solver.eigenvalues();
    vectors = solver.eigenvectors();
  }

  CMatrix exp(double sign) const {
    CVector d(values.size());
    for (Eigen::Index i = 0; i < values.size(); ++i) d[i] = std::polar(1.0, sign * values[i]);
    return vectors * d.asDiagonal() * vectors.adjoint();
  }

  // d/dk exp(i sign H) given dH, by divided differences in the eigenbasis.
  CMatrix exp_derivative(double sign, const CMatrix& dh) const {
    const Eigen::Index n = values.size();
    CMatrix b = vectors.adjoint() * dh * vectors;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double li = values[i], lj = values[j];
        cplx f;
        if (std::abs(li - lj) < 1e-8) {
          f = I * sign * std::polar(1.0, sign * 0.5 * (li + lj));
        } else {
          f = (std::polar(1.0, sign * li) - std::polar(1.0, sign * lj)) / (li - lj);
        }
        b(i, j) *= f;
      }
    }
    return vectors * b * vectors.adjoint();
  }
};

// Portable uniform draw in [-1, 1) from the raw 64-bit engine output.
inline double symmetric_unit(std::mt19937_64& rng) {
  return 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0;
}

}  // namespace detail

// Mode s of the generator has entries drawn from amplitude / (1 + s) times
// the unit square.
struct GaugeOptions {
  int modes = 2;
  bool diagonal_only = false;
  double amplitude = 0.5;
};

// U(k) = exp(i H(k)), H(k) = sum_{|s| <= modes} G_s e^{i s k a} with G_{-s} = G_s^dagger.
class GaugeField {
 public:
  GaugeField(LatticeSpec lattice, std::vector<CMatrix> generator_modes)
      : lattice_(std::move(lattice)), grid_(build_kgrid(lattice_)), modes_(std::move(generator_modes)) {
    if (modes_.empty()) throw InvalidArgument("gauge generator needs at least the s = 0 mode");
    const Eigen::Index nb = lattice_.n_bands;
    for (const auto& g : modes_) {
      if (g.rows() != nb || g.cols() != nb) throw InvalidArgument("gauge generator shape mismatch");
      if (!g.allFinite()) throw InvalidArgument("gauge generator has non-finite entries");
    }
    if (hermiticity_defect(modes_[0]) > 1e-14) {
      throw InvalidArgument("gauge generator mode 0 must be Hermitian");
    }
    abelian_ = true;
    for (const auto& g : modes_) {
      CMatrix off = g;
      off.diagonal().setZero();
      if (max_abs(off) != 0.0) abelian_ = false;
    }
    const auto n = static_cast<std::size_t>(grid_.size());
    h_.resize(n);
    dh_.resize(n);
    u_.resize(n);
    du_dag_.resize(n);
    parallel_for(n, [&](std::size_t p) {
      const double k = grid_[static_cast<int>(p)];
      h_[p] = generator(k);
      dh_[p] = generator_derivative(k);
      const detail::HermitianExp e(h_[p]);
      u_[p] = e.exp(+1.0);
      du_dag_[p] = e.exp_derivative(-1.0, dh_[p]);
    });
  }

  const LatticeSpec& lattice() const { return lattice_; }
  const KGrid& grid() const { return grid_; }
  int n_bands() const { return lattice_.n_bands; }
  int size() const { return grid_.size(); }
  int modes() const { return static_cast<int>(modes_.size()) - 1; }
  bool abelian() const { return abelian_; }
  const std::vector<CMatrix>& generator_modes() const { return modes_; }

  const CMatrix& U(int p) const { return u_[static_cast<std::size_t>(p)]; }
  const CMatrix& H(int p) const { return h_[static_cast<std::size_t>(p)]; }
  const CMatrix& dH(int p) const { return dh_[static_cast<std::size_t>(p)]; }
  // Exact d/dk U^dagger at k_p.
  const CMatrix& dU_dagger(int p) const { return du_dag_[static_cast<std::size_t>(p)]; }

  CMatrix generator(double k) const {
    const double a = lattice_.lattice_constant;
    CMatrix h = modes_[0];
    for (std::size_t s = 1; s < modes_.size(); ++s) {
      const CMatrix term = modes_[s] * std::polar(1.0, static_cast<double>(s) * k * a);
      h += term + term.adjoint();
    }
    return h;
  }

  CMatrix generator_derivative(double k) const {
    const double a = lattice_.lattice_constant;
    CMatrix d = CMatrix::Zero(n_bands(), n_bands());
    for (std::size_t s = 1; s < modes_.size(); ++s) {
      const CMatrix term = modes_[s] * (I * static_cast<double>(s) * a) *
                           std::polar(1.0, static_cast<double>(s) * k * a);
      d += term + term.adjoint();
    }
    return d;
  }

  // U(k_p) i d_k(U^dagger)(k_p).
  CMatrix inhomogeneous(int p, GaugeDerivative rule = GaugeDerivative::Auto) const {
    if (rule == GaugeDerivative::Auto) {
      rule = abelian_ ? GaugeDerivative::Exact : GaugeDerivative::CentralDifference;
    }
    if (rule == GaugeDerivative::Exact || size() < 3) return I * U(p) * dU_dagger(p);
    const CMatrix diff = U(grid_.next(p)).adjoint() - U(grid_.prev(p)).adjoint();
    return I * U(p) * diff / (2.0 * grid_.spacing());
  }

  double max_unitarity_defect() const {
    double d = 0.0;
    for (const auto& u : u_) d = std::max(d, unitarity_defect(u));
    return d;
  }

 private:
  LatticeSpec lattice_;
  KGrid grid_;
  std::vector<CMatrix> modes_;
  bool abelian_ = true;
  std::vector<CMatrix> h_, dh_, u_, du_dag_;
};

inline GaugeField random_gauge_field(const LatticeSpec& lattice, std::uint64_t seed,
                                     const GaugeOptions& opt = {}) {
  lattice.validate();
  if (opt.modes < 0) throw InvalidArgument("gauge modes must be >= 0");
  if (!std::isfinite(opt.amplitude)) throw InvalidArgument("gauge amplitude must be finite");
  const Eigen::Index nb = lattice.n_bands;
  std::mt19937_64 rng(seed);
  std::vector<CMatrix> modes;
  for (int s = 0; s <= opt.modes; ++s) {
    const double scale = opt.amplitude / (1.0 + s);
    CMatrix g = CMatrix::Zero(nb, nb);
    for (Eigen::Index i = 0; i < nb; ++i) {
      for (Eigen::Index j = 0; j < nb; ++j) {
        if (opt.diagonal_only && i != j) continue;
        const double re = detail::symmetric_unit(rng);
        const double im = detail::symmetric_unit(rng);
        g(i, j) = scale * cplx(re, im);
      }
    }
    if (s == 0) g = 0.5 * (g + g.adjoint()).eval();
    modes.push_back(std::move(g));
  }
  return GaugeField(lattice, std::move(modes));
}

// Scalar-per-band gauge exp(i xi_n(k)) with xi_n given by cosine/sine series.
inline GaugeField diagonal_gauge(const LatticeSpec& lattice, const std::vector<RVector>& cos_modes,
                                 const std::vector<RVector>& sin_modes) {
  const Eigen::Index nb = lattice.n_bands;
  const std::size_t m = std::max(cos_modes.size(), sin_modes.size());
  std::vector<CMatrix> modes(std::max<std::size_t>(m, 1), CMatrix::Zero(nb, nb));
  // xi = c_0 + sum_s c_s cos(ska) + d_s sin(ska) = sum G_s e^{iska} + h.c.
  for (std::size_t s = 0; s < m; ++s) {
    const RVector c = s < cos_modes.size() ? cos_modes[s] : RVector::Zero(nb);
    const RVector d = s < sin_modes.size() ? sin_modes[s] : RVector::Zero(nb);
    if (c.size() != nb || d.size() != nb) throw InvalidArgument("gauge mode length mismatch");
    for (Eigen::Index n = 0; n < nb; ++n) {
      modes[s](n, n) = s == 0 ? cplx(c[n], 0.0) : 0.5 * cplx(c[n], -d[n]);
    }
  }
  return GaugeField(lattice, std::move(modes));
}

// C'(k) = C(k) U(k)^dagger. Analytic derivatives carry over exactly.
inline BlochField apply_gauge(const BlochField& field, const GaugeField& u) {
  if (field.n_bands() != u.n_bands() || field.size() != u.size()) {
    throw InvalidArgument("gauge field shape does not match the Bloch field");
  }
  const auto n = static_cast<std::size_t>(field.size());
  std::vector<CMatrix> coeffs(n);
  std::vector<CMatrix> derivs(field.has_analytic_derivatives() ? n : 0);
  parallel_for(n, [&](std::size_t p) {
    const int q = static_cast<int>(p);
    coeffs[p] = field.coeffs(q) * u.U(q).adjoint();
    if (field.has_analytic_derivatives()) {
      derivs[p] = field.derivative(q) * u.U(q).adjoint() + field.coeffs(q) * u.dU_dagger(q);
    }
  });
  std::optional<std::vector<CMatrix>> d;
  if (field.has_analytic_derivatives()) d = std::move(derivs);
  return BlochField(field.lattice(), std::move(coeffs), std::move(d), field.energy_table());
}

enum class OperatorKind { Matrix, Differential };

inline const char* to_string(OperatorKind k) {
  return k == OperatorKind::Matrix ? "matrix" : "differential";
}

struct MatrixField {
  std::vector<CMatrix> mats;
  OperatorKind kind = OperatorKind::Matrix;

  int size() const { return static_cast<int>(mats.size()); }
  const CMatrix& operator[](int p) const { return mats[static_cast<std::size_t>(p)]; }
};

inline MatrixField as_matrix_field(const ConnectionField& c, OperatorKind kind = OperatorKind::Differential) {
  return {c.mats, kind};
}

namespace detail {
inline void check_shapes(const MatrixField& m, const GaugeField& u) {
  if (m.size() != u.size()) throw InvalidArgument("matrix field and gauge field grids differ");
  for (const auto& x : m.mats) {
    if (x.rows() != u.n_bands() || x.cols() != u.n_bands()) {
      throw InvalidArgument("matrix field and gauge field band counts differ");
    }
  }
}
}  // namespace detail

inline MatrixField transform_matrix_op(const MatrixField& m, const GaugeField& u) {
  detail::check_shapes(m, u);
  MatrixField out{std::vector<CMatrix>(m.mats.size()), m.kind};
  parallel_for(m.mats.size(), [&](std::size_t p) {
    const int q = static_cast<int>(p);
    out.mats[p] = u.U(q) * m[q] * u.U(q).adjoint();
  });
  return out;
}

inline MatrixField transform_diff_op(const MatrixField& m, const GaugeField& u,
                                     GaugeDerivative rule = GaugeDerivative::Auto) {
  detail::check_shapes(m, u);
  MatrixField out{std::vector<CMatrix>(m.mats.size()), m.kind};
  parallel_for(m.mats.size(), [&](std::size_t p) {
    const int q = static_cast<int>(p);
    out.mats[p] = u.U(q) * m[q] * u.U(q).adjoint() + u.inhomogeneous(q, rule);
  });
  return out;
}

// Applies the rule selected by the field's operator kind.
inline MatrixField transform(const MatrixField& m, const GaugeField& u,
                             GaugeDerivative rule = GaugeDerivative::Auto) {
  return m.kind == OperatorKind::Matrix ? transform_matrix_op(m, u) : transform_diff_op(m, u, rule);
}

// theta = -arg prod_p <u_{n,k_p} | u_{n,k_{p+1}}>, wrapping p = N-1 to 0.
inline double berry_phase(const BlochField& field, int band) {
  if (band < 0 || band >= field.n_bands()) throw InvalidArgument("band index out of range");
  const int n = field.size();
  if (n < 3) throw InvalidArgument("berry phase needs at least 3 grid points");
  cplx prod = 1.0;
  for (int p = 0; p < n; ++p) {
    const int q = field.grid().next(p);
    const cplx o = field.column(p, band).dot(field.column(q, band));
    if (std::abs(o) < 1e-12) {
      throw ZeroOverlap("vanishing overlap between grid points " + std::to_string(p) + " and " +
                        std::to_string(q) + " for band " + std::to_string(band));
    }
    prod *= o / std::abs(o);
  }
  return wrap_angle(-std::arg(prod));
}

inline cplx functional_F(const MatrixField& m, int band, int p) {
  if (p < 0 || p >= m.size()) throw InvalidArgument("k index out of range");
  if (band < 0 || band >= m[p].rows()) throw InvalidArgument("band index out of range");
  return m[p](band, band);
}

// Riemann sum of M_nn over the closed k-loop.
inline double functional_loop(const MatrixField& m, int band, double dk) {
  double sum = 0.0;
  for (int p = 0; p < m.size(); ++p) sum += functional_F(m, band, p).real();
  return sum * dk;
}

inline double functional_trace_loop(const MatrixField& m, double dk) {
  double sum = 0.0;
  for (const auto& x : m.mats) sum += x.trace().real();
  return sum * dk;
}

struct FunctionalReport {
  std::string name;
  int band = -1;
  std::uint64_t seed = 0;
  cplx before;
  cplx after;
  double tolerance = 0.0;
  double delta() const { return std::abs(after - before); }
  bool invariant() const { return delta() <= tolerance; }
};

// Phase-like values are compared modulo 2 pi.
inline FunctionalReport make_report(std::string name, int band, std::uint64_t seed, cplx before,
                                    cplx after, double tolerance, bool modulo_two_pi = false) {
  FunctionalReport r{std::move(name), band, seed, before, after, tolerance};
  if (modulo_two_pi) {
    r.after = before + wrap_angle(after.real() - before.real()) + I * (after.imag() - before.imag());
  }
  return r;
}

inline void write_csv(std::ostream& os, const std::vector<FunctionalReport>& reports) {
  csv::Writer w(os, {"name", "band", "seed", "before_re", "before_im", "after_re", "after_im",
                     "delta", "invariant"});
  for (const auto& r : reports) {
    w.values(r.name, r.band, static_cast<std::size_t>(r.seed), r.before.real(), r.before.imag(),
             r.after.real(), r.after.imag(), r.delta(), r.invariant());
  }
}

// max |<d_k m|n> + <m|d_k n>| over the grid; vanishes for exact derivatives.
inline double sign_reversal_defect(const BlochField& field) {
  double d = 0.0;
  for (int p = 0; p < field.size(); ++p) {
    const CMatrix& c = field.coeffs(p);
    const CMatrix dc = field.derivative(p);
    d = std::max(d, max_abs(dc.adjoint() * c + c.adjoint() * dc));
  }
  return d;
}

// max |conj(<m|i d_k n>) - <i d_k n|m>| with both sides evaluated as written.
inline double conjugation_defect(const BlochField& field) {
  double d = 0.0;
  for (int p = 0; p < field.size(); ++p) {
    const CMatrix dc = I * field.derivative(p);
    for (int m = 0; m < field.n_bands(); ++m) {
      for (int n = 0; n < field.n_bands(); ++n) {
        const cplx lhs = std::conj(field.column(p, m).dot(dc.col(n)));
        const cplx rhs = dc.col(n).dot(field.column(p, m));
        d = std::max(d, std::abs(lhs - rhs));
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Local versus loop-integrated form of the lambda-derivative of <r>.

using TwoParameterFamily = std::function<CVector(double k, double lambda)>;

struct CurvatureReport {
  // max |d_k <phi|d_lambda phi>| over the sampled (k, lambda) points.
  double max_abs_g = 0.0;
  // max over points of |d_l<phi|i d_k phi> - 2 Re<d_l phi|i d_k phi>|.
  double max_pointwise_mismatch = 0.0;
  // max over lambda slices of |sum_p (mismatch) dk|.
  double loop_mismatch = 0.0;
  // max over lambda slices of |sum_p 2 Re<d_l phi|i d_k phi> dk|.
  double max_loop_value = 0.0;
};

namespace detail {
// Fourth-order central stencil.
template <typename F>
auto stencil(const F& f, double x, double h) {
  using R = std::decay_t<decltype(f(x))>;
  return R((f(x - 2 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2 * h)) / (12.0 * h));
}
}  // namespace detail

inline CurvatureReport local_curvature_failure(const TwoParameterFamily& family,
                                               const LatticeSpec& lattice, int n_lambda,
                                               double step = 1e-3) {
  if (n_lambda < 1) throw InvalidArgument("n_lambda must be >= 1");
  const KGrid grid = build_kgrid(lattice);
  const int nk = grid.size();
  const double dk = grid.spacing();
  struct Slice {
    double g = 0.0, mismatch = 0.0, loop = 0.0, value = 0.0;
  };
  std::vector<Slice> slices(static_cast<std::size_t>(n_lambda));
  parallel_for(slices.size(), [&](std::size_t li) {
    const double lam = static_cast<double>(li) / n_lambda;
    Slice s;
    cplx loop_diff = 0.0;
    double loop_value = 0.0;
    for (int p = 0; p < nk; ++p) {
      const double k = grid[p];
      const CVector phi = family(k, lam);
      if (phi.size() == 0 || std::abs(phi.norm() - 1.0) > 1e-10) {
        throw InvalidArgument("family vector is not normalized at k=" + csv::num(k) +
                              ", lambda=" + csv::num(lam));
      }
      auto in_k = [&](double l) { return [&, l](double kk) -> CVector { return family(kk, l); }; };
      auto dk_at = [&](double l) { return CVector(detail::stencil(in_k(l), k, step)); };
      const CVector d_k = dk_at(lam);
      const CVector d_l = detail::stencil([&](double l) -> CVector { return family(k, l); }, lam, step);
      // d_lambda <phi|i d_k phi> by differentiating the k-route expression in lambda.
      auto a_k = [&](double l) -> cplx { return family(k, l).dot(I * dk_at(l)); };
      const cplx route2 = detail::stencil(a_k, lam, step);
      const cplx route1 = 2.0 * d_l.dot(I * d_k).real();
      // g = d_k <phi|d_l phi> = <d_k phi|d_l phi> + <phi|d_k d_l phi>.
      auto b = [&](double kk) -> cplx {
        return family(kk, lam).dot(detail::stencil([&](double l) -> CVector { return family(kk, l); }, lam, step));
      };
      const cplx g = detail::stencil(b, k, step);
      s.g = std::max(s.g, std::abs(g));
      s.mismatch = std::max(s.mismatch, std::abs(route2 - route1));
      loop_diff += route2 - route1;
      loop_value += route1.real();
    }
    s.loop = std::abs(loop_diff) * dk;
    s.value = std::abs(loop_value) * dk;
    slices[li] = s;
  });
  CurvatureReport r;
  for (const auto& s : slices) {
    r.max_abs_g = std::max(r.max_abs_g, s.g);
    r.max_pointwise_mismatch = std::max(r.max_pointwise_mismatch, s.mismatch);
    r.loop_mismatch = std::max(r.loop_mismatch, s.loop);
    r.max_loop_value = std::max(r.max_loop_value, s.value);
  }
  return r;
}

// Lower-band column (cos(t/2), sin(t/2) e^{i phi}) of a two-band (k, lambda) family.
inline TwoParameterFamily two_band_family(std::function<double(double, double)> theta,
                                          std::function<double(double, double)> phi) {
  return [theta = std::move(theta), phi = std::move(phi)](double k, double l) {
    CVector v(2);
    const double t = theta(k, l);
    v[0] = std::cos(0.5 * t);
    v[1] = std::sin(0.5 * t) * std::polar(1.0, phi(k, l));
    return v;
  };
}

}  // namespace crm

#endif  // CRM_GAUGE_HPP
