// Finite-window witnesses of the divergent r-matrix diagonal, the translation
// contradiction, and the incompleteness of the half-cell sine basis.
//
// This is the only part of the library that samples real-space functions.
// A SampledCellFunction holds psi on M + 1 equispaced points of [0, a] and
// integrates with the composite trapezoid rule.

#ifndef CRM_DIVERGENCE_HPP
#define CRM_DIVERGENCE_HPP

#include "crm/core.hpp"
#include "crm/csv.hpp"

#include <functional>
#include <ostream>

namespace crm {

class SampledCellFunction {
 public:
  static constexpr int min_intervals = 64;
  static constexpr int default_intervals = 2048;

  SampledCellFunction(double a, RVector samples) : a_(a), samples_(std::move(samples)) {
    if (!(a_ > 0.0) || !std::isfinite(a_)) throw InvalidArgument("cell length must be positive");
    if (samples_.size() < min_intervals + 1) {
      throw InvalidArgument("cell function needs at least " + std::to_string(min_intervals) +
                            " intervals");
    }
    if (!samples_.allFinite()) throw InvalidArgument("cell function has non-finite samples");
  }

  static SampledCellFunction from_function(const std::function<double(double)>& f, double a,
                                           int intervals = default_intervals) {
    if (intervals < min_intervals) {
      throw InvalidArgument("cell function needs at least " + std::to_string(min_intervals) +
                            " intervals");
    }
    RVector s(intervals + 1);
    for (int i = 0; i <= intervals; ++i) s[i] = f(a * i / intervals);
    return SampledCellFunction(a, std::move(s));
  }

  double cell_length() const { return a_; }
  int intervals() const { return static_cast<int>(samples_.size()) - 1; }
  double step() const { return a_ / intervals(); }
  double position(int i) const { return a_ * i / intervals(); }
  const RVector& samples() const { return samples_; }

  RVector weights() const {
    RVector w = RVector::Constant(samples_.size(), step());
    w[0] *= 0.5;
    w[w.size() - 1] *= 0.5;
    return w;
  }

  double integrate(const RVector& values) const { return weights().dot(values); }
  double norm_squared() const { return integrate(samples_.cwiseAbs2()); }
  double inner(const SampledCellFunction& other) const {
    return integrate(samples_.cwiseProduct(other.samples_));
  }

  // Integral of |psi|^2 (r - a/2): the offset of the density from the cell center.
  double centered_moment() const {
    RVector r(samples_.size());
    for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = position(static_cast<int>(i)) - 0.5 * a_;
    return integrate(samples_.cwiseAbs2().cwiseProduct(r));
  }

 private:
  double a_;
  RVector samples_;
};

inline SampledCellFunction uniform_cell(double a, int intervals = SampledCellFunction::default_intervals) {
  const double v = 1.0 / std::sqrt(a);
  return SampledCellFunction::from_function([v](double) { return v; }, a, intervals);
}

// psi_n(r) = 2/sqrt(a) sin(4 n pi r / a) on (0, a/2), exactly 0 on [a/2, a].
inline SampledCellFunction appendix_b_basis(int n, double a,
                                            int intervals = SampledCellFunction::default_intervals) {
  if (n < 1) throw InvalidArgument("basis index must be >= 1");
  const double amp = 2.0 / std::sqrt(a);
  return SampledCellFunction::from_function(
      [=](double r) { return r < 0.5 * a ? amp * std::sin(4.0 * n * pi * r / a) : 0.0; }, a,
      intervals);
}

// Normalized Gaussian bump; narrow widths approximate a point density.
inline SampledCellFunction delta_like_cell(double a, double center, double width,
                                           int intervals = SampledCellFunction::default_intervals) {
  if (!(width > 0.0)) throw InvalidArgument("width must be positive");
  auto f = SampledCellFunction::from_function(
      [=](double r) { return std::exp(-0.25 * (r - center) * (r - center) / (width * width)); }, a,
      intervals);
  return SampledCellFunction(a, f.samples() / std::sqrt(f.norm_squared()));
}

// 2/sqrt(a) sin(2 pi r / a) restricted to (a/2, a): unit norm, lives in the gap.
inline SampledCellFunction gap_supported_cell(double a,
                                              int intervals = SampledCellFunction::default_intervals) {
  const double amp = 2.0 / std::sqrt(a);
  return SampledCellFunction::from_function(
      [=](double r) { return r > 0.5 * a ? amp * std::sin(two_pi * r / a) : 0.0; }, a, intervals);
}

inline SampledCellFunction constant_cell(double a, double value = 1.0,
                                         int intervals = SampledCellFunction::default_intervals) {
  return SampledCellFunction::from_function([value](double) { return value; }, a, intervals);
}

// +1 on (0, a/4), -1 on (a/4, a/2), +1 on (a/2, a); interior jump points take
// the average of the adjacent values.
inline SampledCellFunction square_wave_cell(double a,
                                            int intervals = SampledCellFunction::default_intervals) {
  return SampledCellFunction::from_function(
      [=](double r) {
        const double q = 0.25 * a;
        const double h = 0.5 * a;
        if (r < q) return 1.0;
        if (r == q) return 0.0;
        if (r < h) return -1.0;
        if (r == h) return 0.0;
        return 1.0;
      },
      a, intervals);
}

enum class WindowCentering { FromOrigin, Centered };

inline const char* to_string(WindowCentering c) {
  return c == WindowCentering::FromOrigin ? "from-origin" : "centered";
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("fit needs >= 2 points");
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += e * e;
  }
  f.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : (ss_res == 0.0 ? 1.0 : 0.0);
  return f;
}

struct TruncationStudy {
  std::vector<int> windows;
  std::vector<double> values;
  LinearFit fit;
  WindowCentering centering = WindowCentering::FromOrigin;
};

namespace detail {
inline void require_normalized(const SampledCellFunction& f) {
  const double n = f.norm_squared();
  if (std::abs(n - 1.0) > 1e-8) {
    throw InvalidArgument("cell function is not normalized (norm^2 = " + csv::num(n) + ")");
  }
}

// Position of cell j's center for a window of w cells.
inline double cell_center(int j, int w, double a, WindowCentering c) {
  return c == WindowCentering::FromOrigin ? j * a : (j - 0.5 * (w - 1)) * a;
}
}  // namespace detail

// <r> over the first w cells of a Bloch state built from the cell function,
// normalized over those w cells: (1/w) sum_j int |psi|^2 (R_j + r - a/2) dr.
// The Bloch phase e^{ikR_j} drops out of |psi|^2, so k only labels the state.
inline double truncated_position(const SampledCellFunction& f, int w, WindowCentering c,
                                 int first_cell = 0) {
  const double a = f.cell_length();
  const double moment = f.centered_moment();
  double sum = 0.0;
  for (int j = first_cell; j < first_cell + w; ++j) {
    sum += detail::cell_center(j, w, a, c) + moment;
  }
  return sum / w;
}

inline TruncationStudy drm_truncated_diagonal(const SampledCellFunction& f, double k,
                                              const std::vector<int>& windows,
                                              WindowCentering c = WindowCentering::FromOrigin) {
  (void)k;
  detail::require_normalized(f);
  if (windows.empty()) throw InvalidArgument("windows must be non-empty");
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i] < 1) throw InvalidArgument("windows must be >= 1");
    if (i > 0 && windows[i] <= windows[i - 1]) {
      throw InvalidArgument("windows must be strictly increasing");
    }
  }
  TruncationStudy s;
  s.windows = windows;
  s.centering = c;
  s.values.resize(windows.size());
  parallel_for(windows.size(), [&](std::size_t i) { s.values[i] = truncated_position(f, windows[i], c); });
  if (windows.size() >= 2) {
    std::vector<double> x(windows.begin(), windows.end());
    s.fit = fit_line(x, s.values);
  }
  return s;
}

struct TranslationReport {
  double before = 0.0;
  double after = 0.0;
  // Shift implied by moving the state rigidly by -a.
  double predicted_shift = 0.0;
  // Shift implied by the formal identity <r> = <r> - a of the infinite integral.
  double formal_shift = 0.0;
  double boundary_term() const { return after - before; }
};

// Translating the state by a in the negative direction moves the occupied
// window one cell down: the top cell leaves and a new bottom cell enters.
inline TranslationReport translation_contradiction(const SampledCellFunction& f, double k, int w) {
  (void)k;
  detail::require_normalized(f);
  if (w < 1) throw InvalidArgument("window must be >= 1");
  TranslationReport t;
  t.before = truncated_position(f, w, WindowCentering::FromOrigin, 0);
  t.after = truncated_position(f, w, WindowCentering::FromOrigin, -1);
  t.predicted_shift = -f.cell_length();
  t.formal_shift = 0.0;
  return t;
}

// ||target - P target|| / ||target|| for P the projector on psi_1..psi_{n_max}.
inline double incompleteness_residual(const SampledCellFunction& target, int n_max) {
  if (n_max < 1) throw InvalidArgument("n_max must be >= 1");
  const double a = target.cell_length();
  const int m = target.intervals();
  const double norm2 = target.norm_squared();
  if (!(norm2 > 0.0)) throw InvalidArgument("target has zero norm");
  RVector projection = RVector::Zero(target.samples().size());
  for (int n = 1; n <= n_max; ++n) {
    const SampledCellFunction basis = appendix_b_basis(n, a, m);
    projection += target.inner(basis) * basis.samples();
  }
  const RVector diff = target.samples() - projection;
  return std::sqrt(target.integrate(diff.cwiseAbs2()) / norm2);
}

struct GramReport {
  CMatrix gram;
  double max_offdiagonal = 0.0;
  double max_diagonal_error = 0.0;
};

// Gram matrix of the Bloch-extended basis e^{i k_p R_j} psi_n(r - R_j) over N
// cells, integrated cell by cell on the extended chain. Expected N delta delta.
inline GramReport appendixB_orthogonality(int n_max, int n_cells, double a = 1.0,
                                          int intervals = SampledCellFunction::default_intervals) {
  if (n_max < 1 || n_cells < 1) throw InvalidArgument("n_max and N must be >= 1");
  std::vector<RVector> basis;
  for (int n = 1; n <= n_max; ++n) basis.push_back(appendix_b_basis(n, a, intervals).samples());
  const RVector w = uniform_cell(a, intervals).weights();
  const double dk = two_pi / (n_cells * a);
  const int dim = n_max * n_cells;
  GramReport g;
  g.gram = CMatrix::Zero(dim, dim);
  parallel_for(static_cast<std::size_t>(dim) * dim, [&](std::size_t idx) {
    const int row = static_cast<int>(idx / static_cast<std::size_t>(dim));
    const int col = static_cast<int>(idx % static_cast<std::size_t>(dim));
    const int m = row / n_cells, p = row % n_cells;
    const int n = col / n_cells, q = col % n_cells;
    cplx sum = 0.0;
    for (int j = 0; j < n_cells; ++j) {
      const double rj = j * a;
      const cplx phase = std::polar(1.0, (q - p) * dk * rj);
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        sum += w[i] * phase * basis[static_cast<std::size_t>(m)][i] *
               basis[static_cast<std::size_t>(n)][i];
      }
    }
    g.gram(row, col) = sum;
  });
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) {
      if (r == c) {
        g.max_diagonal_error = std::max(g.max_diagonal_error, std::abs(g.gram(r, c) - double(n_cells)));
      } else {
        g.max_offdiagonal = std::max(g.max_offdiagonal, std::abs(g.gram(r, c)));
      }
    }
  }
  return g;
}

inline void write_csv(std::ostream& os, const TruncationStudy& s) {
  csv::Writer w(os, {"W", "value"});
  for (std::size_t i = 0; i < s.windows.size(); ++i) w.values(s.windows[i], s.values[i]);
}

struct ResidualSweep {
  std::vector<int> n_max;
  std::vector<double> residual;
};

inline ResidualSweep residual_sweep(const SampledCellFunction& target, const std::vector<int>& n_max) {
  ResidualSweep s;
  s.n_max = n_max;
  s.residual.resize(n_max.size());
  parallel_for(n_max.size(), [&](std::size_t i) { s.residual[i] = incompleteness_residual(target, n_max[i]); });
  return s;
}

inline void write_csv(std::ostream& os, const ResidualSweep& s) {
  csv::Writer w(os, {"n_max", "residual"});
  for (std::size_t i = 0; i < s.n_max.size(); ++i) w.values(s.n_max[i], s.residual[i]);
}

}  // namespace crm

#endif  // CRM_DIVERGENCE_HPP
