// Transport observables built on the reduced r-matrix: shift vector,
// Fermi-golden-rule rates, the shift-current spectrum, and adiabatic pumping
// checked against a plaquette Chern number.
//
// Units: e = hbar = 1. J_s is reported up to a global positive constant.

#ifndef CRM_TRANSPORT_HPP
#define CRM_TRANSPORT_HPP

#include "crm/csv.hpp"
#include "crm/gauge.hpp"
#include "crm/model.hpp"
#include "crm/rmatrix.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>

namespace crm {

struct OccupationSpec {
  RVector filling;                          // f_n, k-independent
  std::optional<std::vector<RVector>> per_k;  // overrides filling when present

  static OccupationSpec lowest_filled(int n_bands, int n_occupied = 1) {
    RVector f = RVector::Zero(n_bands);
    for (int n = 0; n < std::min(n_occupied, n_bands); ++n) f[n] = 1.0;
    return {f, std::nullopt};
  }

  void validate(int n_bands, int n_points) const {
    auto check = [&](const RVector& f) {
      if (f.size() != n_bands) throw InvalidArgument("occupation length must equal band count");
      for (Eigen::Index i = 0; i < f.size(); ++i) {
        if (!(f[i] >= 0.0 && f[i] <= 1.0)) throw InvalidArgument("occupations must lie in [0, 1]");
      }
    };
    if (per_k) {
      if (static_cast<int>(per_k->size()) != n_points) {
        throw InvalidArgument("per-k occupation table must have one row per grid point");
      }
      for (const auto& f : *per_k) check(f);
    } else {
      check(filling);
    }
  }

  double f(int n, int p) const {
    return per_k ? (*per_k)[static_cast<std::size_t>(p)][n] : filling[n];
  }
};

struct DriveSpec {
  std::vector<double> frequencies;
  double eta = 0.02;
  // E(omega) per frequency; empty means unit amplitude everywhere.
  std::vector<double> amplitudes;

  void validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidArgument("drive.eta must be positive");
    for (std::size_t i = 1; i < frequencies.size(); ++i) {
      if (!(frequencies[i] > frequencies[i - 1])) {
        throw InvalidArgument("drive.frequencies must be strictly increasing");
      }
    }
    if (!amplitudes.empty() && amplitudes.size() != frequencies.size()) {
      throw InvalidArgument("drive.amplitudes must match drive.frequencies in length");
    }
  }

  double amplitude(std::size_t i) const { return amplitudes.empty() ? 1.0 : amplitudes[i]; }
};

inline std::vector<double> linspace(double lo, double hi, int count) {
  std::vector<double> out(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
  }
  return out;
}

// Unit-area Lorentzian of half-width eta.
inline double lorentzian(double x, double eta) { return eta / (pi * (x * x + eta * eta)); }

namespace detail {
inline void check_pair(const BlochField& field, int m, int n) {
  if (m < 0 || n < 0 || m >= field.n_bands() || n >= field.n_bands()) {
    throw InvalidArgument("band index out of range");
  }
  if (m == n) throw InvalidArgument("band indices must differ");
}

// Phase-only link <n_{from}|n_{to}>/|.|.
inline cplx unit_link(const BlochField& field, int n, int from, int to) {
  const cplx o = field.column(from, n).dot(field.column(to, n));
  if (std::abs(o) < 1e-12) {
    throw ZeroOverlap("vanishing overlap between grid points " + std::to_string(from) + " and " +
                      std::to_string(to) + " for band " + std::to_string(n));
  }
  return o / std::abs(o);
}
}  // namespace detail

// r_{mn}(k_p) for m != n. Analytic fields use i C^dagger dC directly; otherwise
// neighbours of band n are parallel-transported to k_p before differencing,
// which keeps the result exactly covariant under per-band phase changes.
inline cplx offdiagonal_r(const BlochField& field, int m, int n, int p) {
  detail::check_pair(field, m, n);
  if (field.has_analytic_derivatives()) {
    return I * field.column(p, m).dot(field.derivative(p).col(n));
  }
  const KGrid& g = field.grid();
  if (g.size() < 3) return 0.0;
  const int up = g.next(p), dn = g.prev(p);
  const CVector fwd = field.column(up, n) * detail::unit_link(field, n, up, p);
  const CVector bwd = field.column(dn, n) * detail::unit_link(field, n, dn, p);
  return I * field.column(p, m).dot(fwd - bwd) / (2.0 * g.spacing());
}

inline constexpr double undefined_shift_threshold = 1e-10;

// R_{mn}(k_p) = A_mm - A_nn - d_k arg r_mn from the closed product Z over
// k_{p-1}, k_{p+1}: R = Im Z / (|Z| 2 dk), the sine of the product phase. It
// matches arg Z / (2 dk) to O(dk^2) and gives 0 where r_mn changes sign.
// R-bar cancels in the diagonal difference.
inline double shift_vector(const BlochField& field, int m, int n, int p) {
  detail::check_pair(field, m, n);
  const KGrid& g = field.grid();
  if (g.size() < 3) throw InvalidArgument("shift vector needs at least 3 grid points");
  const int up = g.next(p), dn = g.prev(p);
  const cplx r0 = offdiagonal_r(field, m, n, p);
  const cplx rp = offdiagonal_r(field, m, n, up);
  const cplx rm = offdiagonal_r(field, m, n, dn);
  for (auto [r, q] : {std::pair{r0, p}, std::pair{rp, up}, std::pair{rm, dn}}) {
    if (std::abs(r) < undefined_shift_threshold) {
      throw UndefinedShift("|r_" + std::to_string(m) + std::to_string(n) + "| below " +
                           csv::num(undefined_shift_threshold) + " at grid point " +
                           std::to_string(q) + " (k=" + csv::num(g[q]) + ")");
    }
  }
  const cplx om = field.column(dn, m).dot(field.column(up, m));
  const cplx on = field.column(dn, n).dot(field.column(up, n));
  if (std::abs(om) < 1e-12 || std::abs(on) < 1e-12) {
    throw ZeroOverlap("vanishing overlap across grid point " + std::to_string(p));
  }
  const cplx z = std::conj(om) * on * std::conj(rp) * rm;
  return z.imag() / std::abs(z) / (2.0 * g.spacing());
}

inline double occupation_difference(const OccupationSpec& occ, int m, int n, int p) {
  return occ.f(n, p) - occ.f(m, p);
}

// gamma_{mn}(k_p) = f_mn |r_mn|^2 delta_eta(omega_mn - omega) E(omega) E(-omega).
inline double hopping_rate(const BlochField& field, const OccupationSpec& occ, double eta,
                           double amplitude, int m, int n, int p, double omega) {
  detail::check_pair(field, m, n);
  if (!field.has_energies()) throw InvalidArgument("hopping rate needs band energies");
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
  const double fmn = occupation_difference(occ, m, n, p);
  if (fmn == 0.0) return 0.0;
  const double wmn = field.energies(p)[m] - field.energies(p)[n];
  return fmn * std::norm(offdiagonal_r(field, m, n, p)) * lorentzian(wmn - omega, eta) *
         amplitude * amplitude;
}

struct Spectrum {
  std::vector<double> omega;
  std::vector<double> current;
  double skipped_fraction = 0.0;
  std::size_t skipped = 0;
};

namespace detail {
struct ShiftTerm {
  double weight;  // f_mn R_mn |r_mn|^2 dk
  double omega_mn;
};

inline std::vector<ShiftTerm> shift_terms(const BlochField& field, const OccupationSpec& occ,
                                          std::size_t& skipped, std::size_t& total) {
  const int nb = field.n_bands();
  const int np = field.size();
  const double dk = field.grid().spacing();
  std::vector<std::vector<ShiftTerm>> per_p(static_cast<std::size_t>(np));
  std::vector<std::size_t> skips(static_cast<std::size_t>(np), 0);
  parallel_for(per_p.size(), [&](std::size_t ps) {
    const int p = static_cast<int>(ps);
    for (int m = 0; m < nb; ++m) {
      for (int n = 0; n < m; ++n) {
        const double fmn = occupation_difference(occ, m, n, p);
        if (fmn == 0.0) continue;
        try {
          const double r = shift_vector(field, m, n, p);
          per_p[ps].push_back({fmn * r * std::norm(offdiagonal_r(field, m, n, p)) * dk,
                               field.energies(p)[m] - field.energies(p)[n]});
        } catch (const UndefinedShift&) {
          ++skips[ps];
        }
      }
    }
  });
  std::vector<ShiftTerm> out;
  skipped = 0;
  for (std::size_t p = 0; p < per_p.size(); ++p) {
    out.insert(out.end(), per_p[p].begin(), per_p[p].end());
    skipped += skips[p];
  }
  total = static_cast<std::size_t>(np) * static_cast<std::size_t>(nb) * (nb - 1) / 2;
  return out;
}
}  // namespace detail

// J_s(omega) = sum_{m>n} sum_p f_mn R_mn |r_mn|^2 delta_eta(omega_mn - omega) E^2 dk.
// Points where the shift vector is undefined are skipped and counted.
inline Spectrum shift_current_spectrum(const BlochField& field, const OccupationSpec& occ,
                                       const DriveSpec& drive) {
  if (!field.has_energies()) throw InvalidArgument("shift current needs band energies");
  drive.validate();
  occ.validate(field.n_bands(), field.size());
  std::size_t skipped = 0, total = 0;
  const auto terms = detail::shift_terms(field, occ, skipped, total);
  Spectrum s;
  s.omega = drive.frequencies;
  s.current.assign(drive.frequencies.size(), 0.0);
  s.skipped = skipped;
  s.skipped_fraction = total ? static_cast<double>(skipped) / static_cast<double>(total) : 0.0;
  parallel_for(s.omega.size(), [&](std::size_t i) {
    const double e2 = drive.amplitude(i) * drive.amplitude(i);
    double sum = 0.0;
    for (const auto& t : terms) sum += t.weight * lorentzian(t.omega_mn - s.omega[i], drive.eta);
    s.current[i] = sum * e2;
  });
  return s;
}

// Frequency integral of one ordered band pair's contribution (unit drive).
inline double integrated_shift_current(const BlochField& field, const OccupationSpec& occ, int m,
                                       int n) {
  detail::check_pair(field, m, n);
  const double dk = field.grid().spacing();
  double sum = 0.0;
  for (int p = 0; p < field.size(); ++p) {
    const double fmn = occupation_difference(occ, m, n, p);
    if (fmn == 0.0) continue;
    sum += fmn * shift_vector(field, m, n, p) * std::norm(offdiagonal_r(field, m, n, p)) * dk;
  }
  return sum;
}

inline void write_csv(std::ostream& os, const Spectrum& s) {
  csv::Writer w(os, {"omega", "J_s", "skipped_fraction"});
  for (std::size_t i = 0; i < s.omega.size(); ++i) w.values(s.omega[i], s.current[i], s.skipped_fraction);
}

// ---------------------------------------------------------------------------
// Adiabatic pumping on a (k, lambda) torus, lambda in [0, 1).

using PumpHamiltonian = std::function<CMatrix(double k, double lambda)>;

struct PumpFamily {
  std::string preset;
  LatticeSpec lattice;
  std::vector<double> lambdas;
  std::vector<BlochField> slices;

  int n_lambda() const { return static_cast<int>(slices.size()); }
};

inline PumpFamily build_pump_family(const PumpHamiltonian& h, const LatticeSpec& lattice,
                                    int n_lambda, double gap_tol, std::string preset = "custom") {
  if (n_lambda < 3) throw InvalidArgument("pump needs at least 3 lambda slices");
  PumpFamily fam;
  fam.preset = std::move(preset);
  fam.lattice = lattice;
  fam.lambdas.resize(static_cast<std::size_t>(n_lambda));
  std::vector<std::optional<BlochField>> slices(static_cast<std::size_t>(n_lambda));
  parallel_for(slices.size(), [&](std::size_t j) {
    const double lam = static_cast<double>(j) / n_lambda;
    fam.lambdas[j] = lam;
    try {
      slices[j].emplace(eigenfield_from_hamiltonian([&](double k) { return h(k, lam); }, lattice,
                                                    gap_tol));
    } catch (const DegenerateRibbon& e) {
      throw DegenerateRibbon(std::string(e.what()) + " at lambda=" + csv::num(lam), e.k(), e.gap());
    }
  });
  for (auto& s : slices) fam.slices.push_back(std::move(*s));
  return fam;
}

// h = sin k tx + sin(2 pi l) ty + (mu + cos k + cos 2 pi l) tz.
inline PumpHamiltonian qwz_pump(double mu, double a = 1.0) {
  return [=](double k, double l) {
    const double x = std::sin(k * a);
    const double y = std::sin(two_pi * l);
    const double z = mu + std::cos(k * a) + std::cos(two_pi * l);
    CMatrix m(2, 2);
    m << z, cplx(x, -y), cplx(x, y), -z;
    return m;
  };
}

// Smooth random d(k, l).sigma with first-harmonic terms in k and 2 pi l. The
// draw is repeated from the same engine until the gap on the sampled torus
// exceeds min_gap.
inline PumpHamiltonian random_pump_hamiltonian(std::uint64_t seed, int n_k, int n_lambda,
                                               double min_gap = 0.2, double a = 1.0) {
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::array<std::array<double, 9>, 3> c{};
    for (auto& comp : c) {
      for (auto& v : comp) v = detail::symmetric_unit(rng);
    }
    auto d = [c, a](double k, double l) {
      const double ck = std::cos(k * a), sk = std::sin(k * a);
      const double cl = std::cos(two_pi * l), sl = std::sin(two_pi * l);
      const std::array<double, 9> basis{1.0, ck, sk, cl, sl, ck * cl, ck * sl, sk * cl, sk * sl};
      std::array<double, 3> out{};
      for (int i = 0; i < 3; ++i) {
        for (int b = 0; b < 9; ++b) out[static_cast<std::size_t>(i)] += c[static_cast<std::size_t>(i)][static_cast<std::size_t>(b)] * basis[static_cast<std::size_t>(b)];
      }
      return out;
    };
    double gap = std::numeric_limits<double>::infinity();
    const double dk = two_pi / (n_k * a);
    for (int i = 0; i < n_k; ++i) {
      for (int j = 0; j < n_lambda; ++j) {
        const auto v = d(i * dk, static_cast<double>(j) / n_lambda);
        gap = std::min(gap, 2.0 * std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]));
      }
    }
    if (gap < min_gap) continue;
    return [d](double k, double l) {
      const auto v = d(k, l);
      CMatrix m(2, 2);
      m << v[2], cplx(v[0], -v[1]), cplx(v[0], v[1]), -v[2];
      return m;
    };
  }
  throw InvalidArgument("no gapped random pump family found for seed " + std::to_string(seed));
}

struct PumpResult {
  std::vector<double> lambdas;     // n_lambda + 1 points, closing at 1
  std::vector<double> polarization;  // tracked P(lambda)
  std::vector<double> charge;        // -(P(lambda) - P(0))
  double delta_q = 0.0;
  double max_jump = 0.0;             // largest |Delta theta| between slices
};

inline constexpr double branch_jump_limit = 0.9 * pi;

// P(lambda) = theta(lambda) / 2 pi + R-bar / a with theta the discrete Berry
// phase, followed continuously in lambda; Delta Q = -(P(1) - P(0)).
inline PumpResult pumped_charge(const PumpFamily& fam, int band) {
  const int nl = fam.n_lambda();
  if (nl < 3) throw InvalidArgument("pump needs at least 3 lambda slices");
  std::vector<double> theta(static_cast<std::size_t>(nl));
  parallel_for(theta.size(), [&](std::size_t j) {
    theta[j] = berry_phase(fam.slices[j], band);
  });
  const double offset = fam.lattice.mean_position() / fam.lattice.lattice_constant;
  PumpResult r;
  double tracked = theta[0];
  r.lambdas.push_back(0.0);
  r.polarization.push_back(tracked / two_pi + offset);
  for (int j = 1; j <= nl; ++j) {
    const double next = theta[static_cast<std::size_t>(j % nl)];
    const double jump = wrap_angle(next - tracked);
    r.max_jump = std::max(r.max_jump, std::abs(jump));
    if (std::abs(jump) >= branch_jump_limit) {
      throw UnderResolved("Berry phase jumps by " + csv::num(jump) + " between lambda=" +
                          csv::num(static_cast<double>(j - 1) / nl) + " and " +
                          csv::num(static_cast<double>(j) / nl) + "; refine the lambda grid");
    }
    tracked += jump;
    r.lambdas.push_back(static_cast<double>(j) / nl);
    r.polarization.push_back(tracked / two_pi + offset);
  }
  for (double p : r.polarization) r.charge.push_back(-(p - r.polarization.front()));
  r.delta_q = r.charge.back();
  return r;
}

struct ChernResult {
  int chern = 0;
  double value = 0.0;
  double residue = 0.0;
};

inline constexpr double chern_residue_limit = 0.05;

// Fukui-Hatsugai lattice field strength summed over the (k, lambda) torus.
inline ChernResult chern_oracle(const PumpFamily& fam, int band) {
  const int nl = fam.n_lambda();
  if (nl < 2) throw InvalidArgument("Chern oracle needs at least 2 lambda slices");
  const int nk = fam.slices.front().size();
  auto link = [&](int i0, int j0, int i1, int j1) {
    const cplx o = fam.slices[static_cast<std::size_t>(j0)].column(i0, band).dot(
        fam.slices[static_cast<std::size_t>(j1)].column(i1, band));
    if (std::abs(o) < 1e-12) {
      throw ZeroOverlap("vanishing plaquette link at k index " + std::to_string(i0) +
                        ", lambda index " + std::to_string(j0));
    }
    return o / std::abs(o);
  };
  std::vector<double> rows(static_cast<std::size_t>(nl), 0.0);
  parallel_for(rows.size(), [&](std::size_t js) {
    const int j = static_cast<int>(js);
    const int j1 = (j + 1) % nl;
    double sum = 0.0;
    for (int i = 0; i < nk; ++i) {
      const int i1 = (i + 1) % nk;
      const cplx w = link(i, j, i1, j) * link(i1, j, i1, j1) * std::conj(link(i, j1, i1, j1)) *
                     std::conj(link(i, j, i, j1));
      sum += std::arg(w);
    }
    rows[js] = sum;
  });
  double total = 0.0;
  for (double v : rows) total += v;
  ChernResult c;
  c.value = total / two_pi;
  c.chern = static_cast<int>(std::lround(c.value));
  c.residue = std::abs(c.value - c.chern);
  if (c.residue >= chern_residue_limit) {
    throw UnderResolved("plaquette sum " + csv::num(c.value) + " is not near an integer");
  }
  return c;
}

inline void write_csv(std::ostream& os, const PumpResult& r) {
  csv::Writer w(os, {"lambda", "P", "Q_cumulative"});
  for (std::size_t i = 0; i < r.lambdas.size(); ++i) w.values(r.lambdas[i], r.polarization[i], r.charge[i]);
}

inline void write_oracle_csv(std::ostream& os, const std::string& preset, int band, const ChernResult& c) {
  csv::Writer w(os, {"preset", "band", "chern", "residue"});
  w.values(preset, band, c.chern, c.residue);
}

}  // namespace crm

#endif  // CRM_TRANSPORT_HPP
