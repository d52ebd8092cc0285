// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "crm/cli.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>

using namespace crm;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [violated]");
  }
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

MatrixField connection_of(const BlochField& f) { return as_matrix_field(berry_connection(f)); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void isomorphism(Verdict& v) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int n : {4, 8, 16}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const CMatrix b = embedded_basis(two_band_field(oracle::random_angles(seed), {n, 1.0, 2}));
      worst = std::max(worst, max_abs(b.adjoint() * b - CMatrix::Identity(b.cols(), b.cols())));
    }
  }
  v.require(worst < 1e-12, "max Gram deviation " + fmt(worst));
  const double t = seconds_since(t0);
  v.require(t < 1.0, "runtime " + fmt(t) + " s");
}

void closed_form_crm(Verdict& v) {
  const auto t0 = std::chrono::steady_clock::now();
  const TwoBandAngles ang = oracle::random_angles(21);
  const BlochField f = two_band_field(ang, {50, 1.0, 2});
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> pick(0, 49);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int p = pick(rng), q = pick(rng);
    const double kp = f.grid()[p], kq = f.grid()[q];
    const CMatrix k = overlap_matrix(f, p, q);
    const double tp = ang.theta(kp), fp = ang.phi(kp), tq = ang.theta(kq), fq = ang.phi(kq);
    worst = std::max({worst, std::abs(k(0, 0) - oracle::k11(tp, fp, tq, fq)),
                      std::abs(k(0, 1) - oracle::k12(tp, fp, tq, fq))});
  }
  v.require(worst < 1e-12, "max K11/K12 error " + fmt(worst) + " over 100 pairs");
  const double t = seconds_since(t0);
  v.require(t < 1.0, "runtime " + fmt(t) + " s");
}

void reduced_rmatrix_forms(Verdict& v) {
  const TwoBandAngles ang = oracle::random_angles(13);
  double off = 0.0, diag = 0.0;
  const BlochField f = two_band_field(ang, {128, 1.0, 2});
  const ConnectionField a = berry_connection(f);
  for (int p = 0; p < f.size(); ++p) {
    const double k = f.grid()[p];
    const double th = ang.theta(k), ph = ang.phi(k), dt = ang.dtheta(k), dp = ang.dphi(k);
    off = std::max(off, std::abs(a[p](0, 1) - oracle::a12(th, ph, dt, dp)));
    diag = std::max(diag, std::abs(a[p](0, 0) - (-std::pow(std::sin(th / 2), 2) * dp)));
  }
  v.require(off < 1e-12, "A12 error " + fmt(off));
  v.require(diag < 1e-12, "A11 error " + fmt(diag));
  std::vector<double> err;
  for (int n : {128, 256}) {
    const BlochField fd = two_band_field(oracle::without_derivatives(ang), {n, 1.0, 2});
    const ConnectionField c = berry_connection(fd);
    double e = 0.0;
    for (int p = 0; p < n; ++p) {
      const double k = fd.grid()[p];
      e = std::max(e, std::abs(c[p](0, 0) - (-std::pow(std::sin(ang.theta(k) / 2), 2) * ang.dphi(k))));
    }
    err.push_back(e);
  }
  v.require(err[0] / err[1] >= 3.5, "finite-difference A11 ratio " + fmt(err[0] / err[1]));
}

void non_representation(Verdict& v) {
  std::vector<std::pair<std::string, BlochField>> fields;
  fields.emplace_back("identity", identity_field({16, 1.0, 2}));
  const TwoBandModel g = two_band_generic(1.0), gr = graphene_ribbon(1.0);
  fields.emplace_back("two-band-generic", two_band_field(g.angles, {64, 1.0, 2}, g.energies));
  fields.emplace_back("graphene-ribbon", two_band_field(gr.angles, {64, 1.0, 2}, gr.energies));
  const PumpFamily fam = build_pump_family(qwz_pump(-1.0), {32, 1.0, 2}, 8, 1e-6);
  for (std::size_t j = 0; j < fam.slices.size(); ++j) fields.emplace_back("qwz-pump", fam.slices[j]);
  double worst = 0.0, weyl = 0.0;
  for (const auto& [name, f] : fields) {
    const auto c = commutator_check(f);
    for (const auto& m : c) worst = std::max(worst, max_abs(m));
    for (double d : weyl_defect(c)) weyl = std::max(weyl, std::abs(d - std::sqrt(double(f.n_bands()))));
  }
  v.require(worst <= 1e-14, "max |[K, r]| " + fmt(worst) + " over identity, two-band-generic, graphene-ribbon, qwz-pump slices");
  v.require(weyl < 1e-12, "distance from i*I equals sqrt(bands) to " + fmt(weyl));
}

void berry_phase_criterion(Verdict& v) {
  const TwoBandModel gr = graphene_ribbon(1.0);
  const double theta = berry_phase(two_band_field(gr.angles, {512, 1.0, 2}), 0);
  const double refined = berry_phase(two_band_field(gr.angles, {8192, 1.0, 2}), 0);
  v.require(std::abs(wrap_angle(theta - pi)) < 1e-3, "theta(N=512) = " + fmt(theta));
  v.require(std::abs(wrap_angle(theta - refined)) < 1e-3, "refined N=8192 differs by " + fmt(std::abs(wrap_angle(theta - refined))));
  const BlochField f = two_band_field(gr.angles, {512, 1.0, 2});
  double spread = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const BlochField h = apply_gauge(f, random_gauge_field(f.lattice(), seed, {3, true, 1.0}));
    spread = std::max(spread, std::abs(wrap_angle(berry_phase(h, 0) - theta)));
  }
  v.require(spread < 1e-9, "100 diagonal gauges spread " + fmt(spread));
}

void functional_invariance(Verdict& v) {
  const TwoBandModel model = two_band_generic(1.0);
  const BlochField f = two_band_field(model.angles, {256, 1.0, 2});
  const double dk = f.grid().spacing();
  const MatrixField a = connection_of(f);
  double loop = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const MatrixField t = transform(a, random_gauge_field(f.lattice(), seed, {3, true, 1.0}));
    for (int n = 0; n < 2; ++n) loop = std::max(loop, std::abs(wrap_angle(functional_loop(t, n, dk) - functional_loop(a, n, dk))));
  }
  v.require(loop < 1e-9, "U(1) loop spread " + fmt(loop));

  std::vector<double> shift;
  for (int n : {128, 256}) {
    const BlochField h = two_band_field(model.angles, {n, 1.0, 2});
    const GaugeField u = random_gauge_field(h.lattice(), 7, {2, true, 1.0});
    const MatrixField c = connection_of(h);
    const MatrixField t = transform_diff_op(c, u, GaugeDerivative::CentralDifference);
    double e = 0.0;
    for (int p = 0; p < n; ++p) {
      const cplx expected = functional_F(c, 0, p) + u.dH(p)(0, 0);
      e = std::max(e, std::abs(functional_F(t, 0, p) - expected));
    }
    shift.push_back(e);
  }
  v.require(shift[0] / shift[1] >= 3.5, "F shift error " + fmt(shift[1]) + ", ratio " + fmt(shift[0] / shift[1]));

  std::vector<double> trace;
  for (int n : {128, 256}) {
    const BlochField h = two_band_field(model.angles, {n, 1.0, 2});
    const MatrixField c = connection_of(h);
    const GaugeField u = random_gauge_field(h.lattice(), 2024);
    const double step = h.grid().spacing();
    trace.push_back(std::abs(functional_trace_loop(transform(c, u), step) - functional_trace_loop(c, step)));
  }
  v.require(trace[1] < 1e-3, "U(2) trace loop error " + fmt(trace[1]) + " (C = " + fmt(trace[1] * 256 * 256) + ")");
  v.require(trace[0] / trace[1] >= 3.5, "trace loop ratio " + fmt(trace[0] / trace[1]));

  std::vector<double> rough;
  for (int n : {256, 512}) {
    const BlochField h = two_band_field(model.angles, {n, 1.0, 2});
    const MatrixField c = connection_of(h);
    const GaugeField u = random_gauge_field(h.lattice(), 2024, {3, false, 1.0});
    const double step = h.grid().spacing();
    rough.push_back(std::abs(functional_trace_loop(transform(c, u), step) - functional_trace_loop(c, step)));
  }
  v.detail << "; info: rough gauge (3 modes, amplitude 1) error " << fmt(rough[0]) << " at N=256, C = "
           << fmt(rough[0] * 256 * 256) << ", ratio " << fmt(rough[0] / rough[1]);
}

void curvature_failure(Verdict& v) {
  const auto fam = two_band_family(
      [](double k, double l) { return pi / 2 + 0.6 * std::sin(k) * std::cos(two_pi * l) + 0.3 * std::cos(2 * k); },
      [](double k, double l) { return k + 0.8 * std::sin(two_pi * l + k); });
  const CurvatureReport r = local_curvature_failure(fam, {256, 1.0, 2}, 4);
  v.require(r.max_abs_g > 1e-2, "max |d_k <phi|d_l phi>| " + fmt(r.max_abs_g));
  v.require(r.loop_mismatch < 1e-6, "closed-loop mismatch " + fmt(r.loop_mismatch));
}

void divergence_demos(Verdict& v) {
  const auto t0 = std::chrono::steady_clock::now();
  const TruncationStudy s = drm_truncated_diagonal(appendix_b_basis(1, 1.0), 0.0, {8, 16, 32, 64, 128, 256});
  v.require(s.fit.r_squared > 0.999 && s.fit.slope > 0.0,
            "slope " + fmt(s.fit.slope) + ", R^2 " + fmt(s.fit.r_squared));
  double worst = 0.0;
  for (int n = 1; n <= 64; ++n) worst = std::max(worst, std::abs(incompleteness_residual(gap_supported_cell(1.0), n) - 1.0));
  v.require(worst < 1e-12, "gap residual error " + fmt(worst) + " for n_max 1..64");
  const double t = seconds_since(t0);
  v.require(t < 5.0, "runtime " + fmt(t) + " s");
}

void transport(Verdict& v) {
  const auto t0 = std::chrono::steady_clock::now();
  const PumpFamily fam = build_pump_family(qwz_pump(-1.0), {128, 1.0, 2}, 128, 1e-6, "qwz-pump");
  const PumpResult r = pumped_charge(fam, 0);
  const ChernResult c = chern_oracle(fam, 0);
  v.require(std::abs(std::abs(r.delta_q) - 1.0) < 1e-3, "delta Q " + fmt(r.delta_q));
  v.require(std::lround(r.delta_q) == -c.chern && c.residue < 0.05,
            "Chern " + std::to_string(c.chern) + ", residue " + fmt(c.residue));

  const TwoBandModel m = two_band_generic(1.0);
  const BlochField f = two_band_field(m.angles, {256, 1.0, 2}, m.energies);
  const OccupationSpec occ = OccupationSpec::lowest_filled(2);
  DriveSpec d;
  d.frequencies = linspace(0.5, 5.0, 181);
  d.eta = 0.05;
  const Spectrum base = shift_current_spectrum(f, occ, d);
  double scale = 0.0;
  for (double x : base.current) scale = std::max(scale, std::abs(x));
  double spread = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Spectrum g = shift_current_spectrum(apply_gauge(f, random_gauge_field(f.lattice(), seed, {3, true, 1.0})), occ, d);
    for (std::size_t i = 0; i < g.current.size(); ++i) spread = std::max(spread, std::abs(g.current[i] - base.current[i]) / scale);
  }
  v.require(spread < 1e-8, "spectrum relative spread " + fmt(spread) + " over 20 diagonal gauges");

  const TwoBandAngles real{[](double k) { return pi / 2 + 0.4 * std::cos(k - 0.1); }, [](double) { return 0.0; },
                           [](double k) { return -0.4 * std::sin(k - 0.1); }, [](double) { return 0.0; }};
  const Spectrum zero = shift_current_spectrum(two_band_field(real, {256, 1.0, 2}, m.energies), occ, d);
  double biggest = 0.0;
  for (double x : zero.current) biggest = std::max(biggest, std::abs(x));
  v.require(biggest == 0.0, "real family max |J_s| " + fmt(biggest));
  const double t = seconds_since(t0);
  v.require(t < 60.0, "runtime " + fmt(t) + " s");
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void determinism(Verdict& v) {
  using cli::json;
  const std::vector<json> configs{
      {{"task", "crm"}, {"lattice", {{"N", 8}}}, {"model", {{"preset", "two-band-generic"}}}},
      {{"task", "connection"}, {"lattice", {{"N", 64}}}, {"model", {{"preset", "graphene-ribbon"}}}},
      {{"task", "berry-phase"}, {"lattice", {{"N", 512}}}, {"model", {{"preset", "graphene-ribbon"}}}},
      {{"task", "gauge-audit"}, {"lattice", {{"N", 128}}}, {"model", {{"preset", "two-band-generic"}}}, {"params", {{"modes", 3}}}},
      {{"task", "shift-current"}, {"lattice", {{"N", 256}}}, {"model", {{"preset", "two-band-generic"}}}},
      {{"task", "pump"}, {"lattice", {{"N", 64}}}, {"model", {{"preset", "qwz-pump"}}}},
      {{"task", "divergence-demo"}, {"lattice", {{"N", 1}}}},
      {{"task", "incompleteness"}, {"lattice", {{"N", 1}}}, {"params", {{"target", "square-wave"}}}},
  };
  const auto root = std::filesystem::temp_directory_path() / ("crm_acceptance_" + std::to_string(::getpid()));
  int compared = 0, mismatched = 0;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    std::vector<std::filesystem::path> dirs;
    for (int workers : {1, 4, 1}) {
      cli::RunOptions o;
      o.workers = workers;
      o.seed = 42;
      o.output_dir = (root / (std::to_string(i) + "_" + std::to_string(dirs.size()))).string();
      const cli::RunOutcome r = cli::run(configs[i], o);
      if (r.exit_code != 0) {
        v.require(false, configs[i]["task"].get<std::string>() + " failed: " + r.error);
        return;
      }
      dirs.emplace_back(*o.output_dir);
    }
    for (const auto& e : std::filesystem::directory_iterator(dirs[0])) {
      const auto name = e.path().filename();
      const std::string ref = read_all(e.path());
      for (std::size_t j = 1; j < dirs.size(); ++j) {
        ++compared;
        mismatched += read_all(dirs[j] / name) != ref;
      }
    }
  }
  std::filesystem::remove_all(root);
  set_worker_count(1);
  v.require(mismatched == 0, std::to_string(compared - mismatched) + "/" + std::to_string(compared) +
                                 " files byte-identical across reruns at 1 and 4 workers");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria{
      {"isomorphism Gram matrix", isomorphism},
      {"closed-form CRM overlaps", closed_form_crm},
      {"reduced r-matrix closed forms", reduced_rmatrix_forms},
      {"non-representation commutator", non_representation},
      {"graphene Berry phase", berry_phase_criterion},
      {"functional invariance", functional_invariance},
      {"local curvature failure", curvature_failure},
      {"divergence demos", divergence_demos},
      {"transport", transport},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    const double t = seconds_since(t0);
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first << " ("
              << fmt(t) << " s) " << v.detail.str() << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
