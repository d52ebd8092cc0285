#include "crm/gauge.hpp"
#include "crm/rmatrix.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>

using namespace crm;

namespace {

MatrixField connection_of(const BlochField& f) { return as_matrix_field(berry_connection(f)); }

MatrixField random_hermitian_field(int n, int nb, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  MatrixField m{{}, OperatorKind::Matrix};
  for (int p = 0; p < n; ++p) {
    CMatrix x(nb, nb);
    for (auto& v : x.reshaped()) v = cplx(g(rng), g(rng));
    m.mats.push_back(0.5 * (x + x.adjoint()));
  }
  return m;
}

// xi(k) = c0 + c1 cos(ka) + d1 sin(ka) for a single band.
struct ScalarGauge {
  double c0, c1, d1, a;
  GaugeField field(const LatticeSpec& s) const {
    return diagonal_gauge(s, {RVector::Constant(1, c0), RVector::Constant(1, c1)},
                          {RVector::Zero(1), RVector::Constant(1, d1)});
  }
  double dxi(double k) const { return -c1 * a * std::sin(k * a) + d1 * a * std::cos(k * a); }
};

}  // namespace

TEST(GaugeFieldSynthesis, ZeroGeneratorIsIdentity) {
  const GaugeField u({6, 1.0, 1}, {CMatrix::Zero(1, 1)});
  for (int p = 0; p < 6; ++p) EXPECT_EQ(u.U(p)(0, 0), cplx(1.0));
  EXPECT_EQ(u.modes(), 0);
}

TEST(GaugeFieldSynthesis, ModesZeroIsMomentumIndependent) {
  const GaugeField u = random_gauge_field({9, 1.0, 3}, 4, {0, false, 1.0});
  for (int p = 1; p < 9; ++p) EXPECT_EQ(max_abs(u.U(p) - u.U(0)), 0.0);
}

TEST(GaugeFieldSynthesis, UnitaryAndReproducible) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const GaugeField u = random_gauge_field({32, 1.0, 3}, seed, {3, false, 1.0});
    EXPECT_LT(u.max_unitarity_defect(), 1e-12);
    const GaugeField v = random_gauge_field({32, 1.0, 3}, seed, {3, false, 1.0});
    for (int p = 0; p < 32; ++p) EXPECT_TRUE(u.U(p) == v.U(p));
    for (int p = 0; p < 32; ++p) EXPECT_LT(hermiticity_defect(u.H(p)), 1e-15);
  }
}

TEST(GaugeFieldSynthesis, GeneratorIsPeriodic) {
  const double a = 1.4;
  const GaugeField u = random_gauge_field({16, a, 2}, 8);
  for (double k : {0.0, 0.3, 2.0}) EXPECT_LT(max_abs(u.generator(k) - u.generator(k + two_pi / a)), 1e-13);
}

TEST(GaugeFieldSynthesis, DiagonalOptionGivesAbelianField) {
  const GaugeField u = random_gauge_field({16, 1.0, 3}, 2, {2, true, 1.0});
  EXPECT_TRUE(u.abelian());
  for (int p = 0; p < 16; ++p) {
    CMatrix off = u.U(p);
    off.diagonal().setZero();
    EXPECT_EQ(max_abs(off), 0.0);
  }
  EXPECT_FALSE(random_gauge_field({16, 1.0, 3}, 2).abelian());
}

TEST(GaugeFieldSynthesis, ExactDerivativeMatchesFiniteDifference) {
  const GaugeField u = random_gauge_field({64, 1.0, 3}, 17);
  const double h = 1e-5;
  for (int p : {0, 13, 40}) {
    const double k = u.grid()[p];
    const CMatrix up = (I * u.generator(k + h)).exp().adjoint();
    const CMatrix dn = (I * u.generator(k - h)).exp().adjoint();
    EXPECT_LT(max_abs((up - dn) / (2 * h) - u.dU_dagger(p)), 1e-8);
  }
}

TEST(TransformMatrixOp, IdentityAndScalarCases) {
  const LatticeSpec s{12, 1.0, 2};
  const MatrixField m = random_hermitian_field(12, 2, 1);
  const GaugeField id(s, {CMatrix::Zero(2, 2)});
  const MatrixField same = transform_matrix_op(m, id);
  for (int p = 0; p < 12; ++p) EXPECT_LT(max_abs(same[p] - m[p]), 1e-15);

  MatrixField scalar{{}, OperatorKind::Matrix};
  for (int p = 0; p < 12; ++p) scalar.mats.push_back(std::cos(p) * CMatrix::Identity(2, 2));
  const MatrixField t = transform_matrix_op(scalar, random_gauge_field(s, 3));
  for (int p = 0; p < 12; ++p) EXPECT_LT(max_abs(t[p] - scalar[p]), 1e-14);
}

TEST(TransformMatrixOp, SpectrumPreserved) {
  const LatticeSpec s{10, 1.0, 3};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MatrixField m = random_hermitian_field(10, 3, 50 + seed);
    const MatrixField t = transform_matrix_op(m, random_gauge_field(s, seed, {2, false, 1.0}));
    for (int p = 0; p < 10; ++p) {
      const RVector e0 = Eigen::SelfAdjointEigenSolver<CMatrix>(m[p]).eigenvalues();
      const RVector e1 = Eigen::SelfAdjointEigenSolver<CMatrix>(t[p]).eigenvalues();
      EXPECT_LT((e0 - e1).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(TransformMatrixOp, RejectsShapeMismatch) {
  const MatrixField m = random_hermitian_field(10, 3, 1);
  EXPECT_THROW(transform_matrix_op(m, random_gauge_field({10, 1.0, 2}, 1)), InvalidArgument);
  EXPECT_THROW(transform_diff_op(m, random_gauge_field({11, 1.0, 3}, 1)), InvalidArgument);
}

TEST(TransformDiffOp, IdentityGaugeLeavesFieldUnchanged) {
  const MatrixField m{random_hermitian_field(8, 2, 5).mats, OperatorKind::Differential};
  const MatrixField t = transform_diff_op(m, GaugeField({8, 1.0, 2}, {CMatrix::Zero(2, 2)}));
  for (int p = 0; p < 8; ++p) EXPECT_LT(max_abs(t[p] - m[p]), 1e-15);
}

TEST(TransformDiffOp, ScalarPhaseAddsItsDerivative) {
  const ScalarGauge xi{0.3, 0.7, -1.1, 1.0};
  const LatticeSpec s{40, 1.0, 1};
  const GaugeField u = xi.field(s);
  const MatrixField zero{std::vector<CMatrix>(40, CMatrix::Zero(1, 1)), OperatorKind::Differential};
  const MatrixField t = transform_diff_op(zero, u, GaugeDerivative::Exact);
  for (int p = 0; p < 40; ++p) EXPECT_LT(std::abs(t[p](0, 0) - xi.dxi(u.grid()[p])), 1e-13);

  double prev = 0.0;
  for (int n : {32, 64, 128}) {
    const GaugeField v = xi.field({n, 1.0, 1});
    const MatrixField z{std::vector<CMatrix>(n, CMatrix::Zero(1, 1)), OperatorKind::Differential};
    const MatrixField fd = transform_diff_op(z, v, GaugeDerivative::CentralDifference);
    double err = 0.0;
    for (int p = 0; p < n; ++p) err = std::max(err, std::abs(fd[p](0, 0) - xi.dxi(v.grid()[p])));
    if (prev > 0.0) {
      EXPECT_GT(prev / err, 3.5);
    }
    prev = err;
  }
}

TEST(TransformDiffOp, DifferenceOfTransformsIsSimilarityOfDifference) {
  const LatticeSpec s{16, 1.0, 3};
  const GaugeField u = random_gauge_field(s, 9);
  const MatrixField m1{random_hermitian_field(16, 3, 1).mats, OperatorKind::Differential};
  const MatrixField m2{random_hermitian_field(16, 3, 2).mats, OperatorKind::Differential};
  const MatrixField t1 = transform_diff_op(m1, u), t2 = transform_diff_op(m2, u);
  double similarity = 0.0, bare = 0.0;
  for (int p = 0; p < 16; ++p) {
    const CMatrix d = m1[p] - m2[p];
    similarity = std::max(similarity, max_abs((t1[p] - t2[p]) - u.U(p) * d * u.U(p).adjoint()));
    bare = std::max(bare, max_abs((t1[p] - t2[p]) - d));
  }
  EXPECT_LT(similarity, 1e-13);
  EXPECT_GT(bare, 1e-2);
}

TEST(TransformDiffOp, AgreesWithConnectionOfGaugedField) {
  const BlochField f = two_band_field(oracle::random_angles(3), {48, 1.0, 2});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GaugeField u = random_gauge_field(f.lattice(), seed);
    const MatrixField direct = connection_of(apply_gauge(f, u));
    const MatrixField rule = transform_diff_op(connection_of(f), u, GaugeDerivative::Exact);
    for (int p = 0; p < 48; ++p) EXPECT_LT(max_abs(direct[p] - rule[p]), 1e-12);
  }
}

TEST(InnerForms, MatrixOperatorFormIsRibbonInvariant) {
  const LatticeSpec s{12, 1.0, 3};
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g;
  const MatrixField o = random_hermitian_field(12, 3, 4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GaugeField u = random_gauge_field(s, seed, {2, false, 1.0});
    const MatrixField o2 = transform_matrix_op(o, u);
    for (int p = 0; p < 12; ++p) {
      CVector phi(3), psi(3);
      for (int i = 0; i < 3; ++i) {
        phi[i] = cplx(g(rng), g(rng));
        psi[i] = cplx(g(rng), g(rng));
      }
      const cplx before = phi.dot(o[p] * psi);
      const cplx after = (u.U(p) * phi).dot(o2[p] * (u.U(p) * psi));
      EXPECT_LT(std::abs(after - before), 1e-12);
    }
  }
}

TEST(InnerForms, DifferentialOperatorFormGainsInhomogeneousTerm) {
  std::mt19937_64 rng(78);
  std::normal_distribution<double> g;
  const MatrixField m{random_hermitian_field(64, 2, 8).mats, OperatorKind::Differential};
  const GaugeField u = random_gauge_field({64, 1.0, 2}, 12);
  const MatrixField exact = transform_diff_op(m, u, GaugeDerivative::Exact);
  for (int p = 0; p < 64; ++p) {
    CVector phi(2), psi(2);
    for (int i = 0; i < 2; ++i) {
      phi[i] = cplx(g(rng), g(rng));
      psi[i] = cplx(g(rng), g(rng));
    }
    const CVector phi2 = u.U(p) * phi, psi2 = u.U(p) * psi;
    const cplx gained = phi2.dot(exact[p] * psi2) - phi.dot(m[p] * psi);
    const cplx expected = phi.dot(I * u.dU_dagger(p) * u.U(p) * psi);
    EXPECT_LT(std::abs(gained - expected), 1e-12);
  }
}

TEST(BerryPhase, ConstantFieldIsZero) {
  std::mt19937_64 rng(1);
  const BlochField f = constant_field({8, 1.0, 3}, oracle::random_unitary(3, rng));
  for (int n = 0; n < 3; ++n) EXPECT_NEAR(berry_phase(f, n), 0.0, 1e-14);
}

TEST(BerryPhase, PhaseReshuffleLeavesPhaseUnchanged) {
  const BlochField f = two_band_field(oracle::random_angles(7), {30, 1.0, 2});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-pi, pi);
  std::vector<CMatrix> c = f.coefficient_table();
  for (auto& m : c) {
    m.col(0) *= std::polar(1.0, u(rng));
    m.col(1) *= std::polar(1.0, u(rng));
  }
  const BlochField g(f.lattice(), c);
  for (int n = 0; n < 2; ++n) EXPECT_NEAR(wrap_angle(berry_phase(g, n) - berry_phase(f, n)), 0.0, 1e-12);
}

TEST(BerryPhase, SingleWindingGivesHalfTurn) {
  TwoBandAngles ang{[](double) { return pi / 2; }, [](double k) { return k; }, {}, {}};
  const BlochField f = two_band_field(ang, {512, 1.0, 2});
  const double oracle_value = oracle::half_winding_phase([](double) { return 1.0; }, 512, 1.0);
  EXPECT_NEAR(oracle_value, -pi, 1e-12);
  EXPECT_LT(std::abs(wrap_angle(berry_phase(f, 0) - oracle_value)), 1e-3);
}

TEST(BerryPhase, RiemannOracleForGenericAngles) {
  const TwoBandAngles ang = oracle::random_angles(12);
  const BlochField f = two_band_field(ang, {1024, 1.0, 2});
  // -(1/2) loop of (1 - cos theta) d phi, by midpoint rule on a fine grid.
  double ref = 0.0;
  const int m = 1 << 16;
  for (int i = 0; i < m; ++i) {
    const double k = two_pi * (i + 0.5) / m;
    ref += -0.5 * (1.0 - std::cos(ang.theta(k))) * ang.dphi(k) * two_pi / m;
  }
  EXPECT_LT(std::abs(wrap_angle(berry_phase(f, 0) - ref)), 1e-4);
}

TEST(BerryPhase, Guards) {
  EXPECT_THROW(berry_phase(identity_field({2, 1.0, 2}), 0), InvalidArgument);
  EXPECT_THROW(berry_phase(identity_field({4, 1.0, 2}), 2), InvalidArgument);
  std::vector<CMatrix> c(4, CMatrix::Identity(2, 2));
  c[1] << 0, 1, 1, 0;
  EXPECT_THROW(berry_phase(BlochField({4, 1.0, 2}, c), 0), ZeroOverlap);
}

TEST(BerryPhase, InvariantUnderDiagonalGauges) {
  const BlochField f = two_band_field(two_band_generic(1.0).angles, {128, 1.0, 2});
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const BlochField g = apply_gauge(f, random_gauge_field(f.lattice(), seed, {3, true, 1.0}));
    for (int n = 0; n < 2; ++n) EXPECT_LT(std::abs(wrap_angle(berry_phase(g, n) - berry_phase(f, n))), 1e-9);
  }
}

TEST(FunctionalF, Examples) {
  const MatrixField zero = connection_of(identity_field({8, 1.0, 2}));
  for (int p = 0; p < 8; ++p) EXPECT_EQ(functional_F(zero, 1, p), cplx(0.0));

  const ScalarGauge xi{0.0, 0.4, 0.9, 1.0};
  const LatticeSpec s{24, 1.0, 1};
  const BlochField f = identity_field(s);
  const MatrixField shifted = transform(connection_of(f), xi.field(s));
  for (int p = 0; p < 24; ++p) EXPECT_NEAR(functional_F(shifted, 0, p).real(), xi.dxi(f.grid()[p]), 1e-13);

  const MatrixField op = random_hermitian_field(24, 2, 3);
  const MatrixField op2 = transform(op, random_gauge_field({24, 1.0, 2}, 5, {2, true, 1.0}));
  for (int p = 0; p < 24; ++p) {
    for (int n = 0; n < 2; ++n) EXPECT_LT(std::abs(functional_F(op2, n, p) - functional_F(op, n, p)), 1e-13);
  }
  EXPECT_THROW(functional_F(op, 2, 0), InvalidArgument);
}

TEST(FunctionalLoop, ZeroFieldAndU1Invariance) {
  EXPECT_EQ(functional_loop(connection_of(identity_field({16, 1.0, 2})), 0, 0.1), 0.0);
  const BlochField f = two_band_field(oracle::random_angles(9), {256, 1.0, 2});
  const double dk = f.grid().spacing();
  const MatrixField a = connection_of(f);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const GaugeField u = random_gauge_field(f.lattice(), seed, {3, true, 1.0});
    const MatrixField rule = transform(a, u);
    const MatrixField direct = connection_of(apply_gauge(f, u));
    for (int n = 0; n < 2; ++n) {
      EXPECT_LT(std::abs(functional_loop(rule, n, dk) - functional_loop(a, n, dk)), 1e-9);
      EXPECT_LT(std::abs(functional_loop(direct, n, dk) - functional_loop(a, n, dk)), 1e-9);
    }
  }
}

TEST(FunctionalLoop, MatchesBerryPhaseAtSecondOrder) {
  const TwoBandAngles ang = oracle::random_angles(15);
  double prev = 0.0;
  for (int n : {64, 128, 256}) {
    const BlochField f = two_band_field(ang, {n, 1.0, 2});
    const double loop = functional_loop(connection_of(f), 0, f.grid().spacing());
    const double err = std::abs(wrap_angle(loop - berry_phase(f, 0)));
    if (prev > 0.0) {
      EXPECT_GT(prev / err, 3.5) << "N=" << n;
    }
    prev = err;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(FunctionalTraceLoop, InvariantUnderFullGaugeAtSecondOrder) {
  EXPECT_EQ(functional_trace_loop(connection_of(identity_field({16, 1.0, 3})), 0.2), 0.0);
  const TwoBandModel model = two_band_generic(1.0);
  std::vector<double> errs;
  for (int n : {128, 256}) {
    const BlochField f = two_band_field(model.angles, {n, 1.0, 2});
    const MatrixField a = connection_of(f);
    const GaugeField u = random_gauge_field(f.lattice(), 2024);
    ASSERT_FALSE(u.abelian());
    const double dk = f.grid().spacing();
    errs.push_back(std::abs(functional_trace_loop(transform(a, u), dk) - functional_trace_loop(a, dk)));
  }
  EXPECT_LT(errs[1], 1e-3);
  EXPECT_GE(errs[0] / errs[1], 3.5);
  ::testing::Test::RecordProperty("C", std::to_string(errs[1] * 256 * 256));
}

TEST(FunctionalTraceLoop, ExactRuleIsExactlyInvariant) {
  const BlochField f = two_band_field(two_band_generic(1.0).angles, {64, 1.0, 2});
  const MatrixField a = connection_of(f);
  const GaugeField u = random_gauge_field(f.lattice(), 3);
  const double dk = f.grid().spacing();
  EXPECT_LT(std::abs(functional_trace_loop(transform(a, u, GaugeDerivative::Exact), dk) -
                     functional_trace_loop(a, dk)),
            1e-12);
}

TEST(FunctionalTraceLoop, IndividualBandLoopsAreNotInvariantUnderMixing) {
  const BlochField f = two_band_field(two_band_generic(1.0).angles, {128, 1.0, 2});
  const MatrixField a = connection_of(f);
  const double dk = f.grid().spacing();
  double spread = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MatrixField t = transform(a, random_gauge_field(f.lattice(), seed, {2, false, 1.0}));
    spread = std::max(spread, std::abs(wrap_angle(functional_loop(t, 0, dk) - functional_loop(a, 0, dk))));
  }
  EXPECT_GT(spread, 1e-3);
}

TEST(Reports, InvariantFlagAndCsv) {
  const auto r1 = make_report("loop", 0, 5, 1.0, 1.0 + 1e-10, 1e-9);
  EXPECT_TRUE(r1.invariant());
  const auto r2 = make_report("F", 1, 6, 1.0, 1.5, 1e-9);
  EXPECT_FALSE(r2.invariant());
  const auto r3 = make_report("berry_phase", 0, 7, pi - 1e-12, -pi + 1e-12, 1e-9, true);
  EXPECT_TRUE(r3.invariant());
  std::ostringstream os;
  write_csv(os, {r1, r2});
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "name,band,seed,before_re,before_im,after_re,after_im,delta,invariant");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 9), "loop,0,5,");
  EXPECT_EQ(line.substr(line.size() - 4), "true");
  std::getline(is, line);
  EXPECT_EQ(line.substr(line.size() - 5), "false");
}

TEST(DerivativeIdentities, SignReversalAndConjugation) {
  const TwoBandAngles ang = oracle::random_angles(4);
  EXPECT_LT(sign_reversal_defect(two_band_field(ang, {64, 1.0, 2})), 1e-13);
  double prev = 0.0;
  for (int n : {64, 128, 256}) {
    const BlochField fd = two_band_field(oracle::without_derivatives(ang), {n, 1.0, 2});
    const double d = sign_reversal_defect(fd);
    if (prev > 0.0) {
      EXPECT_GT(prev / d, 3.5);
    }
    prev = d;
    EXPECT_LT(conjugation_defect(fd), 1e-13);
  }
  EXPECT_LT(conjugation_defect(oracle::random_field({9, 1.0, 3}, 2)), 1e-13);
}

TEST(LocalCurvature, LambdaIndependentFamilyIsFlat) {
  const auto fam = two_band_family([](double k, double) { return 1.0 + 0.3 * std::cos(k); },
                                   [](double k, double) { return k; });
  const CurvatureReport r = local_curvature_failure(fam, {64, 1.0, 2}, 3);
  EXPECT_LT(r.max_abs_g, 1e-9);
  EXPECT_LT(r.max_pointwise_mismatch, 1e-9);
  EXPECT_LT(r.loop_mismatch, 1e-9);
}

TEST(LocalCurvature, GenericFamilyFailsLocallyButNotOnLoops) {
  const auto fam = two_band_family(
      [](double k, double l) { return pi / 2 + 0.6 * std::sin(k) * std::cos(two_pi * l) + 0.3 * std::cos(2 * k); },
      [](double k, double l) { return k + 0.8 * std::sin(two_pi * l + k); });
  const CurvatureReport r = local_curvature_failure(fam, {256, 1.0, 2}, 4);
  EXPECT_GT(r.max_abs_g, 1e-2);
  EXPECT_GT(r.max_pointwise_mismatch, 1e-2);
  EXPECT_LT(r.loop_mismatch, 1e-6);
  EXPECT_GT(r.max_loop_value, 1e-2);
}

TEST(LocalCurvature, MismatchEqualsImaginaryCurvatureTerm) {
  const auto fam = two_band_family([](double k, double l) { return 1.2 + 0.5 * std::sin(k + two_pi * l); },
                                   [](double k, double l) { return std::cos(k) * (1 + l); });
  const CurvatureReport r = local_curvature_failure(fam, {128, 1.0, 2}, 2);
  EXPECT_NEAR(r.max_pointwise_mismatch, r.max_abs_g, 1e-7);
}

TEST(LocalCurvature, RejectsUnnormalizedFamily) {
  const TwoParameterFamily bad = [](double, double) { return CVector::Constant(2, 1.0); };
  EXPECT_THROW(local_curvature_failure(bad, {8, 1.0, 2}, 1), InvalidArgument);
}
