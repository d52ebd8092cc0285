// Common numeric types, error hierarchy and the deterministic parallel loop
// shared by every module.

#ifndef CRM_CORE_HPP
#define CRM_CORE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <exception>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace crm {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;
inline constexpr cplx I{0.0, 1.0};

// Bad input that is the caller's fault (shape, range, non-finite values).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical guards. The CLI maps every subclass to exit status 3.
class NumericalGuard : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Adjacent bands closer than the gap tolerance somewhere on the grid.
class DegenerateRibbon : public NumericalGuard {
 public:
  DegenerateRibbon(const std::string& what, double k, double gap)
      : NumericalGuard(what), k_(k), gap_(gap) {}
  double k() const noexcept { return k_; }
  double gap() const noexcept { return gap_; }

 private:
  double k_;
  double gap_;
};

// A consecutive overlap vanished, so a discrete phase is undefined.
class ZeroOverlap : public NumericalGuard {
 public:
  using NumericalGuard::NumericalGuard;
};

// Off-diagonal r-matrix element too small for its phase to be meaningful.
class UndefinedShift : public NumericalGuard {
 public:
  using NumericalGuard::NumericalGuard;
};

class NonHermitian : public NumericalGuard {
 public:
  NonHermitian(const std::string& what, double defect)
      : NumericalGuard(what), defect_(defect) {}
  double defect() const noexcept { return defect_; }

 private:
  double defect_;
};

// Plaquette sum too far from an integer, or a branch jump too close to pi.
class UnderResolved : public NumericalGuard {
 public:
  using NumericalGuard::NumericalGuard;
};

// Worker count used by parallel_for. All reductions in the library run in a
// fixed order on the calling thread, so results never depend on this value.
inline std::atomic<int>& worker_count_storage() {
  static std::atomic<int> count{1};
  return count;
}

inline int worker_count() { return worker_count_storage().load(); }

inline void set_worker_count(int workers) {
  worker_count_storage().store(std::max(1, workers));
}

// Runs body(i) for i in [0, n). Each index must write only to its own slot.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  const auto workers = static_cast<std::size_t>(worker_count());
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t used = std::min(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(used);
  std::vector<std::exception_ptr> errors(used);
  for (std::size_t w = 0; w < used; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += used) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double x) {
  double y = std::remainder(x, two_pi);
  if (y <= -pi) y += two_pi;
  return y;
}

inline double max_abs(const CMatrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline double hermiticity_defect(const CMatrix& m) {
  return max_abs(m - m.adjoint());
}

inline double unitarity_defect(const CMatrix& u) {
  return max_abs(u.adjoint() * u - CMatrix::Identity(u.cols(), u.cols()));
}

}  // namespace crm

#endif  // CRM_CORE_HPP
