#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lvrtcsr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Formats a double with 17 significant digits (round-trip exact).
inline std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

/// Orthonormal basis of the hyperplane {y | w.y = 0} in R^n, as the
/// columns of an n x (n-1) matrix. Computed from a Householder QR of w.
inline Mat orthonormal_complement(const Vec& w) {
  const Eigen::Index n = w.size();
  Eigen::HouseholderQR<Mat> qr(w);
  Mat q = qr.householderQ();
  return q.rightCols(n - 1);
}

/// Deterministic RNG: mt19937_64 with an explicit 53-bit uniform so that
/// sampled sequences do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return (eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next_u64() { return eng_(); }
  /// Integer in [0, m).
  std::uint64_t below(std::uint64_t m) { return eng_() % m; }

 private:
  std::mt19937_64 eng_;
};

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Results must be
/// written to per-index slots by the caller; the schedule is a static
/// block partition so output is deterministic.
inline void parallel_for(std::size_t count, unsigned jobs,
                         const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  unsigned nthreads = std::min<std::size_t>(jobs, count);
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  std::exception_ptr err;
  std::mutex err_mu;
  for (unsigned t = 0; t < nthreads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += nthreads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace lvrtcsr
