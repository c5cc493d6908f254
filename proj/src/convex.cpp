#include "lvrtcsr/convex.hpp"

#include <cmath>
#include <limits>

namespace lvrtcsr::convex {

Functional Functional::affine(const Vec& a, double b) {
  Functional f;
  f.value = [a, b](const Vec& x) { return a.dot(x) + b; };
  f.grad = [a](const Vec&) { return a; };
  return f;
}

namespace {

// Null-space parametrization x = x0 + N z of {x | a_eq x = b_eq}.
Mat equality_nullspace(const Mat& a_eq) {
  if (a_eq.rows() == 0)
    return Mat::Identity(a_eq.cols(), a_eq.cols());
  Eigen::JacobiSVD<Mat> svd(a_eq, Eigen::ComputeFullV);
  const double tol =
      1e-12 * std::max(1.0, svd.singularValues().cwiseAbs().maxCoeff());
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > tol) ++rank;
  return svd.matrixV().rightCols(a_eq.cols() - rank);
}

struct Barrier {
  // phi(x) = t f0 + sum -log(-g_i); returns +inf when infeasible.
  double value(const Program& p, double t, const Vec& x) const {
    double v = t * p.objective.value(x);
    for (const auto& g : p.ineqs) {
      double gi = g.value(x);
      if (gi >= 0.0) return std::numeric_limits<double>::infinity();
      v -= std::log(-gi);
    }
    return v;
  }
  void derivatives(const Program& p, double t, const Vec& x, Vec& grad,
                   Mat& hess) const {
    const Eigen::Index n = x.size();
    grad = t * p.objective.grad(x);
    hess = p.objective.hess ? Mat(t * p.objective.hess(x)) : Mat::Zero(n, n);
    for (const auto& g : p.ineqs) {
      double gi = g.value(x);
      Vec gg = g.grad(x);
      grad += gg / (-gi);
      hess += gg * gg.transpose() / (gi * gi);
      if (g.hess) hess += g.hess(x) / (-gi);
    }
  }
};

// Newton minimization of the barrier in the null-space coordinates.
// Returns the final x; sets `decrement_met` when converged.
Vec newton(const Program& p, double t, Vec x, const Mat& nspace,
           const std::function<bool(const Vec&)>& stop_early,
           bool* decrement_met, bool* early) {
  Barrier bar;
  const int max_iter = 120;
  *decrement_met = false;
  if (early) *early = false;
  for (int it = 0; it < max_iter; ++it) {
    if (stop_early && stop_early(x)) {
      if (early) *early = true;
      return x;
    }
    Vec grad;
    Mat hess;
    bar.derivatives(p, t, x, grad, hess);
    Vec gz = nspace.transpose() * grad;
    Mat hz = nspace.transpose() * hess * nspace;
    // Levenberg regularization guards rank-deficient Hessians.
    Eigen::LDLT<Mat> ldlt;
    double reg = 0.0;
    for (int k = 0; k < 12; ++k) {
      ldlt.compute(hz + reg * Mat::Identity(hz.rows(), hz.cols()));
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) break;
      reg = reg == 0.0 ? 1e-12 * std::max(1.0, hz.norm()) : reg * 100.0;
    }
    Vec dz = -ldlt.solve(gz);
    double dec2 = -gz.dot(dz);  // Newton decrement squared
    if (dec2 < 1e-18) {
      *decrement_met = true;
      return x;
    }
    double f0 = bar.value(p, t, x);
    double step = 1.0;
    Vec xn;
    bool moved = false;
    for (int bt = 0; bt < 60; ++bt) {
      xn = x + step * (nspace * dz);
      double fn = bar.value(p, t, xn);
      if (std::isfinite(fn) && fn <= f0 - 1e-4 * step * dec2) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) {
      *decrement_met = dec2 < 1e-10;
      return x;
    }
    x = xn;
  }
  return x;
}

}  // namespace

SolveResult minimize(const Program& prog, const Vec& x_start, double tol,
                     const std::function<bool(const Vec&)>& stop_early) {
  SolveResult res;
  Mat nspace = equality_nullspace(prog.a_eq);
  Vec x = x_start;
  if (prog.a_eq.rows() > 0) {
    double eqres = (prog.a_eq * x - prog.b_eq).lpNorm<Eigen::Infinity>();
    if (eqres > 1e-7)
      throw SolverError("convex::minimize start violates equalities by " +
                        fmt17(eqres));
  }
  for (const auto& g : prog.ineqs)
    if (g.value(x) >= 0.0)
      throw SolverError("convex::minimize start is not strictly feasible");

  const double m_count = std::max<std::size_t>(prog.ineqs.size(), 1);
  double t = 1.0;
  // Scale the initial t to the objective magnitude so the first centering
  // step is well conditioned.
  double g0 = (nspace.transpose() * prog.objective.grad(x)).norm();
  if (g0 > 1.0) t = 1.0 / g0;
  const double mu = 20.0;
  for (int outer = 0; outer < 200; ++outer) {
    bool dec_ok = false, early = false;
    x = newton(prog, t, x, nspace, stop_early, &dec_ok, &early);
    if (early) {
      res.x = x;
      res.value = prog.objective.value(x);
      res.gap = m_count / t;
      res.stopped_early = true;
      res.converged = true;
      return res;
    }
    if (m_count / t < tol) {
      res.x = x;
      res.value = prog.objective.value(x);
      res.gap = m_count / t;
      res.converged = dec_ok;
      return res;
    }
    t *= mu;
  }
  res.x = x;
  res.value = prog.objective.value(x);
  res.gap = m_count / t;
  return res;
}

PhaseIResult phase_one(const Mat& a_eq, const Vec& b_eq, const Mat& g,
                       const Vec& h, double margin, double tol) {
  const Eigen::Index n = g.cols();
  // Particular solution of the equalities (least squares).
  Vec x0 = Vec::Zero(n);
  if (a_eq.rows() > 0)
    x0 = a_eq.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b_eq);

  PhaseIResult out;
  auto slack_at = [&](const Vec& x) {
    return g.rows() > 0 ? (g * x + h).maxCoeff()
                        : -std::numeric_limits<double>::infinity();
  };
  if (g.rows() == 0 || slack_at(x0) < -margin) {
    out.feasible = true;
    out.x = x0;
    out.slack = slack_at(x0);
    return out;
  }

  // Augmented program over (x, s): minimize s, g_i(x) - s <= 0.
  Program p;
  Vec cobj = Vec::Zero(n + 1);
  cobj(n) = 1.0;
  p.objective = Functional::affine(cobj, 0.0);
  p.a_eq = Mat::Zero(a_eq.rows(), n + 1);
  if (a_eq.rows() > 0) p.a_eq.leftCols(n) = a_eq;
  p.b_eq = b_eq;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    Vec a(n + 1);
    a.head(n) = g.row(i).transpose();
    a(n) = -1.0;
    p.ineqs.push_back(Functional::affine(a, h(i)));
  }
  Vec start(n + 1);
  start.head(n) = x0;
  start(n) = slack_at(x0) + 1.0;
  const double target = -2.0 * margin;
  auto r = minimize(p, start, tol, [&](const Vec& xs) {
    return xs(xs.size() - 1) < target;
  });
  out.x = r.x.head(n);
  out.slack = slack_at(out.x);
  out.feasible = out.slack < -margin;
  return out;
}

}  // namespace lvrtcsr::convex
