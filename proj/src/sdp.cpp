#include "lvrtcsr/sdp.hpp"

#include <cmath>
#include <limits>

namespace lvrtcsr::sdp {

namespace {

Mat nullspace_of(const Mat& a) {
  if (a.rows() == 0) return Mat::Identity(a.cols(), a.cols());
  Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeFullV);
  const double tol =
      1e-12 * std::max(1.0, svd.singularValues().cwiseAbs().maxCoeff());
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > tol) ++rank;
  return svd.matrixV().rightCols(a.cols() - rank);
}

Mat eval_block(const Block& b, const Vec& theta) {
  Mat f = b.f0;
  for (std::size_t i = 0; i < b.fi.size(); ++i)
    if (b.fi[i].size() > 0) f += theta(i) * b.fi[i];
  return f;
}

double min_eig(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

struct BarrierEval {
  bool feasible = false;
  double value = 0.0;  // sum of -log det per block
};

BarrierEval barrier_value(const Problem& p, const Vec& theta) {
  BarrierEval out;
  double v = 0.0;
  for (const auto& b : p.blocks) {
    Eigen::LLT<Mat> llt(eval_block(b, theta));
    if (llt.info() != Eigen::Success) return out;
    for (Eigen::Index i = 0; i < llt.matrixL().rows(); ++i) {
      double lii = llt.matrixL()(i, i);
      if (!(lii > 0.0)) return out;
      v -= 2.0 * std::log(lii);
    }
  }
  out.feasible = true;
  out.value = v;
  return out;
}

// grad_i = -tr(F^-1 Fi), hess_ij = tr(F^-1 Fi F^-1 Fj), summed over blocks.
void barrier_derivatives(const Problem& p, const Vec& theta, Vec& grad,
                         Mat& hess) {
  const int nv = p.n_vars;
  grad = Vec::Zero(nv);
  hess = Mat::Zero(nv, nv);
  for (const auto& b : p.blocks) {
    Mat f = eval_block(b, theta);
    Eigen::LLT<Mat> llt(f);
    if (llt.info() != Eigen::Success)
      throw SolverError("sdp barrier evaluated at infeasible point");
    std::vector<Mat> w(nv);  // F^-1 Fi
    for (int i = 0; i < nv; ++i)
      if (b.fi[i].size() > 0) w[i] = llt.solve(b.fi[i]);
    for (int i = 0; i < nv; ++i) {
      if (b.fi[i].size() == 0) continue;
      grad(i) -= w[i].trace();
      for (int j = i; j < nv; ++j) {
        if (b.fi[j].size() == 0) continue;
        double hij = (w[i] * w[j]).trace();
        hess(i, j) += hij;
        if (j != i) hess(j, i) += hij;
      }
    }
  }
}

double total_cone_dim(const Problem& p) {
  double nu = 0.0;
  for (const auto& b : p.blocks) nu += static_cast<double>(b.f0.rows());
  return nu;
}

// Newton centering for t*c.theta + barrier over theta = theta + N z.
Vec center(const Problem& p, double t, Vec theta, const Mat& nspace,
           const std::function<bool(const Vec&)>& stop_early = {}) {
  for (int it = 0; it < 200; ++it) {
    if (stop_early && stop_early(theta)) return theta;
    Vec grad;
    Mat hess;
    barrier_derivatives(p, theta, grad, hess);
    if (p.c.size() > 0) grad += t * p.c;
    Vec gz = nspace.transpose() * grad;
    Mat hz = nspace.transpose() * hess * nspace;
    Eigen::LDLT<Mat> ldlt;
    double reg = 0.0;
    for (int k = 0; k < 14; ++k) {
      ldlt.compute(hz + reg * Mat::Identity(hz.rows(), hz.cols()));
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) break;
      reg = reg == 0.0 ? 1e-13 * std::max(1.0, hz.norm()) : reg * 100.0;
    }
    Vec dz = -ldlt.solve(gz);
    double dec2 = -gz.dot(dz);
    if (!(dec2 > 1e-16)) return theta;
    double f0 = t * (p.c.size() > 0 ? p.c.dot(theta) : 0.0) +
                barrier_value(p, theta).value;
    double step = 1.0;
    for (int bt = 0; bt < 70; ++bt) {
      Vec cand = theta + step * (nspace * dz);
      auto be = barrier_value(p, cand);
      if (be.feasible) {
        double fc = t * (p.c.size() > 0 ? p.c.dot(cand) : 0.0) + be.value;
        if (fc <= f0 - 1e-4 * step * dec2) {
          theta = cand;
          break;
        }
      }
      step *= 0.5;
      if (bt == 69) return theta;
    }
  }
  return theta;
}

}  // namespace

Result solve(const Problem& prob, const Vec& start, double tol) {
  Result res;
  if (prob.a_eq.rows() > 0) {
    double eqres = (prob.a_eq * start - prob.b_eq).lpNorm<Eigen::Infinity>();
    if (eqres > 1e-7) {
      res.message = "start violates equalities by " + fmt17(eqres);
      return res;
    }
  }
  Mat nspace = nullspace_of(prob.a_eq);
  Vec theta = start;

  // Phase-I when the start is not strictly in the cone interior.
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& b : prob.blocks)
    worst = std::min(worst, min_eig(eval_block(b, theta)));
  if (!(worst > 0.0)) {
    Problem aug;
    aug.n_vars = prob.n_vars + 1;
    aug.c = Vec::Zero(aug.n_vars);
    aug.c(prob.n_vars) = 1.0;
    for (const auto& b : prob.blocks) {
      Block nb;
      nb.f0 = b.f0;
      nb.fi = b.fi;
      nb.fi.push_back(Mat::Identity(b.f0.rows(), b.f0.cols()));
      aug.blocks.push_back(std::move(nb));
    }
    aug.a_eq = Mat::Zero(prob.a_eq.rows(), aug.n_vars);
    if (prob.a_eq.rows() > 0) aug.a_eq.leftCols(prob.n_vars) = prob.a_eq;
    aug.b_eq = prob.b_eq;
    Vec th(aug.n_vars);
    th.head(prob.n_vars) = theta;
    th(prob.n_vars) = -worst + 1.0;
    Mat nsa = nullspace_of(aug.a_eq);
    double t = 1.0;
    const double nu = total_cone_dim(aug);
    for (int outer = 0; outer < 60; ++outer) {
      th = center(aug, t, th, nsa, [&](const Vec& v) {
        return v(prob.n_vars) < -1e-9;
      });
      if (th(prob.n_vars) < -1e-9) break;
      if (nu / t < 1e-10) break;
      t *= 20.0;
    }
    if (!(th(prob.n_vars) < 0.0)) {
      res.message = "infeasible: phase-I slack " + fmt17(th(prob.n_vars));
      return res;
    }
    theta = th.head(prob.n_vars);
  }
  res.feasible = true;

  const double nu = std::max(total_cone_dim(prob), 1.0);
  if (prob.c.size() == 0 || prob.c.isZero(0.0)) {
    // Analytic center.
    Problem p = prob;
    p.c = Vec();
    theta = center(p, 1.0, theta, nspace);
    res.theta = theta;
    res.optimal = true;
    res.gap = 0.0;
    res.objective = 0.0;
    return res;
  }

  double t = 1.0;
  double cn = prob.c.norm();
  if (cn > 1.0) t = 1.0 / cn;
  const double mu = 20.0;
  for (int outer = 0; outer < 200; ++outer) {
    theta = center(prob, t, theta, nspace);
    if (nu / t < tol) break;
    t *= mu;
  }
  res.theta = theta;
  res.objective = prob.c.dot(theta);
  res.gap = nu / t;
  res.optimal = res.gap < tol;
  return res;
}

}  // namespace lvrtcsr::sdp
