#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "lvrtcsr/common.hpp"

namespace lvrtcsr::ode {

struct Options {
  double rtol = 1e-8;
  double atol = 1e-10;
  double initial_step = 1e-3;
  double min_step = 1e-14;
  std::size_t max_steps = 50'000'000;
  bool record = false;  // keep accepted-step samples
};

/// Scalar event g(t, x); a root is located whenever g changes sign across an
/// accepted step. Terminal events stop the integration at the root.
struct Event {
  std::function<double(double, const Vec&)> g;
  bool terminal = true;
};

struct EventHit {
  int index = -1;
  double t = 0.0;
  Vec x;
};

struct Result {
  bool completed = false;  // reached t1 (or stopped at a terminal event)
  bool step_underflow = false;
  double t_final = 0.0;
  Vec x_final;
  std::vector<EventHit> hits;
  std::vector<double> times;  // filled when Options::record
  std::vector<Vec> states;
  std::size_t n_steps = 0;
};

namespace detail {
// Cubic Hermite interpolant over one accepted step.
inline Vec hermite(double theta, double h, const Vec& y0, const Vec& f0,
                   const Vec& y1, const Vec& f1) {
  double t2 = theta * theta, t3 = t2 * theta;
  return (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + theta) * h * f0 +
         (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * f1;
}
}  // namespace detail

/// Adaptive Dormand-Prince 5(4). `post_step` (if set) is applied to the
/// state after every accepted step (manifold re-projection).
template <typename Rhs>
Result integrate(Rhs&& rhs, Vec x0, double t0, double t1, const Options& opt,
                 const std::vector<Event>& events = {},
                 const std::function<void(Vec&)>& post_step = {}) {
  // Butcher tableau.
  static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                      a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                      a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                      a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                      b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                      e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  Result res;
  double t = t0;
  Vec y = std::move(x0);
  Vec f0 = rhs(t, y);
  double h = std::min(opt.initial_step, t1 - t0);
  std::vector<double> gprev(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) gprev[i] = events[i].g(t, y);
  if (opt.record) {
    res.times.push_back(t);
    res.states.push_back(y);
  }

  Vec k2, k3, k4, k5, k6, f1, ynew, yerr;
  while (t < t1) {
    if (t + h > t1) h = t1 - t;
    k2 = rhs(t + c2 * h, y + h * (a21 * f0));
    k3 = rhs(t + c3 * h, y + h * (a31 * f0 + a32 * k2));
    k4 = rhs(t + c4 * h, y + h * (a41 * f0 + a42 * k2 + a43 * k3));
    k5 = rhs(t + c5 * h, y + h * (a51 * f0 + a52 * k2 + a53 * k3 + a54 * k4));
    k6 = rhs(t + h,
             y + h * (a61 * f0 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    ynew = y + h * (b1 * f0 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    f1 = rhs(t + h, ynew);  // FSAL
    yerr = h * (e1 * f0 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * f1);

    double err = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      double sc = opt.atol +
                  opt.rtol * std::max(std::abs(y(i)), std::abs(ynew(i)));
      err = std::max(err, std::abs(yerr(i)) / sc);
    }

    if (err <= 1.0) {  // accept
      double tnew = t + h;
      // Event location on the raw (pre-projection) step.
      int first_terminal = -1;
      double first_theta = 2.0;
      for (std::size_t i = 0; i < events.size(); ++i) {
        double gnew = events[i].g(tnew, ynew);
        if (gprev[i] > 0.0 && gnew <= 0.0) {
          double lo = 0.0, hi = 1.0;
          for (int it = 0; it < 60; ++it) {
            double mid = 0.5 * (lo + hi);
            Vec xm = detail::hermite(mid, h, y, f0, ynew, f1);
            if (events[i].g(t + mid * h, xm) > 0.0)
              lo = mid;
            else
              hi = mid;
          }
          EventHit hit;
          hit.index = static_cast<int>(i);
          hit.t = t + hi * h;
          hit.x = detail::hermite(hi, h, y, f0, ynew, f1);
          res.hits.push_back(hit);
          if (events[i].terminal && hi < first_theta) {
            first_theta = hi;
            first_terminal = static_cast<int>(res.hits.size()) - 1;
          }
        }
        gprev[i] = gnew;
      }
      if (first_terminal >= 0) {
        res.completed = true;
        res.t_final = res.hits[first_terminal].t;
        res.x_final = res.hits[first_terminal].x;
        if (opt.record) {
          res.times.push_back(res.t_final);
          res.states.push_back(res.x_final);
        }
        return res;
      }

      t = tnew;
      y = std::move(ynew);
      if (post_step) post_step(y);
      f0 = rhs(t, y);  // re-evaluate after projection
      if (opt.record) {
        res.times.push_back(t);
        res.states.push_back(y);
      }
      if (++res.n_steps > opt.max_steps) {
        res.t_final = t;
        res.x_final = y;
        return res;
      }
      double fac = 0.9 * std::pow(err > 1e-12 ? err : 1e-12, -0.2);
      h *= std::min(5.0, std::max(0.2, fac));
    } else {
      h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
    }
    if (h < opt.min_step) {
      res.step_underflow = true;
      res.t_final = t;
      res.x_final = y;
      return res;
    }
  }
  res.completed = true;
  res.t_final = t;
  res.x_final = y;
  return res;
}

}  // namespace lvrtcsr::ode
