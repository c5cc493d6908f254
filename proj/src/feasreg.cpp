#include "lvrtcsr/feasreg.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>

#include "json.hpp"

namespace lvrtcsr::feasreg {

namespace {
constexpr double kHalfPi = std::numbers::pi / 2.0;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

double lvrt_max_from_curve(
    const std::vector<std::pair<double, double>>& curve) {
  if (curve.empty()) throw ModelError("LVRT curve is empty");
  double vmax = 0.0;
  for (const auto& [t, v] : curve) {
    if (!(v > 0.0 && v <= 1.0))
      throw ModelError("LVRT curve voltage out of (0, 1]: " + fmt17(v));
    vmax = std::max(vmax, v);
  }
  return vmax;
}

std::vector<LVRTConstraint> build_constraints(
    const netmodel::NetworkModel& model,
    const netmodel::VoltageRecovery& recovery) {
  std::vector<LVRTConstraint> out;
  const int ng = model.n_gen();
  for (int ib = 0; ib < model.n_bus(); ++ib) {
    const auto& bus = model.buses[ib];
    if (!bus.is_rg) continue;
    if (!bus.lvrt_max && bus.lvrt_curve.empty()) continue;
    LVRTConstraint c;
    c.rg_bus = bus.id;
    c.lvrt_max =
        bus.lvrt_max ? *bus.lvrt_max : lvrt_max_from_curve(bus.lvrt_curve);
    const auto& mag = recovery.c_mag.at(ib);
    const auto& ang = recovery.c_ang.at(ib);
    for (int i = 0; i < ng; ++i) c.const_sum += mag[i] * mag[i];
    c.threshold = c.lvrt_max * c.lvrt_max - c.const_sum;
    for (int i = 0; i < ng; ++i)
      for (int j = i + 1; j < ng; ++j) {
        CosTerm t;
        t.i = i;
        t.j = j;
        t.amplitude = 2.0 * mag[i] * mag[j];
        t.phase = ang[i] - ang[j];
        c.terms.push_back(t);
      }
    out.push_back(std::move(c));
  }
  return out;
}

double voltage_sq(const Vec& delta, const LVRTConstraint& c) {
  double v = c.const_sum;
  for (const auto& t : c.terms)
    v += t.amplitude * std::cos(delta(t.i) - delta(t.j) + t.phase);
  return v;
}

// ---------------------------------------------------------------------------
// PWL lower-bound fitting

double pwl_value(const PWLFit& fit, double delta) {
  double m = kInf;
  for (const auto& l : fit.lines) m = std::min(m, l.a * delta + l.b);
  return m;
}

double pwl_max_violation(const std::vector<Line>& lines, double phase) {
  // The max of min_k(l_k) - cos over the window sits at a window end, a
  // pairwise line intersection, or a stationary point of some l_k - cos.
  std::vector<double> cand = {-kHalfPi, kHalfPi};
  const std::size_t nl = lines.size();
  for (std::size_t i = 0; i < nl; ++i)
    for (std::size_t j = i + 1; j < nl; ++j) {
      double da = lines[i].a - lines[j].a;
      if (std::abs(da) < 1e-14) continue;
      double d = (lines[j].b - lines[i].b) / da;
      if (d > -kHalfPi && d < kHalfPi) cand.push_back(d);
    }
  for (const auto& l : lines) {
    if (std::abs(l.a) > 1.0) continue;
    double s = std::asin(-l.a);
    for (double base : {s, std::numbers::pi - s})
      for (int k = -1; k <= 1; ++k) {
        double d = base - phase + 2.0 * std::numbers::pi * k;
        if (d > -kHalfPi && d < kHalfPi) cand.push_back(d);
      }
  }
  double worst = -kInf;
  for (double d : cand) {
    double m = kInf;
    for (const auto& l : lines) m = std::min(m, l.a * d + l.b);
    worst = std::max(worst, m - std::cos(d + phase));
  }
  return worst;
}

namespace {

struct FitWork {
  double phase = 0.0;
  int ns = 0;
  Vec grid, cosg;

  explicit FitWork(double ph, int n_samples) : phase(ph), ns(n_samples) {
    grid = Vec::LinSpaced(ns, -kHalfPi, kHalfPi);
    cosg = Vec(ns);
    for (int p = 0; p < ns; ++p) cosg(p) = std::cos(grid(p) + phase);
  }

  // Chords between successive vertices; a degenerate segment reuses its
  // neighbor's line so a coarser placement embeds exactly.
  bool build_lines(const std::vector<double>& verts,
                   std::vector<Line>& lines) const {
    const int nl = static_cast<int>(verts.size()) - 1;
    lines.assign(nl, Line{});
    std::vector<bool> ok(nl, false);
    for (int k = 0; k < nl; ++k) {
      double lo = verts[k], hi = verts[k + 1];
      if (hi - lo < 1e-9) continue;
      double ylo = std::cos(lo + phase), yhi = std::cos(hi + phase);
      lines[k].a = (yhi - ylo) / (hi - lo);
      lines[k].b = ylo - lines[k].a * lo;
      ok[k] = true;
    }
    int last = -1;
    for (int k = 0; k < nl; ++k) {
      if (ok[k]) {
        last = k;
      } else if (last >= 0) {
        lines[k] = lines[last];
      }
    }
    int first = -1;
    for (int k = 0; k < nl && first < 0; ++k)
      if (ok[k]) first = k;
    if (first < 0) return false;
    for (int k = 0; k < first; ++k) lines[k] = lines[first];
    return true;
  }

  double objective(const std::vector<double>& verts) const {
    std::vector<Line> lines;
    if (!build_lines(verts, lines)) return kInf;
    double obj = 0.0;
    for (int p = 0; p < ns; ++p) {
      double m = kInf;
      for (const auto& l : lines) m = std::min(m, l.a * grid(p) + l.b);
      double gap = cosg(p) - m;
      if (gap < -1e-12) return kInf;
      obj += gap * gap;
    }
    if (pwl_max_violation(lines, phase) > 1e-12) return kInf;
    return obj;
  }
};

// One-at-a-time vertex scans between the neighbors, with a local refine.
double coordinate_descent(const FitWork& w, std::vector<double>& verts) {
  double best = w.objective(verts);
  const int n_int = static_cast<int>(verts.size()) - 2;
  if (n_int <= 0) return best;
  for (int sweep = 0; sweep < 20; ++sweep) {
    double before = best;
    for (int i = 1; i <= n_int; ++i) {
      double lo = verts[i - 1], hi = verts[i + 1];
      double span = hi - lo;
      if (span < 1e-8) continue;
      double center = verts[i];
      for (int level = 0; level < 3; ++level) {
        const int npts = 17;
        double half = span / 2.0 / std::pow(6.0, level);
        double b_lo = std::max(lo + 1e-10, center - half);
        double b_hi = std::min(hi - 1e-10, center + half);
        for (int q = 0; q <= npts; ++q) {
          double cand = b_lo + (b_hi - b_lo) * q / npts;
          double saved = verts[i];
          verts[i] = cand;
          double obj = w.objective(verts);
          if (obj < best) {
            best = obj;
            center = cand;
          } else {
            verts[i] = saved;
          }
          verts[i] = center;
        }
      }
    }
    if (before - best < 1e-15) break;
  }
  return best;
}

}  // namespace

PWLFit fit_pwl_lower(double phase, int n_line, int n_samples) {
  if (n_line < 1) throw ModelError("fit_pwl_lower: n_line must be >= 1");
  if (n_samples < 101)
    throw ModelError("fit_pwl_lower: n_samples must be >= 101");
  FitWork w(phase, n_samples);

  std::vector<double> best_verts;
  double best_obj = kInf;
  auto consider = [&](std::vector<double> verts) {
    double obj = coordinate_descent(w, verts);
    if (obj < best_obj) {
      best_obj = obj;
      best_verts = verts;
    }
  };

  if (n_line == 1) {
    best_verts = {-kHalfPi, kHalfPi};
    best_obj = w.objective(best_verts);
  } else if (n_line <= 3) {
    // Exhaustive lattice over interior vertices, then local polish.
    const int nl = 161;
    Vec lattice = Vec::LinSpaced(nl, -kHalfPi + 1e-6, kHalfPi - 1e-6);
    if (n_line == 2) {
      for (int i = 0; i < nl; ++i)
        consider({-kHalfPi, lattice(i), kHalfPi});
      // Degenerate embedding of the single chord keeps the objective
      // monotone in n_line even when the lattice misses it.
      double obj1 = w.objective({-kHalfPi, kHalfPi, kHalfPi});
      if (obj1 < best_obj) {
        best_obj = obj1;
        best_verts = {-kHalfPi, kHalfPi, kHalfPi};
      }
    } else {
      for (int i = 0; i < nl; ++i)
        for (int j = i + 1; j < nl; ++j) {
          std::vector<double> verts = {-kHalfPi, lattice(i), lattice(j),
                                       kHalfPi};
          double obj = w.objective(verts);
          if (obj < best_obj) {
            best_obj = obj;
            best_verts = verts;
          }
        }
      if (!best_verts.empty()) consider(best_verts);
    }
  } else {
    // Hierarchical warm start keeps the objective monotone in n_line.
    if (n_line % 2 == 0) {
      try {
        PWLFit parent = fit_pwl_lower(phase, n_line / 2, n_samples);
        std::vector<double> split;
        for (std::size_t k = 0; k + 1 < parent.vertices.size(); ++k) {
          split.push_back(parent.vertices[k]);
          split.push_back(0.5 * (parent.vertices[k] + parent.vertices[k + 1]));
        }
        split.push_back(parent.vertices.back());
        consider(split);
        // Exact embedding of the parent (duplicate vertices degenerate to
        // the parent's own chords).
        std::vector<double> embed = parent.vertices;
        while (static_cast<int>(embed.size()) < n_line + 1)
          embed.push_back(kHalfPi);
        std::sort(embed.begin(), embed.end());
        double obj = w.objective(embed);
        if (obj < best_obj) {
          best_obj = obj;
          best_verts = embed;
        }
      } catch (const SolverError&) {
        // Parent infeasible; proceed with fresh starts.
      }
    }
    std::vector<double> uniform(n_line + 1);
    for (int k = 0; k <= n_line; ++k)
      uniform[k] = -kHalfPi + std::numbers::pi * k / n_line;
    consider(uniform);
    std::vector<double> cheb(n_line + 1);
    for (int k = 0; k <= n_line; ++k)
      cheb[k] = -kHalfPi * std::cos(std::numbers::pi * k / n_line);
    std::sort(cheb.begin(), cheb.end());
    consider(cheb);
    Rng rng(1234567u + static_cast<std::uint64_t>(n_line));
    for (int s = 0; s < 6; ++s) {
      std::vector<double> verts = {-kHalfPi};
      for (int k = 1; k < n_line; ++k)
        verts.push_back(rng.uniform(-kHalfPi + 1e-4, kHalfPi - 1e-4));
      verts.push_back(kHalfPi);
      std::sort(verts.begin(), verts.end());
      consider(verts);
    }
  }

  if (!(best_obj < kInf))
    throw SolverError("fit_pwl_lower: no feasible vertex placement for phase " +
                      fmt17(phase) + " with n_line " + std::to_string(n_line));

  PWLFit fit;
  fit.phase = phase;
  fit.n_line = n_line;
  fit.vertices = best_verts;
  fit.objective = best_obj;
  if (!w.build_lines(best_verts, fit.lines))
    throw SolverError("fit_pwl_lower: internal line construction failure");
  return fit;
}

void write_fit_csv(const PWLFit& fit, const std::string& path, int n_points) {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot open " + path);
  out << "delta,cos_value,approx_value\n";
  for (int p = 0; p < n_points; ++p) {
    double d = -kHalfPi + std::numbers::pi * p / (n_points - 1);
    out << fmt17(d) << "," << fmt17(std::cos(d + fit.phase)) << ","
        << fmt17(pwl_value(fit, d)) << "\n";
  }
}

std::vector<std::vector<PWLFit>> fit_all_terms(
    const std::vector<LVRTConstraint>& constraints, int n_line, int n_samples,
    unsigned jobs) {
  std::vector<std::pair<int, int>> flat;
  for (std::size_t c = 0; c < constraints.size(); ++c)
    for (std::size_t t = 0; t < constraints[c].terms.size(); ++t)
      flat.emplace_back(static_cast<int>(c), static_cast<int>(t));
  std::vector<std::vector<PWLFit>> fits(constraints.size());
  for (std::size_t c = 0; c < constraints.size(); ++c)
    fits[c].resize(constraints[c].terms.size());
  parallel_for(flat.size(), jobs, [&](std::size_t idx) {
    auto [c, t] = flat[idx];
    fits[c][t] =
        fit_pwl_lower(constraints[c].terms[t].phase, n_line, n_samples);
  });
  return fits;
}

// ---------------------------------------------------------------------------
// Polytope assembly

std::string FacetTag::str() const {
  if (kind == Kind::Lvrt) {
    std::string s = "lvrt(bus " + std::to_string(bus) + ", combination " +
                    std::to_string(combo) + ", lines";
    for (int l : line_choice) s += " " + std::to_string(l);
    return s + ")";
  }
  return "pi-box(edge " + std::to_string(gen_k) + "-" + std::to_string(gen_j) +
         ", " + (sign > 0 ? "upper" : "lower") + ")";
}

Polytope assemble_acfr(const std::vector<LVRTConstraint>& constraints,
                       const std::vector<std::vector<PWLFit>>& fits,
                       const Vec& delta_star, const Vec& m,
                       const AcfrOptions& opts) {
  const int n = static_cast<int>(delta_star.size());
  if (fits.size() != constraints.size())
    throw ModelError("assemble_acfr: fits/constraints size mismatch");
  for (int k = 0; k < n; ++k)
    for (int j = k + 1; j < n; ++j)
      if (std::abs(delta_star(k) - delta_star(j)) >= kHalfPi)
        throw ModelError("assemble_acfr: |delta_kj*| >= pi/2 at SEP for pair " +
                         std::to_string(k) + "-" + std::to_string(j));

  std::vector<Vec> rows;
  std::vector<double> consts;
  std::vector<FacetTag> tags;

  for (std::size_t c = 0; c < constraints.size(); ++c) {
    const auto& con = constraints[c];
    std::vector<int> active;  // term indices with nonzero amplitude
    long combos = 1;
    for (std::size_t t = 0; t < con.terms.size(); ++t) {
      if (con.terms[t].amplitude < opts.amplitude_floor) continue;
      if (fits[c].size() <= t || fits[c][t].lines.empty())
        throw ModelError("assemble_acfr: missing fit for a cosine term");
      active.push_back(static_cast<int>(t));
      combos *= static_cast<long>(fits[c][t].lines.size());
    }
    if (combos > opts.facet_cap)
      std::fprintf(stderr,
                   "warning: bus %d yields %ld LVRT facets (cap %ld); "
                   "consider a smaller n_line\n",
                   con.rg_bus, combos, opts.facet_cap);
    std::vector<int> choice(active.size(), 0);
    for (long combo = 0; combo < combos; ++combo) {
      // Row: threshold - sum_t amp (a (d_ij* + x1_i - x1_j) + b) <= 0.
      Vec row = Vec::Zero(n);
      double cst = con.threshold;
      for (std::size_t u = 0; u < active.size(); ++u) {
        const auto& term = con.terms[active[u]];
        const auto& line = fits[c][active[u]].lines[choice[u]];
        double ds = delta_star(term.i) - delta_star(term.j);
        row(term.i) -= term.amplitude * line.a;
        row(term.j) += term.amplitude * line.a;
        cst -= term.amplitude * (line.a * ds + line.b);
      }
      rows.push_back(row);
      consts.push_back(cst);
      FacetTag tag;
      tag.kind = FacetTag::Kind::Lvrt;
      tag.bus = con.rg_bus;
      tag.combo = combo;
      tag.line_choice = choice;
      tags.push_back(std::move(tag));
      for (std::size_t u = 0; u < active.size(); ++u) {
        if (++choice[u] < static_cast<int>(fits[c][active[u]].lines.size()))
          break;
        choice[u] = 0;
      }
    }
  }

  for (int k = 0; k < n; ++k)
    for (int j = k + 1; j < n; ++j) {
      double ds = delta_star(k) - delta_star(j);
      for (int sign : {+1, -1}) {
        Vec row = Vec::Zero(n);
        row(k) = sign;
        row(j) = -sign;
        rows.push_back(row);
        consts.push_back(sign * ds - kHalfPi);
        FacetTag tag;
        tag.kind = FacetTag::Kind::PiBox;
        tag.gen_k = k;
        tag.gen_j = j;
        tag.sign = sign;
        tags.push_back(std::move(tag));
      }
    }

  Polytope poly;
  poly.l_ineq = Mat(static_cast<Eigen::Index>(rows.size()), n);
  poly.l_ineq_const = Vec(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    poly.l_ineq.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    poly.l_ineq_const(static_cast<Eigen::Index>(r)) = consts[r];
  }
  poly.l_eq = Mat::Zero(2, 2 * n);
  poly.l_eq.block(0, 0, 1, n) = m.transpose();
  poly.l_eq.block(1, n, 1, n) = m.transpose();
  poly.l_eq_const = Vec::Zero(2);
  poly.tags = std::move(tags);

  for (int r = 0; r < poly.n_facets(); ++r)
    if (!(poly.l_ineq_const(r) < 0.0))
      throw ModelError("assemble_acfr: SEP violates facet " +
                       poly.tags[r].str() + " (scenario rejected)");
  return poly;
}

FacetClassification classify_facet_point(const Polytope& poly, int i,
                                         const dynamics::COAState& x,
                                         double tol) {
  if (i < 0 || i >= poly.n_facets())
    throw ModelError("classify_facet_point: facet index out of range");
  Vec vals = poly.l_ineq * x.x1 + poly.l_ineq_const;
  if (std::abs(vals(i)) > 1e-8)
    throw ModelError("classify_facet_point: x is not on facet " +
                     std::to_string(i) + " (residual " + fmt17(vals(i)) + ")");
  for (int r = 0; r < poly.n_facets(); ++r)
    if (r != i && vals(r) > 1e-8)
      throw ModelError("classify_facet_point: x is outside facet " +
                       std::to_string(r));
  FacetClassification out;
  out.rate = poly.l_ineq.row(i).dot(x.x2);
  if (out.rate > tol)
    out.cls = FacetClass::FlowOut;
  else if (out.rate < -tol)
    out.cls = FacetClass::FlowIn;
  else
    out.cls = FacetClass::SemiSaddle;
  return out;
}

std::string Polytope::to_json() const {
  nlohmann::json j;
  j["n"] = n();
  j["facets"] = nlohmann::json::array();
  for (int r = 0; r < n_facets(); ++r) {
    nlohmann::json f;
    f["row"] = std::vector<double>(l_ineq.row(r).begin(), l_ineq.row(r).end());
    f["const"] = l_ineq_const(r);
    f["tag"] = tags[r].str();
    j["facets"].push_back(std::move(f));
  }
  j["eq_rows"] = nlohmann::json::array();
  for (int r = 0; r < l_eq.rows(); ++r) {
    nlohmann::json e;
    e["row"] = std::vector<double>(l_eq.row(r).begin(), l_eq.row(r).end());
    e["const"] = l_eq_const(r);
    j["eq_rows"].push_back(std::move(e));
  }
  return j.dump(2);
}

}  // namespace lvrtcsr::feasreg
