#include "mtj/trf.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "mtj/error.hpp"

namespace mtj {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

bool in_bounds(const VectorXd& x, const VectorXd& lb, const VectorXd& ub) {
  return ((x.array() >= lb.array()) && (x.array() <= ub.array())).all();
}

/// Coleman-Li scaling: distance to the bound the anti-gradient points at.
void cl_scaling(const VectorXd& x, const VectorXd& g, const VectorXd& lb, const VectorXd& ub, VectorXd& v,
                VectorXd& dv) {
  const auto n = x.size();
  v = VectorXd::Ones(n);
  dv = VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (g[i] < 0 && std::isfinite(ub[i])) {
      v[i] = ub[i] - x[i];
      dv[i] = -1;
    } else if (g[i] > 0 && std::isfinite(lb[i])) {
      v[i] = x[i] - lb[i];
      dv[i] = 1;
    }
  }
}

/// Smallest step t >= 0 along s that reaches a bound, and which components hit it.
std::pair<double, Eigen::VectorXi> step_to_bound(const VectorXd& x, const VectorXd& s, const VectorXd& lb,
                                                 const VectorXd& ub) {
  const auto n = x.size();
  VectorXd steps = VectorXd::Constant(n, kInf);
  for (Eigen::Index i = 0; i < n; ++i)
    if (s[i] != 0) steps[i] = std::max((lb[i] - x[i]) / s[i], (ub[i] - x[i]) / s[i]);
  const double t = steps.minCoeff();
  Eigen::VectorXi hits = Eigen::VectorXi::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (steps[i] == t) hits[i] = s[i] > 0 ? 1 : (s[i] < 0 ? -1 : 0);
  return {t, hits};
}

/// Roots t1 <= t2 of |x + t s| = delta.
std::pair<double, double> intersect_trust_region(const VectorXd& x, const VectorXd& s, double delta) {
  const double a = s.squaredNorm();
  if (a == 0) throw NumericError("trf: zero direction in trust-region intersection");
  const double b = x.dot(s);
  const double c = x.squaredNorm() - delta * delta;
  if (c > 0) throw NumericError("trf: point outside the trust region");
  const double d = std::sqrt(b * b - a * c);
  const double q = -(b + std::copysign(d, b));
  double t1 = q / a;
  double t2 = c / q;
  if (t1 > t2) std::swap(t1, t2);
  return {t1, t2};
}

/// 0.5 * |J s|^2 + 0.5 * s' diag s + g' s
double evaluate_quadratic(const MatrixXd& J, const VectorXd& g, const VectorXd& s, const VectorXd& diag) {
  const double q = (J * s).squaredNorm() + s.dot(diag.cwiseProduct(s));
  return 0.5 * q + g.dot(s);
}

struct Quad1d {
  double a, b, c;
};

/// Coefficients of f(t) = a t^2 + b t + c for the quadratic model along s0 + t s.
Quad1d quadratic_1d(const MatrixXd& J, const VectorXd& g, const VectorXd& s, const VectorXd& diag,
                    const VectorXd* s0) {
  const VectorXd v = J * s;
  double a = 0.5 * (v.squaredNorm() + s.dot(diag.cwiseProduct(s)));
  double b = g.dot(s);
  double c = 0.0;
  if (s0) {
    const VectorXd u = J * *s0;
    b += u.dot(v) + s0->dot(diag.cwiseProduct(s));
    c = 0.5 * u.squaredNorm() + g.dot(*s0) + 0.5 * s0->dot(diag.cwiseProduct(*s0));
  }
  return {a, b, c};
}

std::pair<double, double> minimize_quadratic_1d(const Quad1d& q, double lo, double hi) {
  double best_t = lo;
  double best_y = lo * (q.a * lo + q.b) + q.c;
  auto consider = [&](double t) {
    const double y = t * (q.a * t + q.b) + q.c;
    if (y < best_y) {
      best_y = y;
      best_t = t;
    }
  };
  consider(hi);
  if (q.a != 0) {
    const double ext = -0.5 * q.b / q.a;
    if (lo < ext && ext < hi) consider(ext);
  }
  return {best_t, best_y};
}

/// Exact solution of min |J p + f| s.t. |p| <= delta given the SVD of J
/// (uf = U' f), via Newton iterations on the secular equation (More 1983).
VectorXd solve_trust_region(const VectorXd& uf, const VectorXd& s, const MatrixXd& V, double delta, double& alpha,
                            Eigen::Index m) {
  const auto n = s.size();
  const VectorXd suf = s.cwiseProduct(uf);
  const double threshold = kEps * static_cast<double>(m) * s[0];
  const bool full_rank = s[n - 1] > threshold;
  if (full_rank) {
    const VectorXd p = -V * uf.cwiseQuotient(s);
    if (p.norm() <= delta) {
      alpha = 0.0;
      return p;
    }
  }
  auto phi_and_derivative = [&](double a, double& phi, double& dphi) {
    const VectorXd denom = s.array().square() + a;
    const double p_norm = suf.cwiseQuotient(denom).norm();
    phi = p_norm - delta;
    dphi = -(suf.array().square() / denom.array().cube()).sum() / p_norm;
  };
  double upper = suf.norm() / delta;
  double lower = 0.0;
  if (full_rank) {
    double phi, dphi;
    phi_and_derivative(0.0, phi, dphi);
    lower = -phi / dphi;
  }
  if (!full_rank && alpha == 0.0) alpha = std::max(0.001 * upper, std::sqrt(lower * upper));
  for (int it = 0; it < 10; ++it) {
    if (alpha < lower || alpha > upper) alpha = std::max(0.001 * upper, std::sqrt(lower * upper));
    double phi, dphi;
    phi_and_derivative(alpha, phi, dphi);
    if (phi < 0) upper = alpha;
    const double ratio = phi / dphi;
    lower = std::max(lower, alpha - ratio);
    alpha -= (phi + delta) * ratio / delta;
    if (std::abs(phi) < 0.01 * delta) break;
  }
  VectorXd p = -V * suf.cwiseQuotient((s.array().square() + alpha).matrix());
  p *= delta / p.norm();
  return p;
}

struct Step {
  VectorXd step;
  VectorXd step_h;
  double predicted_reduction;
};

/// Chooses between the reflected, truncated and Cauchy steps.
Step select_step(const VectorXd& x, const MatrixXd& J_h, const VectorXd& diag_h, const VectorXd& g_h, VectorXd p,
                 VectorXd p_h, const VectorXd& d, double delta, const VectorXd& lb, const VectorXd& ub,
                 double theta) {
  if (in_bounds(x + p, lb, ub)) return {p, p_h, -evaluate_quadratic(J_h, g_h, p_h, diag_h)};

  auto [p_stride, hits] = step_to_bound(x, p, lb, ub);
  VectorXd r_h = p_h;
  for (Eigen::Index i = 0; i < r_h.size(); ++i)
    if (hits[i] != 0) r_h[i] = -r_h[i];
  VectorXd r = d.cwiseProduct(r_h);

  p *= p_stride;
  p_h *= p_stride;
  const VectorXd x_on_bound = x + p;

  const double to_tr = intersect_trust_region(p_h, r_h, delta).second;
  const double to_bound = step_to_bound(x_on_bound, r, lb, ub).first;
  double r_stride = std::min(to_bound, to_tr);
  double r_lo = 0.0;
  double r_hi = -1.0;
  if (r_stride > 0) {
    r_lo = (1 - theta) * p_stride / r_stride;
    r_hi = r_stride == to_bound ? theta * to_bound : to_tr;
  }
  double r_value = kInf;
  if (r_lo <= r_hi) {
    const Quad1d q = quadratic_1d(J_h, g_h, r_h, diag_h, &p_h);
    auto [t, value] = minimize_quadratic_1d(q, r_lo, r_hi);
    r_value = value;
    r_h = r_h * t + p_h;
    r = d.cwiseProduct(r_h);
  }

  p *= theta;
  p_h *= theta;
  const double p_value = evaluate_quadratic(J_h, g_h, p_h, diag_h);

  VectorXd ag_h = -g_h;
  VectorXd ag = d.cwiseProduct(ag_h);
  const double ag_to_tr = delta / ag_h.norm();
  const double ag_to_bound = step_to_bound(x, ag, lb, ub).first;
  const double ag_limit = ag_to_bound < ag_to_tr ? theta * ag_to_bound : ag_to_tr;
  const Quad1d q = quadratic_1d(J_h, g_h, ag_h, diag_h, nullptr);
  auto [ag_stride, ag_value] = minimize_quadratic_1d(q, 0.0, ag_limit);
  ag_h *= ag_stride;
  ag *= ag_stride;

  if (p_value < r_value && p_value < ag_value) return {p, p_h, -p_value};
  if (r_value < p_value && r_value < ag_value) return {r, r_h, -r_value};
  return {ag, ag_h, -ag_value};
}

VectorXd nudge_inside(VectorXd x, const VectorXd& lb, const VectorXd& ub) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] <= lb[i])
      x[i] = std::nextafter(lb[i], ub[i]);
    else if (x[i] >= ub[i])
      x[i] = std::nextafter(ub[i], lb[i]);
    if (x[i] < lb[i] || x[i] > ub[i]) x[i] = 0.5 * (lb[i] + ub[i]);
  }
  return x;
}

}  // namespace

VectorXd make_strictly_feasible(const VectorXd& x, const VectorXd& lb, const VectorXd& ub, double rstep) {
  if (rstep == 0) return nudge_inside(x, lb, ub);
  VectorXd out = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double lo_gap = rstep * std::max(1.0, std::abs(lb[i]));
    const double hi_gap = rstep * std::max(1.0, std::abs(ub[i]));
    if (std::isfinite(lb[i]) && x[i] <= lb[i] + lo_gap)
      out[i] = lb[i] + lo_gap;
    else if (std::isfinite(ub[i]) && x[i] >= ub[i] - hi_gap)
      out[i] = ub[i] - hi_gap;
    if (out[i] < lb[i] || out[i] > ub[i]) out[i] = 0.5 * (lb[i] + ub[i]);
  }
  return out;
}

TrfResult solve_trf(const LsqProblem& problem, VectorXd x0, const VectorXd& lb, const VectorXd& ub,
                    const TrfOptions& options) {
  const auto n = x0.size();
  if (lb.size() != n || ub.size() != n) throw UsageError("trf: bound dimensions differ from x0");
  if (!(lb.array() < ub.array()).all()) throw UsageError("trf: each lower bound must be below its upper bound");
  if (!x0.allFinite()) throw UsageError("trf: non-finite starting point");
  if (!in_bounds(x0, lb, ub)) throw UsageError("trf: starting point outside the bounds");

  TrfResult out;
  VectorXd x = make_strictly_feasible(x0, lb, ub);
  VectorXd f = problem.residual(x);
  out.evaluations = 1;
  if (!f.allFinite()) throw NumericError("trf: non-finite residual at the starting point");
  const auto m = f.size();
  MatrixXd J = problem.jacobian(x);
  double cost = 0.5 * f.squaredNorm();
  out.initial_cost = cost;
  VectorXd g = J.transpose() * f;

  VectorXd v, dv;
  cl_scaling(x, g, lb, ub, v, dv);
  double delta = x.cwiseQuotient(v.cwiseSqrt()).norm();
  if (delta == 0) delta = 1.0;
  double alpha = 0.0;

  MatrixXd J_aug(m + n, n);
  VectorXd f_aug = VectorXd::Zero(m + n);

  while (true) {
    cl_scaling(x, g, lb, ub, v, dv);
    const double g_norm = g.cwiseProduct(v).cwiseAbs().maxCoeff();
    if (g_norm < options.gtol) {
      out.converged = true;
      out.reason = TrfResult::Reason::gradient;
      break;
    }
    if (out.iterations >= options.max_iterations || out.evaluations >= options.max_evaluations) {
      out.reason = TrfResult::Reason::max_iterations;
      break;
    }
    const VectorXd d = v.cwiseSqrt();
    const VectorXd diag_h = g.cwiseProduct(dv);
    const VectorXd g_h = d.cwiseProduct(g);

    J_aug.topRows(m) = J * d.asDiagonal();
    J_aug.bottomRows(n) = diag_h.cwiseSqrt().asDiagonal();
    f_aug.head(m) = f;
    const MatrixXd J_h = J_aug.topRows(m);

    // Thin SVD through a QR of the tall augmented matrix.
    Eigen::HouseholderQR<MatrixXd> qr(J_aug);
    const MatrixXd R = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    const VectorXd qtf = (qr.householderQ().transpose() * f_aug).head(n);
    Eigen::JacobiSVD<MatrixXd> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const VectorXd s = svd.singularValues();
    const MatrixXd V = svd.matrixV();
    const VectorXd uf = svd.matrixU().transpose() * qtf;

    const double theta = std::max(0.995, 1 - g_norm);
    double actual_reduction = -1.0;
    VectorXd x_new, f_new;
    double cost_new = cost;
    bool stop_on_step = false;
    while (actual_reduction <= 0 && out.evaluations < options.max_evaluations) {
      const VectorXd p_h = solve_trust_region(uf, s, V, delta, alpha, m + n);
      const VectorXd p = d.cwiseProduct(p_h);
      Step st = select_step(x, J_h, diag_h, g_h, p, p_h, d, delta, lb, ub, theta);
      x_new = nudge_inside(x + st.step, lb, ub);
      f_new = problem.residual(x_new);
      ++out.evaluations;
      const double step_h_norm = st.step_h.norm();
      if (!f_new.allFinite()) {
        delta = 0.25 * step_h_norm;
        continue;
      }
      cost_new = 0.5 * f_new.squaredNorm();
      actual_reduction = cost - cost_new;

      double ratio = 0.0;
      if (st.predicted_reduction > 0)
        ratio = actual_reduction / st.predicted_reduction;
      else if (st.predicted_reduction == 0 && actual_reduction == 0)
        ratio = 1.0;
      double delta_new = delta;
      if (ratio < 0.25)
        delta_new = 0.25 * step_h_norm;
      else if (ratio > 0.75 && step_h_norm > 0.95 * delta)
        delta_new = 2.0 * delta;

      if (st.step.norm() < options.xtol) {
        stop_on_step = true;
        break;
      }
      if (delta_new == 0) {
        stop_on_step = true;
        break;
      }
      alpha *= delta / delta_new;
      delta = delta_new;
    }
    if (actual_reduction > 0) {
      x = x_new;
      f = f_new;
      cost = cost_new;
      J = problem.jacobian(x);
      g = J.transpose() * f;
    }
    ++out.iterations;
    if (stop_on_step) {
      out.converged = true;
      out.reason = TrfResult::Reason::step;
      break;
    }
  }
  out.x = x;
  out.residual = f;
  out.cost = cost;
  return out;
}

}  // namespace mtj
