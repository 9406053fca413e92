#include "levisim/analytics.hpp"

#include <cmath>
#include <stdexcept>

#include "levisim/constants.hpp"

namespace levisim {

double free_expansion_variance(double nbar, double omega, double mass, double tau) {
  if (!(tau >= 0.0)) throw std::domain_error("free_expansion_variance: tau must be >= 0");
  const double zzp = zero_point_motion(mass, omega);
  return zzp * zzp * (2.0 * nbar + 1.0) * (1.0 + omega * omega * tau * tau);
}

double mean_energy_after_release(double e0, double force, double tau, double omega, double mass) {
  if (!(tau >= 0.0)) throw std::domain_error("mean_energy_after_release: tau must be >= 0");
  const double wt2 = omega * omega * tau * tau;
  return e0 * (1.0 + 0.5 * wt2) + force * force * tau * tau / (2.0 * mass) * (1.0 + 0.25 * wt2);
}

double recapture_variance(double sigma_z0_sq, double sigma_p0_sq, double tau, double t,
                          double omega, double mass) {
  if (!(t >= 0.0)) throw std::domain_error("recapture_variance: t must be >= 0");
  const double c = std::cos(omega * t);
  return sigma_z0_sq * (1.0 + omega * tau * std::sin(2.0 * omega * t)) +
         sigma_p0_sq * (tau * tau) / (mass * mass) * c * c;
}

double recapture_variance_max(double sigma_z0_sq, double sigma_p0_sq, double tau, double omega,
                              double mass) {
  // dense scan over one period, then golden-section refinement
  const double period = 2.0 * constants::pi / omega;
  const int n = 2048;
  double best_t = 0.0, best = -1.0;
  for (int i = 0; i <= n; ++i) {
    const double t = period * i / n;
    const double v = recapture_variance(sigma_z0_sq, sigma_p0_sq, tau, t, omega, mass);
    if (v > best) {
      best = v;
      best_t = t;
    }
  }
  double a = best_t - period / n, b = best_t + period / n;
  if (a < 0.0) a = 0.0;
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  for (int it = 0; it < 80; ++it) {
    const double f1 = recapture_variance(sigma_z0_sq, sigma_p0_sq, tau, x1, omega, mass);
    const double f2 = recapture_variance(sigma_z0_sq, sigma_p0_sq, tau, x2, omega, mass);
    if (f1 > f2) {
      b = x2;
      x2 = x1;
      x1 = b - gr * (b - a);
    } else {
      a = x1;
      x1 = x2;
      x2 = a + gr * (b - a);
    }
  }
  const double tm = 0.5 * (a + b);
  return std::max(best, recapture_variance(sigma_z0_sq, sigma_p0_sq, tau, tm, omega, mass));
}

EllipseAngle ellipse_angle(double omega, double tau) {
  if (!(tau >= 0.0)) throw std::domain_error("ellipse_angle: tau must be >= 0");
  const double wt = omega * tau;
  if (wt == 0.0) return {0.0, true};
  return {0.5 * std::atan2(2.0 * wt, wt * wt), false};
}

double recompression_time(double tau, double omega, int n) {
  if (n < 0) throw std::domain_error("recompression_time: n must be >= 0");
  return 2.0 * ellipse_angle(omega, tau).theta / omega + n * constants::pi / omega;
}

double displacement_from_voltage(double cnv, double dv, double tau, double mass) {
  if (!(tau >= 0.0)) throw std::domain_error("displacement_from_voltage: tau must be >= 0");
  return cnv * dv * tau * tau / (2.0 * mass);
}

ScanPrediction expected_scan_parabola(double cnv, double tau, double omega, double mass, double e0,
                                      double v_opt) {
  if (!(tau > 0.0)) throw std::domain_error("expected_scan_parabola: tau must be > 0");
  const double wt2 = omega * omega * tau * tau;
  ScanPrediction p;
  p.parabola_scale = cnv * cnv * tau * tau / (2.0 * mass) * (1.0 + 0.25 * wt2);
  p.v_opt = v_opt;
  p.offset = e0 * (1.0 + 0.5 * wt2);
  return p;
}

namespace {

Mat6 make_drift(double mass, const Vec3& omega_sq, const Vec3& gamma) {
  Mat6 a = Mat6::Zero();
  for (int i = 0; i < 3; ++i) {
    a(i, i + 3) = 1.0 / mass;
    a(i + 3, i) = -mass * omega_sq[i];
    a(i + 3, i + 3) = -gamma[i];
  }
  return a;
}

/// Closed-form flow matrix of one damped-oscillator axis (position, momentum).
Eigen::Matrix2d axis_flow(double mass, double omega, double gamma, double t) {
  Eigen::Matrix2d phi;
  const double half_g = 0.5 * gamma;
  const double disc = omega * omega - half_g * half_g;
  const double decay = std::exp(-half_g * t);
  if (omega == 0.0) {
    // free flight with damping: x += p (1 - e^{-gt})/(m g)
    const double gt = gamma * t;
    double drift_term;
    if (gt < 1e-6) {
      drift_term = t * (1.0 - 0.5 * gt + gt * gt / 6.0);
    } else {
      drift_term = (1.0 - std::exp(-gt)) / gamma;
    }
    phi << 1.0, drift_term / mass, 0.0, std::exp(-gt);
    return phi;
  }
  if (disc > 0.0) {
    const double wd = std::sqrt(disc);
    const double c = std::cos(wd * t), s = std::sin(wd * t);
    phi(0, 0) = decay * (c + half_g / wd * s);
    phi(0, 1) = decay * s / (mass * wd);
    phi(1, 0) = -decay * mass * omega * omega / wd * s;
    phi(1, 1) = decay * (c - half_g / wd * s);
  } else if (disc < 0.0) {
    const double wd = std::sqrt(-disc);
    const double c = std::cosh(wd * t), s = std::sinh(wd * t);
    phi(0, 0) = decay * (c + half_g / wd * s);
    phi(0, 1) = decay * s / (mass * wd);
    phi(1, 0) = -decay * mass * omega * omega / wd * s;
    phi(1, 1) = decay * (c - half_g / wd * s);
  } else {
    phi(0, 0) = decay * (1.0 + half_g * t);
    phi(0, 1) = decay * t / mass;
    phi(1, 0) = -decay * mass * omega * omega * t;
    phi(1, 1) = decay * (1.0 - half_g * t);
  }
  return phi;
}

}  // namespace

SegmentModel SegmentModel::free_flight(double duration, const Particle& particle,
                                       const Environment& env) {
  SegmentModel seg;
  seg.duration = duration;
  seg.label = SegmentLabel::kFree;
  seg.canonical = true;
  seg.mass = particle.mass;
  seg.gamma = Vec3::Constant(env.gamma);
  seg.drift = make_drift(particle.mass, Vec3::Zero(), seg.gamma);
  const double dp = 2.0 * particle.mass * env.gamma * constants::boltzmann * env.gas_temperature;
  for (int i = 0; i < 3; ++i) seg.diffusion(i + 3, i + 3) = dp;
  seg.rate_scale = std::max(env.gamma, 1.0 / std::max(duration, 1e-12));
  return seg;
}

SegmentModel SegmentModel::trapped(double duration, const Particle& particle,
                                   const TrapField& trap, const Environment& env,
                                   const Vec3& extra_damping) {
  SegmentModel seg;
  seg.duration = duration;
  seg.label = SegmentLabel::kTrapped;
  seg.canonical = true;
  seg.mass = particle.mass;
  seg.omega = trap.omega;
  seg.gamma = Vec3::Constant(env.gamma) + extra_damping;
  seg.drift = make_drift(particle.mass, trap.omega.cwiseProduct(trap.omega), seg.gamma);
  const double dp_gas =
      2.0 * particle.mass * env.gamma * constants::boltzmann * env.gas_temperature;
  for (int i = 0; i < 3; ++i) seg.diffusion(i + 3, i + 3) = dp_gas + env.recoil_dp[i];
  seg.rate_scale = std::max(trap.omega.maxCoeff(), seg.gamma.maxCoeff());
  return seg;
}

CovarianceState lyapunov_propagate(const CovarianceState& initial,
                                   std::span<const SegmentModel> segments) {
  Mat6 sigma = initial.sigma();
  for (const auto& seg : segments) {
    if (!(seg.duration >= 0.0)) throw std::domain_error("lyapunov_propagate: negative duration");
    if (seg.duration == 0.0) continue;
    const bool diffusion_free = seg.diffusion.cwiseAbs().maxCoeff() == 0.0;
    if (diffusion_free && seg.drift.cwiseAbs().maxCoeff() == 0.0) continue;  // static segment
    if (diffusion_free && seg.canonical) {
      Mat6 phi = Mat6::Zero();
      for (int i = 0; i < 3; ++i) {
        const double w = seg.label == SegmentLabel::kTrapped ? seg.omega[i] : 0.0;
        const Eigen::Matrix2d p = axis_flow(seg.mass, w, seg.gamma[i], seg.duration);
        phi(i, i) = p(0, 0);
        phi(i, i + 3) = p(0, 1);
        phi(i + 3, i) = p(1, 0);
        phi(i + 3, i + 3) = p(1, 1);
      }
      sigma = phi * sigma * phi.transpose();
    } else {
      double rate = seg.rate_scale;
      if (!(rate > 0.0)) {
        // infer the dynamical rate from the drift blocks
        const double a_rp = seg.drift.block(0, 3, 3, 3).cwiseAbs().maxCoeff();
        const double a_pr = seg.drift.block(3, 0, 3, 3).cwiseAbs().maxCoeff();
        const double a_pp = seg.drift.block(3, 3, 3, 3).cwiseAbs().maxCoeff();
        rate = std::sqrt(a_rp * a_pr) + a_pp;
        if (!(rate > 0.0)) rate = 1.0 / seg.duration;
      }
      const double max_step = 1.0 / (50.0 * rate);
      const int n = std::max(1, static_cast<int>(std::ceil(seg.duration / max_step)));
      const double h = seg.duration / n;
      const Mat6& a = seg.drift;
      const auto rhs = [&](const Mat6& s) -> Mat6 {
        return a * s + s * a.transpose() + seg.diffusion;
      };
      for (int k = 0; k < n; ++k) {
        const Mat6 k1 = rhs(sigma);
        const Mat6 k2 = rhs(sigma + 0.5 * h * k1);
        const Mat6 k3 = rhs(sigma + 0.5 * h * k2);
        const Mat6 k4 = rhs(sigma + h * k3);
        sigma += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      sigma = 0.5 * (sigma + sigma.transpose());
    }
  }
  return CovarianceState(sigma);  // construction re-checks symmetry and PSD
}

}  // namespace levisim
