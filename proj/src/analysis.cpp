#include "levisim/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "levisim/constants.hpp"

namespace levisim {

namespace {

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance_of(std::span<const double> x) {
  // shift by the first element: exact zero for constant traces and better
  // conditioned for traces with a large DC offset
  const double ref = x.front();
  double s1 = 0.0;
  for (double v : x) s1 += v - ref;
  const double m = s1 / static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x) {
    const double d = (v - ref) - m;
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

}  // namespace

double windowed_variance(std::span<const double> trace, double dt, double window) {
  const auto n = static_cast<std::size_t>(std::llround(window / dt));
  if (n == 0 || n > trace.size()) throw std::domain_error("windowed_variance: bad window");
  return variance_of(trace.subspan(0, n));
}

std::vector<double> moving_variance(std::span<const double> trace, double dt, double window) {
  const auto w = static_cast<std::size_t>(std::llround(window / dt));
  if (w == 0 || w > trace.size()) throw std::domain_error("moving_variance: bad window");
  const std::size_t n = trace.size();
  // prefix sums over the first-element-shifted trace for O(n) evaluation
  const double ref = trace.front();
  std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = trace[i] - ref;
    s1[i + 1] = s1[i] + d;
    s2[i + 1] = s2[i] + d * d;
  }
  std::vector<double> out(n);
  const std::size_t half = w / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i > half ? i - half : 0;
    const std::size_t hi = std::min(n, lo + w) ;
    const std::size_t m = hi - lo;
    const double mu = (s1[hi] - s1[lo]) / m;
    out[i] = (s2[hi] - s2[lo]) / m - mu * mu;
    if (out[i] < 0.0) out[i] = 0.0;
  }
  return out;
}

namespace {

struct SineSolve {
  double sse;
  Eigen::Vector4d coeff;  // (a cos phi, a sin phi, b, c)
};

SineSolve solve_sine_linear(std::span<const double> y, double dt, double omega) {
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::MatrixXd design(n, 4);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    design(i, 0) = std::sin(omega * t);
    design(i, 1) = std::cos(omega * t);
    design(i, 2) = t;
    design(i, 3) = 1.0;
    rhs(i) = y[static_cast<std::size_t>(i)];
  }
  const Eigen::Vector4d coeff = design.colPivHouseholderQr().solve(rhs);
  const double sse = (design * coeff - rhs).squaredNorm();
  return {sse, coeff};
}

}  // namespace

SineFit fit_sine(std::span<const double> trace, double dt, double omega_guess, double refine_frac) {
  if (trace.size() < 8) throw std::domain_error("fit_sine: too few samples");
  const double span = static_cast<double>(trace.size() - 1) * dt;
  if (span * omega_guess < 2.0 * 2.0 * constants::pi)
    throw std::domain_error("fit_sine: segment shorter than two periods");

  double a = omega_guess * (1.0 - refine_frac);
  double b = omega_guess * (1.0 + refine_frac);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = solve_sine_linear(trace, dt, x1).sse;
  double f2 = solve_sine_linear(trace, dt, x2).sse;
  for (int it = 0; it < 60; ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = solve_sine_linear(trace, dt, x1).sse;
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = solve_sine_linear(trace, dt, x2).sse;
    }
  }
  const double omega = 0.5 * (a + b);
  const auto sol = solve_sine_linear(trace, dt, omega);

  SineFit fit;
  fit.omega = omega;
  fit.amplitude = std::hypot(sol.coeff(0), sol.coeff(1));
  fit.phase = std::atan2(sol.coeff(1), sol.coeff(0));
  if (fit.phase <= -constants::pi) fit.phase += 2.0 * constants::pi;
  fit.drift = sol.coeff(2);
  fit.offset = sol.coeff(3);
  fit.residual_rms = std::sqrt(sol.sse / static_cast<double>(trace.size()));
  // flag fits pinned at the search boundary (frequency not actually located)
  const double edge = refine_frac * omega_guess;
  fit.converged = std::abs(omega - omega_guess) < 0.98 * edge || refine_frac == 0.0;
  return fit;
}

ParabolaFit fit_parabola(std::span<const double> voltages, std::span<const double> energies) {
  if (voltages.size() != energies.size()) throw std::domain_error("fit_parabola: size mismatch");
  std::vector<double> distinct(voltages.begin(), voltages.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 4) throw std::domain_error("fit_parabola: need >= 4 distinct voltages");

  const auto n = static_cast<Eigen::Index>(voltages.size());
  // center the abscissa for conditioning
  const double v0 = mean_of(voltages);
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = voltages[static_cast<std::size_t>(i)] - v0;
    design(i, 0) = v * v;
    design(i, 1) = v;
    design(i, 2) = 1.0;
    rhs(i) = energies[static_cast<std::size_t>(i)];
  }
  const Eigen::Vector3d beta = design.colPivHouseholderQr().solve(rhs);
  const double dof = static_cast<double>(n) - 3.0;
  const double sse = (design * beta - rhs).squaredNorm();
  const double s2 = dof > 0 ? sse / dof : 0.0;
  const Eigen::Matrix3d cov = s2 * (design.transpose() * design).inverse();

  ParabolaFit fit;
  fit.scale = beta(0);
  fit.has_minimum = beta(0) > 0.0;
  const double vmin_centered = fit.has_minimum ? -beta(1) / (2.0 * beta(0)) : 0.0;
  fit.v_opt = vmin_centered + v0;
  fit.offset = beta(2) - beta(1) * beta(1) / (4.0 * beta(0));

  // delta-method 95% intervals from the regression covariance
  constexpr double z95 = 1.959963984540054;
  fit.scale_ci = z95 * std::sqrt(std::max(0.0, cov(0, 0)));
  if (fit.has_minimum) {
    Eigen::Vector3d g;  // d v_opt / d beta
    g << beta(1) / (2.0 * beta(0) * beta(0)), -1.0 / (2.0 * beta(0)), 0.0;
    fit.v_opt_ci = z95 * std::sqrt(std::max(0.0, double(g.transpose() * cov * g)));
    Eigen::Vector3d gb;
    gb << beta(1) * beta(1) / (4.0 * beta(0) * beta(0)), -beta(1) / (2.0 * beta(0)), 1.0;
    fit.offset_ci = z95 * std::sqrt(std::max(0.0, double(gb.transpose() * cov * gb)));
  }
  return fit;
}

namespace {

/// Generic 4-parameter Levenberg-Marquardt.
template <typename Model, typename Jacobian>
bool levenberg_marquardt(std::span<const double> x, std::span<const double> y,
                         Eigen::Vector4d& params, Model model, Jacobian jacobian) {
  const auto n = static_cast<Eigen::Index>(x.size());
  double lambda = 1e-3;
  double sse = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = y[static_cast<std::size_t>(i)] - model(params, x[static_cast<std::size_t>(i)]);
    sse += r * r;
  }
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
    Eigen::Vector4d jtr = Eigen::Vector4d::Zero();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double xi = x[static_cast<std::size_t>(i)];
      const Eigen::Vector4d j = jacobian(params, xi);
      const double r = y[static_cast<std::size_t>(i)] - model(params, xi);
      jtj += j * j.transpose();
      jtr += j * r;
    }
    Eigen::Matrix4d damped = jtj;
    damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-30);
    const Eigen::Vector4d step = damped.ldlt().solve(jtr);
    if (!step.allFinite()) return false;
    const Eigen::Vector4d trial = params + step;
    double trial_sse = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r =
          y[static_cast<std::size_t>(i)] - model(trial, x[static_cast<std::size_t>(i)]);
      trial_sse += r * r;
    }
    if (trial_sse < sse) {
      const bool done = (sse - trial_sse) < 1e-14 * (sse + 1e-300);
      params = trial;
      sse = trial_sse;
      lambda = std::max(lambda * 0.3, 1e-12);
      if (done) return true;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) return true;  // stuck but stationary
    }
  }
  return true;
}

}  // namespace

GaussianFit fit_gaussian(std::span<const double> voltages, std::span<const double> energies) {
  if (voltages.size() != energies.size()) throw std::domain_error("fit_gaussian: size mismatch");
  if (voltages.size() < 5) throw std::domain_error("fit_gaussian: need >= 5 points");

  const auto [mn_it, mx_it] = std::minmax_element(energies.begin(), energies.end());
  const double lo = *mn_it, hi = *mx_it;
  double center, width;
  // seed from the parabola when it has a minimum (the scan's small-signal limit)
  ParabolaFit par;
  try {
    par = fit_parabola(voltages, energies);
  } catch (const std::domain_error&) {
    par.has_minimum = false;
  }
  const double amp0 = lo - hi;  // negative dip on top of the saturated level
  if (par.has_minimum && par.scale > 0.0) {
    center = par.v_opt;
    width = std::sqrt(std::max(std::abs(amp0), 1e-300) / (2.0 * par.scale));
  } else {
    center = voltages[static_cast<std::size_t>(
        std::distance(energies.begin(), std::min_element(energies.begin(), energies.end())))];
    const auto [vmin, vmax] = std::minmax_element(voltages.begin(), voltages.end());
    width = (*vmax - *vmin) / 4.0;
  }

  Eigen::Vector4d p(amp0, center, width, hi);
  const auto model = [](const Eigen::Vector4d& q, double v) {
    const double u = (v - q(1)) / q(2);
    return q(0) * std::exp(-0.5 * u * u) + q(3);
  };
  const auto jac = [](const Eigen::Vector4d& q, double v) {
    const double u = (v - q(1)) / q(2);
    const double e = std::exp(-0.5 * u * u);
    Eigen::Vector4d j;
    j << e, q(0) * e * u / q(2), q(0) * e * u * u / q(2), 1.0;
    return j;
  };
  GaussianFit fit;
  fit.converged = levenberg_marquardt(voltages, energies, p, model, jac);
  fit.amplitude = p(0);
  fit.center = p(1);
  fit.width = std::abs(p(2));
  fit.offset = p(3);
  if (!std::isfinite(fit.center) || !std::isfinite(fit.width)) fit.converged = false;
  return fit;
}

ExponentialDriftFit fit_exponential_drift(std::span<const double> times,
                                          std::span<const double> values) {
  if (times.size() != values.size()) throw std::domain_error("fit_exponential_drift: size mismatch");
  const std::size_t n = times.size();
  if (n < 4) throw std::domain_error("fit_exponential_drift: need >= 4 points");

  // log-linear initialization against an asymptote guessed from the tail
  const double tail = values[n - 1];
  const double head = values[0];
  double vf0 = tail + 0.05 * (tail - head);
  double sxx = 0.0, sxy = 0.0, sx = 0.0, sy = 0.0;
  std::size_t m = 0;
  const double sign = head >= tail ? 1.0 : -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = sign * (values[i] - vf0);
    if (d <= 0.0) continue;
    const double ly = std::log(d);
    sx += times[i];
    sy += ly;
    sxx += times[i] * times[i];
    sxy += times[i] * ly;
    ++m;
  }
  double rc0, v00;
  if (m >= 2 && (m * sxx - sx * sx) > 0.0) {
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    const double inter = (sy - slope * sx) / m;
    rc0 = slope < 0.0 ? -1.0 / slope : (times[n - 1] - times[0]);
    v00 = sign * std::exp(inter);
  } else {
    rc0 = std::max(times[n - 1] - times[0], 1e-12);
    v00 = head - tail;
  }

  Eigen::Vector4d p(vf0, v00, rc0, 0.0);  // 4th parameter unused
  const auto model = [](const Eigen::Vector4d& q, double t) {
    return q(0) + q(1) * std::exp(-t / q(2));
  };
  const auto jac = [](const Eigen::Vector4d& q, double t) {
    const double e = std::exp(-t / q(2));
    Eigen::Vector4d j;
    j << 1.0, e, q(1) * e * t / (q(2) * q(2)), 0.0;
    return j;
  };
  ExponentialDriftFit fit;
  fit.converged = levenberg_marquardt(times, values, p, model, jac);
  fit.v_f = p(0);
  fit.v_0 = p(1);
  fit.rc = p(2);
  if (!std::isfinite(fit.rc) || fit.rc <= 0.0) fit.converged = false;
  return fit;
}

TauScalingFit fit_tau_scaling(std::span<const double> taus, std::span<const double> scales,
                              std::span<const double> sigmas) {
  if (taus.size() != scales.size()) throw std::domain_error("fit_tau_scaling: size mismatch");
  std::vector<double> distinct(taus.begin(), taus.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) throw std::domain_error("fit_tau_scaling: need >= 3 distinct taus");

  const auto n = static_cast<Eigen::Index>(taus.size());
  Eigen::MatrixXd design(n, 2);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double w = sigmas.empty() ? 1.0 : 1.0 / std::max(sigmas[k], 1e-300);
    design(i, 0) = w * taus[k] * taus[k];
    design(i, 1) = w * taus[k] * taus[k] * taus[k] * taus[k];
    rhs(i) = w * scales[k];
  }
  const Eigen::Vector2d beta = design.colPivHouseholderQr().solve(rhs);
  return {beta(0), beta(1)};
}

namespace {

/// Iterative radix-2 FFT, in place; n must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * constants::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace

Psd psd_welch(std::span<const double> trace, double sample_rate, std::size_t segment_length,
              double overlap) {
  // round the segment length down to a power of two
  std::size_t nseg = 1;
  while (nseg * 2 <= segment_length) nseg *= 2;
  if (nseg < 8) throw std::domain_error("psd_welch: segment too short");
  if (nseg > trace.size()) throw std::domain_error("psd_welch: segment exceeds trace");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw std::domain_error("psd_welch: bad overlap");

  const double mean = mean_of(trace);
  std::vector<double> window(nseg);
  double wpow = 0.0;
  for (std::size_t i = 0; i < nseg; ++i) {
    window[i] = 0.5 * (1.0 - std::cos(2.0 * constants::pi * i / (nseg - 1)));
    wpow += window[i] * window[i];
  }

  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(nseg * (1.0 - overlap)));
  Psd psd;
  psd.df = sample_rate / static_cast<double>(nseg);
  const std::size_t nbins = nseg / 2 + 1;
  psd.power.assign(nbins, 0.0);
  psd.frequency.resize(nbins);
  for (std::size_t k = 0; k < nbins; ++k) psd.frequency[k] = psd.df * static_cast<double>(k);

  std::size_t count = 0;
  std::vector<std::complex<double>> buf(nseg);
  for (std::size_t start = 0; start + nseg <= trace.size(); start += hop) {
    for (std::size_t i = 0; i < nseg; ++i)
      buf[i] = std::complex<double>((trace[start + i] - mean) * window[i], 0.0);
    fft_radix2(buf);
    for (std::size_t k = 0; k < nbins; ++k) {
      // one-sided density: sum over bins * df = windowed variance
      double p = std::norm(buf[k]) / (wpow * sample_rate);
      if (k != 0 && k != nseg / 2) p *= 2.0;
      psd.power[k] += p;
    }
    ++count;
  }
  if (count == 0) throw std::domain_error("psd_welch: no segments");
  for (auto& p : psd.power) p /= static_cast<double>(count);
  return psd;
}

double integrate_peak(const Psd& psd, double f_lo, double f_hi) {
  if (!(f_lo < f_hi)) throw std::domain_error("integrate_peak: empty band");
  if (f_hi > psd.frequency.back() + 0.5 * psd.df)
    throw std::domain_error("integrate_peak: band beyond Nyquist");
  std::vector<double> in_band;
  std::size_t lo = psd.frequency.size(), hi = 0;
  for (std::size_t k = 0; k < psd.frequency.size(); ++k) {
    if (psd.frequency[k] >= f_lo && psd.frequency[k] <= f_hi) {
      lo = std::min(lo, k);
      hi = std::max(hi, k);
      in_band.push_back(psd.power[k]);
    }
  }
  if (in_band.size() < 2) throw std::domain_error("integrate_peak: band too narrow for the grid");
  std::nth_element(in_band.begin(), in_band.begin() + in_band.size() / 2, in_band.end());
  const double floor_level = in_band[in_band.size() / 2];
  double integral = 0.0;
  for (std::size_t k = lo; k < hi; ++k)
    integral += 0.5 * (psd.power[k] + psd.power[k + 1]) * psd.df;
  const double bandwidth = psd.frequency[hi] - psd.frequency[lo];
  return std::max(0.0, integral - floor_level * bandwidth);
}

double equipartition_calibrate(std::span<const double> trace_volts, double temperature,
                               double omega, double mass) {
  if (trace_volts.size() < 2) throw std::domain_error("equipartition_calibrate: empty trace");
  const double var_v = variance_of(trace_volts);
  const double var_m = constants::boltzmann * temperature / (mass * omega * omega);
  return std::sqrt(var_v / var_m);
}

EnsembleStats ensemble_stats(std::span<const SineFit> fits, double mass, double omega,
                             int n_bins) {
  const auto n = fits.size();
  if (n < static_cast<std::size_t>(n_bins))
    throw std::domain_error("ensemble_stats: need at least n_bins trajectories");

  EnsembleStats st;
  double a2 = 0.0;
  for (const auto& f : fits) a2 += f.amplitude * f.amplitude;
  a2 /= static_cast<double>(n);
  st.mean_energy = 0.5 * mass * omega * omega * a2;

  const double period = 2.0 * constants::pi / omega;
  const int n_t = 256;
  st.trace_times.resize(n_t);
  st.variance_trace.resize(n_t);
  const auto var_at = [&](std::span<const SineFit> group, double t) {
    double s = 0.0;
    for (const auto& f : group) s += f.amplitude * std::sin(f.omega * t + f.phase);
    const double mu = s / static_cast<double>(group.size());
    double acc = 0.0;
    for (const auto& f : group) {
      const double d = f.amplitude * std::sin(f.omega * t + f.phase) - mu;
      acc += d * d;
    }
    return acc / static_cast<double>(group.size());
  };
  double vmax = -1.0;
  for (int i = 0; i < n_t; ++i) {
    const double t = period * i / n_t;
    st.trace_times[i] = t;
    st.variance_trace[i] = var_at(fits, t);
    vmax = std::max(vmax, st.variance_trace[i]);
  }
  st.max_std = std::sqrt(vmax);

  // error from contiguous sub-ensembles
  std::vector<double> bin_max(n_bins);
  const std::size_t per = n / static_cast<std::size_t>(n_bins);
  for (int bin = 0; bin < n_bins; ++bin) {
    auto group = fits.subspan(per * static_cast<std::size_t>(bin), per);
    double bmax = -1.0;
    for (int i = 0; i < n_t; ++i) bmax = std::max(bmax, var_at(group, st.trace_times[i]));
    bin_max[static_cast<std::size_t>(bin)] = std::sqrt(bmax);
  }
  const double mu = mean_of(bin_max);
  double var = 0.0;
  for (double v : bin_max) var += (v - mu) * (v - mu);
  var /= static_cast<double>(n_bins - 1);
  st.max_std_error = std::sqrt(var / n_bins);
  return st;
}

}  // namespace levisim
