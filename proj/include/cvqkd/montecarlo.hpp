#pragma once

// Pulse-level simulation of the coherent-state protocol with a homodyne
// receiver whose local oscillator can be manipulated, plus the parameter
// estimators Bob would actually run. The point of this module is to expose
// the calibration attack mechanically: the electronic noise floor is fixed
// in raw detector units at calibration time, so everything downstream
// depends on which LO intensity the normalization believes in.
//
// Raw-unit convention: with LO intensity l (photons per pulse) the homodyne
// output is
//   raw = sqrt(eta l) (sqrt(eta) q + sqrt(1 - eta) x_N) + x_el,
// with Var(x_el) = eta * lo_photons_cal * n_el_cal frozen at calibration
// (electronic noise is a detector property; it does not follow the LO).
// Dividing by sqrt(eta * lo_photons_cal) recovers calibrated SNU; dividing
// by sqrt(eta * l) is the instantaneous normalization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <thread>
#include <variant>
#include <vector>

#include "cvqkd/core.hpp"
#include "cvqkd/rng.hpp"

namespace cvqkd {

// LO intensity profile seen at the receiver, as gain relative to the
// calibrated intensity. Stochastic draws are (1 + delta) with
// delta ~ N(0, rel_std^2), redrawn (never truncated) on the rare
// nonpositive outcome; they use their own seed and stream so the signal
// sequence is unaffected by the profile choice.
struct ConstantLo {
  double gain = 1.0;
};
struct StochasticLo {
  double rel_std = 0.0;
  std::uint64_t seed = 0;
};
struct SequenceLo {
  std::vector<double> gains;
};
using LoProfile = std::variant<ConstantLo, StochasticLo, SequenceLo>;

struct PulseBatch {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::vector<double> x_a;               // Alice's x modulation, N(0, v - 1)
  std::vector<double> p_a;               // Alice's p modulation
  std::vector<std::uint8_t> theta_bits;  // Bob's basis: 0 measures x, 1 measures p
  std::vector<double> lo_intensity;      // photons per pulse at the detector
  std::vector<double> raw;               // homodyne output, raw units
  std::vector<std::uint8_t> saturated;   // |raw| beyond the rail
  double rail = 0.0;                     // the rail used, raw units
  std::size_t saturated_count = 0;
};

namespace detail {

inline std::vector<double> lo_gains(const LoProfile& profile, std::size_t n) {
  return std::visit(
      [&](const auto& p) -> std::vector<double> {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ConstantLo>) {
          require(finite(p.gain) && p.gain > 0.0, "ConstantLo: gain must be > 0");
          return std::vector<double>(n, p.gain);
        } else if constexpr (std::is_same_v<P, StochasticLo>) {
          require(finite(p.rel_std) && p.rel_std >= 0.0, "StochasticLo: rel_std must be >= 0");
          std::vector<double> g(n);
          const std::size_t nchunks = (n + kRngChunk - 1) / kRngChunk;
          for (std::size_t c = 0; c < nchunks; ++c) {
            SplitMix64 rng(chunk_seed(p.seed, c, 1));
            const std::size_t end = std::min(n, (c + 1) * kRngChunk);
            for (std::size_t i = c * kRngChunk; i < end; ++i) {
              double v;
              do {
                v = 1.0 + p.rel_std * rng.normal_pair().z0;
              } while (v <= 0.0);
              g[i] = v;
            }
          }
          return g;
        } else {
          static_assert(std::is_same_v<P, SequenceLo>);
          require(p.gains.size() >= n, "SequenceLo: need at least " + std::to_string(n) +
                                           " gains, got " + std::to_string(p.gains.size()));
          for (double v : p.gains)
            require(finite(v) && v > 0.0, "SequenceLo: gains must be > 0");
          return std::vector<double>(p.gains.begin(), p.gains.begin() + n);
        }
      },
      profile);
}

}  // namespace detail

// Simulate n pulses. Per pulse, in fixed order: one normal pair for Alice's
// (x, p) modulation, one for (signal vacuum, channel noise), one for
// (detector vacuum, electronic noise), then one uniform for Bob's basis.
// Generation is chunked (kRngChunk pulses, one RNG per chunk), so the batch
// is bit-identical for any thread count. threads <= 0 picks the hardware
// count. The saturation rail sits at rail_sigmas times the raw-output
// standard deviation expected at calibration conditions.
inline PulseBatch simulate_batch(const ProtocolParams& params, const ChannelModel& channel,
                                 const DetectorModel& detector, const LoProfile& profile,
                                 std::size_t n, std::uint64_t seed, int threads = 1,
                                 double rail_sigmas = 8.0) {
  params.validate();
  channel.validate();
  detector.validate();
  detail::require(n > 0, "simulate_batch: n must be > 0");
  detail::require(detail::finite(rail_sigmas) && rail_sigmas > 0.0,
                  "simulate_batch: rail_sigmas must be > 0");

  const double v = params.v;
  const double t = channel.t;
  const double eps = channel.epsilon;
  const double eta = detector.eta;
  const double lo_cal = detector.lo_photons_cal;

  const double mod_std = std::sqrt(v - 1.0);
  const double chan_std = std::sqrt(1.0 - t + t * eps);
  const double det_mix = std::sqrt(1.0 - eta);
  const double el_std = std::sqrt(eta * lo_cal * detector.n_el_cal);

  PulseBatch batch;
  batch.n = n;
  batch.seed = seed;
  batch.x_a.resize(n);
  batch.p_a.resize(n);
  batch.theta_bits.resize(n);
  batch.raw.resize(n);
  batch.saturated.resize(n);
  batch.lo_intensity = detail::lo_gains(profile, n);
  for (double& g : batch.lo_intensity) g *= lo_cal;

  const double var_cal =
      eta * lo_cal * (eta * t * (v - 1.0) + 1.0 + eta * t * eps + detector.n_el_cal);
  batch.rail = rail_sigmas * std::sqrt(var_cal);

  const std::size_t nchunks = (n + kRngChunk - 1) / kRngChunk;
  auto run_chunk = [&](std::size_t c) {
    SplitMix64 rng(chunk_seed(seed, c, 0));
    const std::size_t end = std::min(n, (c + 1) * kRngChunk);
    for (std::size_t i = c * kRngChunk; i < end; ++i) {
      const auto [za, zp] = rng.normal_pair();
      const auto [zv, zc] = rng.normal_pair();
      const auto [zn, ze] = rng.normal_pair();
      const double u = rng.uniform();

      const double xa = mod_std * za;
      const double pa = mod_std * zp;
      const std::uint8_t th = u < 0.5 ? 0 : 1;
      const double q_in = (th == 0 ? xa : pa) + zv;
      const double q_ch = std::sqrt(t) * q_in + chan_std * zc;
      const double q_det = std::sqrt(eta) * q_ch + det_mix * zn;
      const double raw = std::sqrt(eta * batch.lo_intensity[i]) * q_det + el_std * ze;

      batch.x_a[i] = xa;
      batch.p_a[i] = pa;
      batch.theta_bits[i] = th;
      batch.raw[i] = raw;
      batch.saturated[i] = std::abs(raw) > batch.rail ? 1 : 0;
    }
  };

  int nthreads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  if (nthreads < 1) nthreads = 1;
  nthreads = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(nthreads), nchunks));
  if (nthreads <= 1) {
    for (std::size_t c = 0; c < nchunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nthreads));
    for (int w = 0; w < nthreads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t c = static_cast<std::size_t>(w); c < nchunks;
             c += static_cast<std::size_t>(nthreads))
          run_chunk(c);
      });
    for (auto& th : pool) th.join();
  }

  std::size_t sat = 0;
  for (std::uint8_t s : batch.saturated) sat += s;
  batch.saturated_count = sat;
  return batch;
}

// How raw outputs are converted to shot-noise units. Calibrated trusts the
// calibration-time LO intensity; Instantaneous trusts the per-pulse monitor
// reading. Under an LO gain g the two differ by sqrt(g), and the electronic
// noise lands at n_el_cal (Calibrated) or n_el_cal / g (Instantaneous) in
// the normalized data. Bob assuming n_el_cal while normalizing
// instantaneously is the calibration attack's parameter-estimation bias.
enum class Normalization { Calibrated, Instantaneous };

inline std::vector<double> normalize_batch(const PulseBatch& batch, const DetectorModel& detector,
                                           Normalization scheme) {
  detector.validate();
  detail::require(batch.raw.size() == batch.n && batch.lo_intensity.size() == batch.n,
                  "normalize_batch: malformed batch");
  std::vector<double> y(batch.n);
  if (scheme == Normalization::Calibrated) {
    // Divide (not multiply by a reciprocal) so that at unit LO gain the two
    // schemes agree bit for bit, as they should.
    const double s = std::sqrt(detector.eta * detector.lo_photons_cal);
    for (std::size_t i = 0; i < batch.n; ++i) y[i] = batch.raw[i] / s;
  } else {
    for (std::size_t i = 0; i < batch.n; ++i) {
      detail::require(batch.lo_intensity[i] > 0.0,
                      "normalize_batch: nonpositive LO intensity at pulse " + std::to_string(i));
      y[i] = batch.raw[i] / std::sqrt(detector.eta * batch.lo_intensity[i]);
    }
  }
  return y;
}

// Alice's modulation in the quadrature Bob measured.
inline std::vector<double> matched_alice(const PulseBatch& batch) {
  std::vector<double> m(batch.n);
  for (std::size_t i = 0; i < batch.n; ++i)
    m[i] = batch.theta_bits[i] ? batch.p_a[i] : batch.x_a[i];
  return m;
}

struct StabilizerConfig {
  double tap_fraction = 0.01;
  double target_intensity = 1e8;  // detector-plane photons per pulse
  double gain_min = 0.1;
  double gain_max = 10.0;
  double monitor_noise_rel = 0.0;  // relative error of the tap reading
};

struct StabilizedLo {
  std::vector<double> gains;       // clamped feedforward gain per pulse
  std::vector<double> stabilized;  // delivered intensity per pulse
  std::vector<double> residuals;   // |stabilized - target| / target
  std::size_t clipped = 0;         // pulses where the clamp engaged
};

// Tap-and-correct intensity stabilizer: measure tap_fraction of each pulse,
// scale the rest to hit target_intensity, clamp the gain to hardware range.
// With a perfect monitor the residual is exactly zero for unclipped pulses;
// with monitor noise delta the delivered intensity is target / (1 + delta).
// The monitor noise stream is chunked like every other RNG consumer.
inline StabilizedLo stabilize_lo(std::span<const double> incoming, const StabilizerConfig& cfg,
                                 std::uint64_t monitor_seed = 0) {
  detail::require(detail::finite(cfg.tap_fraction) && cfg.tap_fraction > 0.0 &&
                      cfg.tap_fraction < 1.0,
                  "StabilizerConfig: tap_fraction must be in (0, 1)");
  detail::require(detail::finite(cfg.target_intensity) && cfg.target_intensity > 0.0,
                  "StabilizerConfig: target_intensity must be > 0");
  detail::require(detail::finite(cfg.gain_min) && detail::finite(cfg.gain_max) &&
                      0.0 < cfg.gain_min && cfg.gain_min <= 1.0 && 1.0 <= cfg.gain_max,
                  "StabilizerConfig: need 0 < gain_min <= 1 <= gain_max");
  detail::require(detail::finite(cfg.monitor_noise_rel) && cfg.monitor_noise_rel >= 0.0,
                  "StabilizerConfig: monitor_noise_rel must be >= 0");

  const std::size_t n = incoming.size();
  StabilizedLo out;
  out.gains.resize(n);
  out.stabilized.resize(n);
  out.residuals.resize(n);

  const std::size_t nchunks = (n + kRngChunk - 1) / kRngChunk;
  for (std::size_t c = 0; c < nchunks; ++c) {
    SplitMix64 rng(chunk_seed(monitor_seed, c, 2));
    const std::size_t end = std::min(n, (c + 1) * kRngChunk);
    for (std::size_t i = c * kRngChunk; i < end; ++i) {
      detail::require(detail::finite(incoming[i]) && incoming[i] > 0.0,
                      "stabilize_lo: nonpositive incoming intensity at pulse " +
                          std::to_string(i));
      double measured = incoming[i];
      if (cfg.monitor_noise_rel > 0.0) {
        double delta;
        do {
          delta = cfg.monitor_noise_rel * rng.normal_pair().z0;
        } while (1.0 + delta <= 0.0);
        measured *= 1.0 + delta;
      }
      const double wanted = cfg.target_intensity / ((1.0 - cfg.tap_fraction) * measured);
      const double g = std::clamp(wanted, cfg.gain_min, cfg.gain_max);
      if (g != wanted) ++out.clipped;
      out.gains[i] = g;
      out.stabilized[i] = (1.0 - cfg.tap_fraction) * incoming[i] * g;
      out.residuals[i] =
          std::abs(out.stabilized[i] - cfg.target_intensity) / cfg.target_intensity;
    }
  }
  return out;
}

struct EstimationReport {
  std::size_t n_used = 0;
  double var_alice = 0.0;
  double var_y = 0.0;
  double cov_ay = 0.0;
  double etat_hat = 0.0;  // eta * t estimate (what homodyne slopes measure)
  double t_hat = 0.0;
  double eps_hat = 0.0;
  double se_var_y = 0.0;
  double se_cov_ay = 0.0;
  double se_etat_hat = 0.0;
  double se_t_hat = 0.0;
  double se_eps_hat = 0.0;
  // Empirical covariance came out nonpositive, so the sign of sqrt(eta t)
  // is lost and t_hat / eps_hat are not meaningful.
  bool degenerate = false;
};

namespace detail {

// Fixed-tree pairwise summation: deterministic, and keeps the rounding error
// at O(log n) ulps for the 1e6+ element sums the estimators run on.
inline double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 256) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

struct MomentEstimates {
  double var_a, var_y, cov, etat, t, eps;
};

inline MomentEstimates moments_on(std::span<const double> a, std::span<const double> y,
                                  double eta, double n_el_assumed,
                                  std::optional<double> true_t) {
  const std::size_t n = a.size();
  std::vector<double> buf(n);
  const double mean_a = pairwise_sum(a.data(), n) / static_cast<double>(n);
  const double mean_y = pairwise_sum(y.data(), n) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = (a[i] - mean_a) * (a[i] - mean_a);
  const double var_a = pairwise_sum(buf.data(), n) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) buf[i] = (y[i] - mean_y) * (y[i] - mean_y);
  const double var_y = pairwise_sum(buf.data(), n) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) buf[i] = (a[i] - mean_a) * (y[i] - mean_y);
  const double cov = pairwise_sum(buf.data(), n) / static_cast<double>(n - 1);

  MomentEstimates m{var_a, var_y, cov, 0.0, 0.0, 0.0};
  const double slope = var_a > 0.0 ? cov / var_a : 0.0;
  m.etat = slope * slope;
  m.t = m.etat / eta;
  const double etat_used = true_t ? eta * *true_t : m.etat;
  m.eps = etat_used > 0.0
              ? (var_y - etat_used * var_a - 1.0 - n_el_assumed) / etat_used
              : std::numeric_limits<double>::quiet_NaN();
  return m;
}

}  // namespace detail

// Covariance-based estimation of (t, epsilon) from matched Alice data and
// normalized Bob data, assuming the trusted detector model. The slope
// cov / var_a estimates sqrt(eta t); the excess noise estimate subtracts
// shot noise and the assumed electronic noise from Bob's variance. Passing
// true_t pins the transmission (Bob knowing the line) so eps_hat isolates
// the noise-split error. Standard errors come from splitting the batch into
// up to 20 contiguous sub-batches and treating their estimates as iid.
inline EstimationReport estimate_parameters(std::span<const double> alice,
                                            std::span<const double> bob,
                                            const DetectorModel& trusted,
                                            std::optional<double> true_t = std::nullopt) {
  trusted.validate();
  detail::require(alice.size() == bob.size(),
                  "estimate_parameters: alice and bob lengths differ");
  detail::require(alice.size() >= 2, "estimate_parameters: need at least 2 pulses");
  if (true_t)
    detail::require(detail::finite(*true_t) && *true_t > 0.0 && *true_t <= 1.0,
                    "estimate_parameters: true_t must be in (0, 1]");

  const std::size_t n = alice.size();
  const double eta = trusted.eta;
  const double n_el_assumed = trusted.effective_n_el();

  const detail::MomentEstimates full =
      detail::moments_on(alice, bob, eta, n_el_assumed, true_t);

  EstimationReport rep;
  rep.n_used = n;
  rep.var_alice = full.var_a;
  rep.var_y = full.var_y;
  rep.cov_ay = full.cov;
  rep.etat_hat = full.etat;
  rep.t_hat = full.t;
  rep.eps_hat = full.eps;
  rep.degenerate = full.cov <= 0.0;

  const std::size_t nsplits = std::min<std::size_t>(20, n / 2);
  if (nsplits < 2) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rep.se_var_y = rep.se_cov_ay = rep.se_etat_hat = rep.se_t_hat = rep.se_eps_hat = nan;
    return rep;
  }
  std::vector<detail::MomentEstimates> parts;
  parts.reserve(nsplits);
  for (std::size_t j = 0; j < nsplits; ++j) {
    const std::size_t lo = j * n / nsplits;
    const std::size_t hi = (j + 1) * n / nsplits;
    parts.push_back(detail::moments_on(alice.subspan(lo, hi - lo), bob.subspan(lo, hi - lo),
                                       eta, n_el_assumed, true_t));
  }
  auto se_of = [&](auto field) {
    double mean = 0.0;
    for (const auto& p : parts) mean += field(p);
    mean /= static_cast<double>(nsplits);
    double ss = 0.0;
    for (const auto& p : parts) ss += (field(p) - mean) * (field(p) - mean);
    return std::sqrt(ss / static_cast<double>(nsplits - 1) / static_cast<double>(nsplits));
  };
  rep.se_var_y = se_of([](const auto& p) { return p.var_y; });
  rep.se_cov_ay = se_of([](const auto& p) { return p.cov; });
  rep.se_etat_hat = se_of([](const auto& p) { return p.etat; });
  rep.se_t_hat = se_of([](const auto& p) { return p.t; });
  rep.se_eps_hat = se_of([](const auto& p) { return p.eps; });
  return rep;
}

// Plain-text dump, one row per pulse:
// pulse_index,x_a,p_a,theta,lo_intensity,raw_output,saturated
inline void export_batch(const PulseBatch& batch, std::ostream& os) {
  os << "pulse_index,x_a,p_a,theta,lo_intensity,raw_output,saturated\n";
  char line[256];
  for (std::size_t i = 0; i < batch.n; ++i) {
    std::snprintf(line, sizeof line, "%zu,%.12g,%.12g,%u,%.12g,%.12g,%u\n", i, batch.x_a[i],
                  batch.p_a[i], static_cast<unsigned>(batch.theta_bits[i]),
                  batch.lo_intensity[i], batch.raw[i],
                  static_cast<unsigned>(batch.saturated[i]));
    os << line;
  }
}

}  // namespace cvqkd
