#pragma once

// Core model types and Gaussian-state helpers for CV-QKD key rate analysis.
// Conventions: quadrature variances in shot-noise units (SNU), vacuum = 1;
// channel losses in dB; entropies and rates in bits (per pulse).

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

namespace cvqkd {

// A claimed covariance matrix fails positivity / uncertainty checks beyond
// numerical tolerance. Carries the offending values in the message.
class unphysical_state_error : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

// A root finder or optimizer could not do its job (failed bracket, iteration
// cap). Never silently guessed over; callers decide how to surface it.
class solver_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline bool finite(double x) { return std::isfinite(x); }

}  // namespace detail

// Source and reconciliation parameters. v is Alice's modulation variance plus
// vacuum (the EPR-equivalent mode variance), so v = 1 means no modulation.
struct ProtocolParams {
  double v = 40.0;
  double beta = 1.0;

  void validate() const {
    detail::require(detail::finite(v) && v >= 1.0,
                    "ProtocolParams: v must be finite and >= 1 (got " + std::to_string(v) + ")");
    detail::require(detail::finite(beta) && beta > 0.0 && beta <= 1.0,
                    "ProtocolParams: beta must be in (0, 1] (got " + std::to_string(beta) + ")");
  }
};

inline double db_to_transmission(double loss_db) {
  detail::require(detail::finite(loss_db) && loss_db >= 0.0,
                  "loss_db must be finite and >= 0 (got " + std::to_string(loss_db) + ")");
  return std::pow(10.0, -loss_db / 10.0);
}

inline double transmission_to_db(double t) {
  detail::require(detail::finite(t) && t > 0.0 && t <= 1.0,
                  "transmission must be in (0, 1] (got " + std::to_string(t) + ")");
  return -10.0 * std::log10(t);
}

// Untrusted link: transmission t and excess noise epsilon, both referred to
// the channel input. loss_db and t are kept together and consistent.
struct ChannelModel {
  double loss_db = 0.0;
  double t = 1.0;
  double epsilon = 0.0;

  static ChannelModel from_loss_db(double loss_db, double epsilon) {
    ChannelModel ch{loss_db, db_to_transmission(loss_db), epsilon};
    ch.validate();
    return ch;
  }

  static ChannelModel from_transmission(double t, double epsilon) {
    ChannelModel ch{transmission_to_db(t), t, epsilon};
    ch.validate();
    return ch;
  }

  void validate() const {
    detail::require(detail::finite(t) && t > 0.0 && t <= 1.0,
                    "ChannelModel: t must be in (0, 1] (got " + std::to_string(t) + ")");
    detail::require(detail::finite(epsilon) && epsilon >= 0.0,
                    "ChannelModel: epsilon must be >= 0 (got " + std::to_string(epsilon) + ")");
    detail::require(std::abs(t - db_to_transmission(loss_db)) <= 1e-12 * t,
                    "ChannelModel: loss_db and t are inconsistent");
  }
};

// Receiver-side trusted hardware. n_el_cal is the electronic noise measured
// at calibration, in SNU at the detector input, for local-oscillator power
// lo_photons_cal (photons per pulse). Scaling the LO by lo_gain leaves the
// electronic noise fixed in raw units, so in shot-noise units it becomes
// n_el_cal / lo_gain. That division is the whole calibration-attack story.
struct DetectorModel {
  double eta = 0.606;
  double n_el_cal = 0.041;
  double lo_gain = 1.0;
  double lo_photons_cal = 1e8;

  double effective_n_el() const { return n_el_cal / lo_gain; }

  void validate() const {
    detail::require(detail::finite(eta) && eta > 0.0 && eta <= 1.0,
                    "DetectorModel: eta must be in (0, 1] (got " + std::to_string(eta) + ")");
    detail::require(detail::finite(n_el_cal) && n_el_cal >= 0.0,
                    "DetectorModel: n_el_cal must be >= 0 (got " + std::to_string(n_el_cal) + ")");
    detail::require(detail::finite(lo_gain) && lo_gain > 0.0,
                    "DetectorModel: lo_gain must be > 0 (got " + std::to_string(lo_gain) + ")");
    detail::require(detail::finite(lo_photons_cal) && lo_photons_cal > 0.0,
                    "DetectorModel: lo_photons_cal must be > 0");
  }
};

// Measurement models for the reverse-reconciliation rate. PerfectHomodyne and
// Heterodyne take the detector as ideal and untrusted-side only; NoisyHomodyne
// folds the detector's trusted imperfections into the conditional entropy.
struct PerfectHomodyne {};
struct Heterodyne {};
struct NoisyHomodyne {
  DetectorModel detector;
};

// Noise totals referred to the channel input. chi_c is the untrusted line
// contribution, chi_d the trusted detection contribution (referred to Bob's
// input), chi_t the total seen by the homodyne measurement.
struct NoiseBudget {
  double chi_c = 0.0;
  double chi_d = 0.0;
  double chi_t = 0.0;
  // Variance of the EPR mode that purifies the detector noise,
  // n = 1 + n_el / (1 - eta). Meaningless at eta = 1, hence optional.
  std::optional<double> epr_noise_variance;
};

inline NoiseBudget noise_budget(const ChannelModel& channel, const DetectorModel& detector) {
  channel.validate();
  detector.validate();
  NoiseBudget nb;
  const double eta = detector.eta;
  const double n_el = detector.effective_n_el();
  nb.chi_c = (1.0 - channel.t) / channel.t + channel.epsilon;
  nb.chi_d = (1.0 - eta) / eta + n_el / eta;
  nb.chi_t = nb.chi_c + nb.chi_d / channel.t;
  if (eta < 1.0) nb.epr_noise_variance = 1.0 + n_el / (1.0 - eta);
  return nb;
}

// Two-mode Gaussian covariance in the standard form
//   [[a I, c Z], [c Z, b I]],  Z = diag(1, -1).
struct TwoModeCovariance {
  double a = 1.0;
  double b = 1.0;
  double c = 0.0;
};

// Alice-Bob covariance after the channel, before detection:
//   a = v, b = t (v + chi_c), c = sqrt(t (v^2 - 1)).
inline TwoModeCovariance covariance_from_link(const ProtocolParams& params,
                                              const ChannelModel& channel) {
  params.validate();
  channel.validate();
  const double chi_c = (1.0 - channel.t) / channel.t + channel.epsilon;
  return TwoModeCovariance{
      params.v,
      channel.t * (params.v + chi_c),
      std::sqrt(channel.t * (params.v * params.v - 1.0)),
  };
}

struct SymplecticPair {
  double lambda1 = 1.0;  // smaller
  double lambda2 = 1.0;  // larger
};

namespace detail {

inline constexpr double kUlp = 2.220446049250313e-16;  // 2^-52

// Eigenvalues from the invariants s = l1^2 + l2^2 and p = (l1 l2)^2, with
// e_s and e_p bounding the absolute rounding error the caller accumulated in
// s and p. Two traps live here. First, the cancellation in
// (s - sqrt(s^2 - 4p)) / 2 loses half the digits near pure states; the small
// root is recovered as p / big instead. Second, near a degenerate pair the
// radicand s^2 - 4p is pure rounding noise, and sqrt turns 1e-12 of noise
// into 1e-6 of spurious eigenvalue splitting; when the radicand is below the
// propagated noise floor the pair is treated as exactly degenerate at
// sqrt(sqrt(p)) each, which keeps the product invariant to an ulp.
inline SymplecticPair eigenpair_from_invariants(double s, double p, double e_s, double e_p) {
  if (!finite(s) || !finite(p))
    throw unphysical_state_error("symplectic invariants not finite (s=" + std::to_string(s) +
                                 ", p=" + std::to_string(p) + ")");
  if (p < 0.0)
    throw unphysical_state_error("negative symplectic determinant (p=" + std::to_string(p) + ")");
  const double rad = s * s - 4.0 * p;
  const double noise =
      64.0 * (2.0 * std::abs(s) * e_s + 4.0 * e_p + 8.0 * kUlp * (s * s + 4.0 * p));
  if (rad < -std::max(noise, 1e-9 * std::max(1.0, s * s)))
    throw unphysical_state_error("complex symplectic eigenvalues (s=" + std::to_string(s) +
                                 ", p=" + std::to_string(p) + ")");
  if (rad <= noise) {
    // Both squared eigenvalues sit at s / 2, so a degenerate pair is only
    // physical on the positive branch.
    if (s <= 0.0)
      throw unphysical_state_error("nonpositive squared symplectic eigenvalue (s=" +
                                   std::to_string(s) + ", p=" + std::to_string(p) + ")");
    const double lam = std::sqrt(std::sqrt(p));
    if (!(lam > 0.0))
      throw unphysical_state_error("vanishing symplectic eigenvalues (s=" + std::to_string(s) +
                                   ", p=" + std::to_string(p) + ")");
    return SymplecticPair{lam, lam};
  }
  const double big2 = 0.5 * (s + std::sqrt(rad));
  if (big2 <= 0.0)
    throw unphysical_state_error("nonpositive squared symplectic eigenvalue (s=" +
                                 std::to_string(s) + ", p=" + std::to_string(p) + ")");
  const double small2 = p / big2;
  return SymplecticPair{std::sqrt(small2), std::sqrt(big2)};
}

}  // namespace detail

// Symplectic spectrum of a two-mode covariance in standard form. Both
// eigenvalues of a physical state satisfy lambda >= 1; values below
// 1 - 1e-6 are rejected, small deficits are left to the entropy to clamp.
inline SymplecticPair symplectic_pair(const TwoModeCovariance& cov) {
  const double delta = cov.a * cov.a + cov.b * cov.b - 2.0 * cov.c * cov.c;
  const double d = cov.a * cov.b - cov.c * cov.c;
  // Rounding-error budgets for the invariants. delta and d both subtract
  // quantities of magnitude ~V^2, so their absolute error scales with the
  // pre-cancellation magnitude, not with the (possibly tiny) result.
  const double e_delta =
      detail::kUlp * (cov.a * cov.a + cov.b * cov.b + 2.0 * cov.c * cov.c);
  const double e_d = detail::kUlp * (std::abs(cov.a * cov.b) + cov.c * cov.c);
  const double e_p = 2.0 * std::abs(d) * e_d + detail::kUlp * d * d;
  SymplecticPair lam = detail::eigenpair_from_invariants(delta, d * d, e_delta, e_p);
  if (lam.lambda1 < 1.0 - 1e-6)
    throw unphysical_state_error("symplectic eigenvalue below vacuum: lambda1=" +
                                 std::to_string(lam.lambda1) + " (a=" + std::to_string(cov.a) +
                                 ", b=" + std::to_string(cov.b) + ", c=" + std::to_string(cov.c) +
                                 ")");
  return lam;
}

// Von Neumann entropy of a thermal state with symplectic eigenvalue 2x + 1:
//   g(x) = (x + 1) log2(x + 1) - x log2(x), g(0) = 0.
inline double g_entropy(double x) {
  detail::require(detail::finite(x) && x >= 0.0,
                  "g_entropy: argument must be finite and >= 0 (got " + std::to_string(x) + ")");
  if (x == 0.0) return 0.0;
  return (x + 1.0) * std::log2(x + 1.0) - x * std::log2(x);
}

// Full symplectic data behind a key rate: the joint Alice-Bob spectrum plus
// the spectrum of Alice's mode(s) conditioned on Bob's measurement (one value
// for ideal detection, two once the detector EPR ancilla is in play).
struct SymplecticSpectrum {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  std::array<double, 2> conditional{1.0, 1.0};
  std::size_t conditional_count = 0;
};

struct KeyRateBreakdown {
  double i_ab = 0.0;
  double s_e = 0.0;
  double s_e_given_b = 0.0;
  double chi_be = 0.0;
  double k_raw = 0.0;  // beta * i_ab - chi_be, no positivity clamp
  SymplecticSpectrum lambdas;
  bool chi_be_clamped = false;  // chi_be landed in [-1e-9, 0) and was zeroed
};

}  // namespace cvqkd
