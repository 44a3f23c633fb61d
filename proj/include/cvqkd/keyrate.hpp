#pragma once

// Reverse-reconciliation secret key rates against collective Gaussian
// attacks, for the three measurement models in core.hpp. Everything here is
// asymptotic (no finite-size terms) and expressed in bits per pulse.

#include <cmath>
#include <variant>

#include "cvqkd/core.hpp"

namespace cvqkd {

using Protocol = std::variant<PerfectHomodyne, Heterodyne, NoisyHomodyne>;

namespace detail {

// Entropy contribution of one symplectic eigenvalue. Well-separated spectra
// come out of the solvers accurate to ~1e-12, but a near-degenerate pair
// close to the vacuum sits on an intrinsic double-precision noise floor near
// 1e-7 (the splitting lives under the rounding error of the invariants), so
// deficits up to 1e-6 are treated as exactly pure. Anything larger is a
// genuinely broken state.
inline double entropy_term(double lambda) {
  double x = 0.5 * (lambda - 1.0);
  if (x < 0.0) {
    if (x < -5e-7)
      throw unphysical_state_error("conditional symplectic eigenvalue below vacuum: lambda=" +
                                   std::to_string(lambda));
    x = 0.0;
  }
  return g_entropy(x);
}

struct LinkState {
  double a, b, c;
  double chi_c;
};

inline LinkState link_state(const ProtocolParams& params, const ChannelModel& channel) {
  const TwoModeCovariance cov = covariance_from_link(params, channel);
  const double chi_c = (1.0 - channel.t) / channel.t + channel.epsilon;
  return LinkState{cov.a, cov.b, cov.c, chi_c};
}

}  // namespace detail

// Shannon mutual information between Alice's modulation and Bob's outcome.
inline double mutual_information(const Protocol& protocol, const ProtocolParams& params,
                                 const ChannelModel& channel) {
  params.validate();
  channel.validate();
  const double v = params.v;
  const double t = channel.t;
  const double chi_c = (1.0 - t) / t + channel.epsilon;
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, PerfectHomodyne>) {
          return 0.5 * std::log2((v + chi_c) / (1.0 + chi_c));
        } else if constexpr (std::is_same_v<P, Heterodyne>) {
          return std::log2((t * (v + chi_c) + 1.0) / (t * (1.0 + chi_c) + 1.0));
        } else {
          static_assert(std::is_same_v<P, NoisyHomodyne>);
          const double chi_t = chi_c + noise_budget(channel, p.detector).chi_d / t;
          return 0.5 * std::log2((v + chi_t) / (1.0 + chi_t));
        }
      },
      protocol);
}

struct HolevoBound {
  double chi_be = 0.0;
  double s_e = 0.0;
  double s_e_given_b = 0.0;
  SymplecticSpectrum lambdas;
  bool clamped = false;
};

namespace detail {

// Conditional spectrum for homodyne detection with trusted added noise chi_d
// (chi_d = 0 recovers the ideal homodyne result via the same formulas'
// limit, but the ideal case has its own single-eigenvalue expression).
inline void conditional_noisy_homodyne(const LinkState& st, double chi_d,
                                       SymplecticSpectrum& out) {
  const double delta = st.a * st.a + st.b * st.b - 2.0 * st.c * st.c;
  const double dd = st.a * st.b - st.c * st.c;
  const double denom = st.b + chi_d;
  const double aa = (st.b + st.a * dd + chi_d * delta) / denom;
  const double bb = dd * (st.a + chi_d * dd) / denom;
  // delta and dd are differences of ~V^2 terms, so their absolute error
  // follows the pre-cancellation magnitude and flows through the
  // (all-positive) combinations above essentially undamped.
  const double e_delta = kUlp * (st.a * st.a + st.b * st.b + 2.0 * st.c * st.c);
  const double e_d = kUlp * (st.a * st.b + st.c * st.c);
  const double e_aa = (st.a * e_d + chi_d * e_delta) / denom + 4.0 * kUlp * std::abs(aa);
  const double e_bb =
      e_d * (st.a + 2.0 * chi_d * std::abs(dd)) / denom + 4.0 * kUlp * std::abs(bb);
  const SymplecticPair lam = eigenpair_from_invariants(aa, bb, e_aa, e_bb);
  out.conditional = {lam.lambda1, lam.lambda2};
  out.conditional_count = 2;
}

inline HolevoBound holevo_from_spectrum(const LinkState& st, const SymplecticSpectrum& spec) {
  HolevoBound hb;
  hb.lambdas = spec;
  hb.s_e = entropy_term(spec.lambda1) + entropy_term(spec.lambda2);
  hb.s_e_given_b = 0.0;
  for (std::size_t i = 0; i < spec.conditional_count; ++i)
    hb.s_e_given_b += entropy_term(spec.conditional[i]);
  hb.chi_be = hb.s_e - hb.s_e_given_b;
  if (hb.chi_be < 0.0) {
    if (hb.chi_be < -1e-9)
      throw unphysical_state_error("Holevo bound significantly negative: chi_be=" +
                                   std::to_string(hb.chi_be) + " at a=" + std::to_string(st.a) +
                                   ", b=" + std::to_string(st.b) + ", c=" + std::to_string(st.c));
    hb.chi_be = 0.0;
    hb.clamped = true;
  }
  return hb;
}

}  // namespace detail

// Holevo information between Eve and Bob's outcome, chi_BE = S(E) - S(E|B),
// with Eve purifying everything untrusted. For NoisyHomodyne the detector
// noise is trusted: its purifying ancilla is not Eve's, which is exactly why
// added detection noise can help the reverse-reconciliation rate.
inline HolevoBound holevo_bound(const Protocol& protocol, const ProtocolParams& params,
                                const ChannelModel& channel) {
  params.validate();
  channel.validate();
  const detail::LinkState st = detail::link_state(params, channel);
  SymplecticSpectrum spec;
  const SymplecticPair joint = symplectic_pair(TwoModeCovariance{st.a, st.b, st.c});
  spec.lambda1 = joint.lambda1;
  spec.lambda2 = joint.lambda2;
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, PerfectHomodyne>) {
          spec.conditional = {std::sqrt(st.a * (st.a - st.c * st.c / st.b)), 1.0};
          spec.conditional_count = 1;
        } else if constexpr (std::is_same_v<P, Heterodyne>) {
          spec.conditional = {st.a - st.c * st.c / (st.b + 1.0), 1.0};
          spec.conditional_count = 1;
        } else {
          static_assert(std::is_same_v<P, NoisyHomodyne>);
          detail::conditional_noisy_homodyne(st, noise_budget(channel, p.detector).chi_d, spec);
        }
      },
      protocol);
  return detail::holevo_from_spectrum(st, spec);
}

inline KeyRateBreakdown key_rate(const Protocol& protocol, const ProtocolParams& params,
                                 const ChannelModel& channel) {
  const double i_ab = mutual_information(protocol, params, channel);
  const HolevoBound hb = holevo_bound(protocol, params, channel);
  KeyRateBreakdown out;
  out.i_ab = i_ab;
  out.s_e = hb.s_e;
  out.s_e_given_b = hb.s_e_given_b;
  out.chi_be = hb.chi_be;
  out.k_raw = params.beta * i_ab - hb.chi_be;
  out.lambdas = hb.lambdas;
  out.chi_be_clamped = hb.clamped;
  return out;
}

// Homodyne rate as a function of the trusted detection noise chi_d alone,
// decoupled from any particular (eta, n_el) realization. This is the
// objective the added-noise optimizer scans; a NoisyHomodyne protocol with
// noise_budget(...).chi_d == chi_d gives the identical breakdown.
inline KeyRateBreakdown homodyne_rate_with_added_noise(const ProtocolParams& params,
                                                       const ChannelModel& channel,
                                                       double chi_d) {
  params.validate();
  channel.validate();
  detail::require(detail::finite(chi_d) && chi_d >= 0.0,
                  "chi_d must be finite and >= 0 (got " + std::to_string(chi_d) + ")");
  const detail::LinkState st = detail::link_state(params, channel);
  const double chi_t = st.chi_c + chi_d / channel.t;
  const double i_ab = 0.5 * std::log2((params.v + chi_t) / (1.0 + chi_t));

  SymplecticSpectrum spec;
  const SymplecticPair joint = symplectic_pair(TwoModeCovariance{st.a, st.b, st.c});
  spec.lambda1 = joint.lambda1;
  spec.lambda2 = joint.lambda2;
  if (chi_d == 0.0) {
    spec.conditional = {std::sqrt(st.a * (st.a - st.c * st.c / st.b)), 1.0};
    spec.conditional_count = 1;
  } else {
    detail::conditional_noisy_homodyne(st, chi_d, spec);
  }
  const HolevoBound hb = detail::holevo_from_spectrum(st, spec);

  KeyRateBreakdown out;
  out.i_ab = i_ab;
  out.s_e = hb.s_e;
  out.s_e_given_b = hb.s_e_given_b;
  out.chi_be = hb.chi_be;
  out.k_raw = params.beta * i_ab - hb.chi_be;
  out.lambdas = hb.lambdas;
  out.chi_be_clamped = hb.clamped;
  return out;
}

}  // namespace cvqkd
