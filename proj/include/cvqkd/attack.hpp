#pragma once

// Local-oscillator calibration attack: Eve amplifies the LO by a constant
// gain after Bob's calibration. The detector's electronic noise is fixed in
// raw units, so in shot-noise units it shrinks to n_el / g, and the total
// noise referred to the channel input is unchanged once Eve pads the line
// with the matching excess noise. Bob's parameter estimation then sees the
// calibration-time noise split, not the actual one, and over-trusts.

#include <cmath>

#include "cvqkd/core.hpp"
#include "cvqkd/keyrate.hpp"

namespace cvqkd {

struct NoiseSplit {
  double epsilon = 0.0;  // untrusted channel excess noise, channel input
  double n_el = 0.0;     // trusted electronic noise, SNU at the detector
};

struct AttackScenario {
  NoiseSplit believed;  // what Bob's calibration-time model says
  NoiseSplit actual;    // what the hardware is really doing under gain g
  double gain = 1.0;
  double eta = 0.606;
  ChannelModel channel;  // carries the believed epsilon
};

// Build the constant-total-noise scenario at LO gain g >= 1. The actual
// electronic noise is n_el_cal / g; Eve adds excess noise
// n_el_cal (1 - 1/g) / (eta t) so chi_t is identical in both splits and the
// attack is invisible to a total-noise monitor.
inline AttackScenario constant_total_noise_scenario(double base_epsilon, double n_el_cal,
                                                    double eta, const ChannelModel& channel,
                                                    double gain) {
  channel.validate();
  detail::require(detail::finite(base_epsilon) && base_epsilon >= 0.0,
                  "base_epsilon must be >= 0 (got " + std::to_string(base_epsilon) + ")");
  detail::require(detail::finite(n_el_cal) && n_el_cal >= 0.0,
                  "n_el_cal must be >= 0 (got " + std::to_string(n_el_cal) + ")");
  detail::require(detail::finite(eta) && eta > 0.0 && eta <= 1.0,
                  "eta must be in (0, 1] (got " + std::to_string(eta) + ")");
  detail::require(detail::finite(gain) && gain >= 1.0,
                  "gain must be >= 1 (Eve attenuating the LO would raise the trusted noise "
                  "and only hurt her; got " + std::to_string(gain) + ")");

  AttackScenario sc;
  sc.believed = NoiseSplit{base_epsilon, n_el_cal};
  sc.actual = NoiseSplit{
      base_epsilon + n_el_cal * (1.0 - 1.0 / gain) / (eta * channel.t),
      n_el_cal / gain,
  };
  sc.gain = gain;
  sc.eta = eta;
  sc.channel = ChannelModel::from_loss_db(channel.loss_db, base_epsilon);
  return sc;
}

struct RateGap {
  double k_believed = 0.0;  // rate Bob computes from the calibration-time split
  double k_true = 0.0;      // rate with the actual split
  double gap = 0.0;         // k_believed - k_true, the over-estimate
  KeyRateBreakdown believed;
  KeyRateBreakdown actual;
};

// Evaluate the noisy-homodyne rate under both noise splits. The mutual
// information is identical by construction (chi_t is invariant); the gap is
// entirely a Holevo-bound effect from misattributing noise to trusted
// hardware.
inline RateGap rate_gap(const AttackScenario& scenario, const ProtocolParams& params) {
  const ChannelModel believed_ch =
      ChannelModel::from_loss_db(scenario.channel.loss_db, scenario.believed.epsilon);
  const ChannelModel actual_ch =
      ChannelModel::from_loss_db(scenario.channel.loss_db, scenario.actual.epsilon);
  const DetectorModel believed_det{scenario.eta, scenario.believed.n_el, 1.0, 1e8};
  const DetectorModel actual_det{scenario.eta, scenario.actual.n_el, 1.0, 1e8};

  RateGap rg;
  rg.believed = key_rate(Protocol{NoisyHomodyne{believed_det}}, params, believed_ch);
  rg.actual = key_rate(Protocol{NoisyHomodyne{actual_det}}, params, actual_ch);
  rg.k_believed = rg.believed.k_raw;
  rg.k_true = rg.actual.k_raw;
  rg.gap = rg.k_believed - rg.k_true;
  return rg;
}

}  // namespace cvqkd
