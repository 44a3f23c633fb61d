#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cvqkd/optimizer.hpp"
#include "expected_values.hpp"

using namespace cvqkd;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
const ProtocolParams kParams{40.0, 1.0};
}

TEST_CASE("optimal added noise, interior maximum") {
  const ChannelModel ch5 = ChannelModel::from_loss_db(5.0, 0.25);
  const AddedNoiseOptimum opt = optimal_added_noise(kParams, ch5);
  CHECK_THAT(opt.chi_d_star, WithinAbs(expected::chi_d_star_v40_5db_eps025, 5e-6));
  CHECK_THAT(opt.k_star, WithinRel(expected::k_star_v40_5db_eps025, 1e-9));

  // The optimum dominates everything the search looked at, endpoints included.
  REQUIRE_FALSE(opt.trace.empty());
  bool saw_zero = false, saw_max = false;
  for (const auto& [chi, k] : opt.trace) {
    CHECK(opt.k_star >= k - 1e-9);
    if (chi == 0.0) {
      saw_zero = true;
      CHECK_THAT(k, WithinRel(expected::k_chid0_v40_5db_eps025, 1e-9));
    }
    if (chi == 100.0) saw_max = true;
  }
  CHECK(saw_zero);
  CHECK(saw_max);
}

TEST_CASE("optimal added noise, boundary maximum") {
  // At 15 dB / eps=0.25 the rate is still climbing at chi_d_max: the
  // supremum sits on the boundary and the best rate is still negative.
  const ChannelModel ch15 = ChannelModel::from_loss_db(15.0, 0.25);
  const AddedNoiseOptimum opt = optimal_added_noise(kParams, ch15);
  CHECK(opt.chi_d_star == 100.0);
  CHECK_THAT(opt.k_star, WithinRel(expected::k_star_v40_15db_eps025, 1e-9));
  CHECK(opt.k_star < 0.0);
}

TEST_CASE("optimal added noise ties break to zero") {
  // Zero untrusted noise: trusted noise has nothing to mask.
  CHECK(optimal_added_noise(kParams, ChannelModel::from_loss_db(5.0, 0.0)).chi_d_star == 0.0);

  CHECK_THROWS_AS(optimal_added_noise(kParams, ChannelModel::from_loss_db(5.0, 0.2), 0.0),
                  std::invalid_argument);
}

TEST_CASE("trusted noise helps even without loss when excess noise is present") {
  // At 0 dB with eps = 0.25 the optimum is interior, not at zero: the rate
  // climbs from 0.350066195 to 0.353215877 around chi_d = 0.038.
  const AddedNoiseOptimum opt = optimal_added_noise(kParams, ChannelModel::from_loss_db(0.0, 0.25));
  CHECK(opt.chi_d_star > 0.01);
  CHECK(opt.chi_d_star < 0.1);
  CHECK_THAT(opt.k_star, WithinRel(0.35321587653311955, 1e-7));
  const KeyRateBreakdown at_zero = key_rate(Protocol{PerfectHomodyne{}}, kParams,
                                            ChannelModel::from_loss_db(0.0, 0.25));
  CHECK_THAT(at_zero.k_raw, WithinRel(0.35006619549082384, 1e-9));
  CHECK(opt.k_star > at_zero.k_raw);
}

TEST_CASE("tolerable excess noise roots") {
  const FrontierPoint hom0 =
      tolerable_excess_noise(Protocol{PerfectHomodyne{}}, kParams, 0.0, false);
  CHECK_THAT(hom0.eps_max, WithinAbs(expected::eps_max_hom_v40_0db, 1e-6));

  const FrontierPoint hom10 =
      tolerable_excess_noise(Protocol{PerfectHomodyne{}}, kParams, 10.0, false);
  CHECK_THAT(hom10.eps_max, WithinAbs(expected::eps_max_hom_v40_10db, 1e-6));

  const FrontierPoint het10 = tolerable_excess_noise(Protocol{Heterodyne{}}, kParams, 10.0, false);
  CHECK_THAT(het10.eps_max, WithinAbs(expected::eps_max_het_v40_10db, 1e-6));

  const FrontierPoint opt10 =
      tolerable_excess_noise(Protocol{PerfectHomodyne{}}, kParams, 10.0, true);
  CHECK_THAT(opt10.eps_max, WithinAbs(expected::eps_max_noisyopt_v40_10db, 1e-6));

  // Sign witnesses around every root.
  for (const FrontierPoint* pt : {&hom0, &hom10, &het10, &opt10}) {
    CHECK(pt->converged);
    CHECK_FALSE(pt->no_key_at_zero_noise);
    CHECK(pt->eps_below == pt->eps_max * 0.999);
    CHECK(pt->eps_above == pt->eps_max * 1.001);
    CHECK(pt->k_below > 0.0);
    CHECK(pt->k_above < 0.0);
    CHECK(std::abs(pt->k_at_root) <= 1e-6);
    CHECK(pt->iterations > 0);
  }

  // Optimization can only widen the frontier.
  CHECK(opt10.eps_max >= hom10.eps_max);
  CHECK(tolerable_excess_noise(Protocol{PerfectHomodyne{}}, kParams, 0.0, true).eps_max >=
        hom0.eps_max);
}

TEST_CASE("frontier edge cases") {
  // No modulation, no key, no root to hunt for.
  const FrontierPoint none =
      tolerable_excess_noise(Protocol{PerfectHomodyne{}}, ProtocolParams{1.0, 1.0}, 3.0, false);
  CHECK(none.no_key_at_zero_noise);
  CHECK(none.eps_max == 0.0);
  CHECK(none.converged);

  // Rate still positive at the cap: refused, not guessed.
  CHECK_THROWS_AS(
      tolerable_excess_noise(Protocol{PerfectHomodyne{}}, kParams, 0.0, false, 100.0, 0.1),
      solver_error);

  // The fixed-chi_d frontier of a noisy protocol reports that detector's
  // chi_d alongside the root.
  const DetectorModel det;
  const FrontierPoint noisy =
      tolerable_excess_noise(Protocol{NoisyHomodyne{det}}, kParams, 3.0, false);
  const ChannelModel at_root = ChannelModel::from_loss_db(3.0, noisy.eps_max);
  CHECK_THAT(noisy.chi_d_star, WithinRel(noise_budget(at_root, det).chi_d, 1e-12));
}

TEST_CASE("gain from electronic noise target") {
  const DetectorModel det;
  CHECK(gain_for_electronic_noise(det, 0.041) == 1.0);
  CHECK(gain_for_electronic_noise(det, 0.0041) == 10.0);
  CHECK(gain_for_electronic_noise(det, 0.0205) == 2.0);
  CHECK_THROWS_AS(gain_for_electronic_noise(det, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gain_for_electronic_noise(det, -0.01), std::invalid_argument);
}

TEST_CASE("gain plan for a target detection noise") {
  const DetectorModel det;

  // Round trip: the chi_d this detector already produces maps back to its
  // own calibration noise and unit gain.
  const double chi_d_cal = expected::chi_d_eta606_nel041;
  const GainPlan plan = gain_for_target_noise(det, chi_d_cal);
  CHECK(plan.feasible_at_fixed_eta);
  CHECK(plan.within_hardware_range);
  CHECK_THAT(plan.n_el_target, WithinRel(0.041, 1e-12));
  CHECK_THAT(plan.gain, WithinRel(1.0, 1e-12));
  DetectorModel scaled = det;
  scaled.lo_gain = plan.gain;
  CHECK_THAT(scaled.effective_n_el(), WithinRel(plan.n_el_target, 1e-12));

  // Target below the vacuum floor (1-eta)/eta: no electronic noise can do it.
  const GainPlan vac = gain_for_target_noise(det, 0.5);
  CHECK_FALSE(vac.feasible_at_fixed_eta);
  CHECK(std::isnan(vac.gain));
  CHECK_FALSE(vac.within_hardware_range);

  // Feasible but the hardware cannot push the LO that hard.
  const double chi_tiny = (1.0 - det.eta) / det.eta + 0.002 / det.eta;
  const GainPlan hard = gain_for_target_noise(det, chi_tiny);
  CHECK(hard.feasible_at_fixed_eta);
  CHECK_THAT(hard.n_el_target, WithinRel(0.002, 1e-9));
  CHECK(hard.gain > kMaxLoGain);
  CHECK_FALSE(hard.within_hardware_range);

  CHECK_THROWS_AS(gain_for_target_noise(DetectorModel{1.0, 0.0, 1.0, 1e8}, 0.1),
                  std::invalid_argument);
}
