#include <catch2/catch_amalgamated.hpp>

#include "cvqkd/keyrate.hpp"
#include "expected_values.hpp"

using namespace cvqkd;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
const ProtocolParams kParams{40.0, 1.0};
const DetectorModel kDet;  // eta=0.606, n_el=0.041, G=1
}  // namespace

TEST_CASE("mutual information anchors") {
  const ChannelModel ident = ChannelModel::from_loss_db(0.0, 0.0);
  CHECK_THAT(mutual_information(Protocol{PerfectHomodyne{}}, kParams, ident),
             WithinRel(expected::iab_hom_v40_ident, 1e-14));
  CHECK_THAT(mutual_information(Protocol{PerfectHomodyne{}}, kParams, ident),
             WithinRel(0.5 * std::log2(40.0), 1e-14));
  CHECK_THAT(mutual_information(Protocol{Heterodyne{}}, kParams, ident),
             WithinRel(std::log2(41.0 / 2.0), 1e-14));

  const ChannelModel ch3 = ChannelModel::from_loss_db(3.0, 0.25);
  CHECK_THAT(mutual_information(Protocol{NoisyHomodyne{kDet}}, kParams, ch3),
             WithinRel(expected::iab_noisy_v40_3db_eps025, 1e-13));

  // Trusted detection noise can only reduce what Bob resolves.
  CHECK(mutual_information(Protocol{NoisyHomodyne{kDet}}, kParams, ch3) <
        mutual_information(Protocol{PerfectHomodyne{}}, kParams, ch3));
}

TEST_CASE("key rate anchors") {
  const ChannelModel ch10 = ChannelModel::from_loss_db(10.0, 0.0);
  const KeyRateBreakdown hom = key_rate(Protocol{PerfectHomodyne{}}, kParams, ch10);
  CHECK_THAT(hom.chi_be, WithinRel(expected::chibe_hom_v40_10db_eps0, 1e-11));
  CHECK_THAT(hom.k_raw, WithinRel(expected::k_hom_v40_10db_eps0, 1e-9));

  const ChannelModel ch5 = ChannelModel::from_loss_db(5.0, 0.2);
  CHECK_THAT(key_rate(Protocol{NoisyHomodyne{kDet}}, kParams, ch5).k_raw,
             WithinRel(expected::k_noisy_v40_5db_eps02, 1e-9));
  CHECK_THAT(key_rate(Protocol{Heterodyne{}}, kParams, ch5).k_raw,
             WithinRel(expected::k_het_v40_5db_eps02, 1e-9));
}

TEST_CASE("identity channel leaks nothing") {
  const ChannelModel ident = ChannelModel::from_loss_db(0.0, 0.0);
  for (double v : {1.5, 10.0, 40.0, 100.0}) {
    const ProtocolParams p{v, 1.0};
    for (const Protocol& proto :
         {Protocol{PerfectHomodyne{}}, Protocol{Heterodyne{}}, Protocol{NoisyHomodyne{kDet}}}) {
      const KeyRateBreakdown kb = key_rate(proto, p, ident);
      CHECK(kb.chi_be <= 1e-9);
      CHECK(kb.chi_be >= 0.0);
    }
    CHECK_THAT(key_rate(Protocol{PerfectHomodyne{}}, p, ident).i_ab,
               WithinAbs(0.5 * std::log2(v), 1e-12));
  }
}

TEST_CASE("noisy homodyne with a perfect detector is perfect homodyne") {
  const DetectorModel perfect{1.0, 0.0, 1.0, 1e8};
  for (double loss : {0.0, 2.0, 7.5, 15.0}) {
    for (double eps : {0.0, 0.05, 0.3}) {
      const ChannelModel ch = ChannelModel::from_loss_db(loss, eps);
      const double k_nh = key_rate(Protocol{NoisyHomodyne{perfect}}, kParams, ch).k_raw;
      const double k_ph = key_rate(Protocol{PerfectHomodyne{}}, kParams, ch).k_raw;
      CHECK_THAT(k_nh, WithinAbs(k_ph, 1e-9));
    }
  }
}

TEST_CASE("added-noise objective matches the protocol rate") {
  const ChannelModel ch = ChannelModel::from_loss_db(5.0, 0.2);

  // chi_d = 0 goes through the ideal-homodyne expression, bit for bit.
  const KeyRateBreakdown at0 = homodyne_rate_with_added_noise(kParams, ch, 0.0);
  const KeyRateBreakdown ph = key_rate(Protocol{PerfectHomodyne{}}, kParams, ch);
  CHECK(at0.k_raw == ph.k_raw);
  CHECK(at0.chi_be == ph.chi_be);

  // chi_d from a concrete detector reproduces that detector's rate exactly:
  // same noise value, same formulas.
  const double chi_d = noise_budget(ch, kDet).chi_d;
  const KeyRateBreakdown via_chi = homodyne_rate_with_added_noise(kParams, ch, chi_d);
  const KeyRateBreakdown via_det = key_rate(Protocol{NoisyHomodyne{kDet}}, kParams, ch);
  CHECK(via_chi.k_raw == via_det.k_raw);
  CHECK(via_chi.chi_be == via_det.chi_be);

  CHECK_THROWS_AS(homodyne_rate_with_added_noise(kParams, ch, -0.5), std::invalid_argument);
}

TEST_CASE("trusted noise helps at high loss") {
  const ChannelModel ch15 = ChannelModel::from_loss_db(15.0, 0.25);
  const double k0 = homodyne_rate_with_added_noise(kParams, ch15, 0.0).k_raw;
  const double k3 = homodyne_rate_with_added_noise(kParams, ch15, 3.0).k_raw;
  CHECK_THAT(k0, WithinRel(expected::k_chid0_v40_15db_eps025, 1e-9));
  CHECK(k3 > k0);
}

TEST_CASE("breakdown bookkeeping") {
  const ChannelModel ch = ChannelModel::from_loss_db(5.0, 0.2);

  const KeyRateBreakdown hom = key_rate(Protocol{PerfectHomodyne{}}, kParams, ch);
  CHECK(hom.k_raw == kParams.beta * hom.i_ab - hom.chi_be);
  CHECK(hom.lambdas.conditional_count == 1);

  const KeyRateBreakdown het = key_rate(Protocol{Heterodyne{}}, kParams, ch);
  CHECK(het.lambdas.conditional_count == 1);

  const KeyRateBreakdown noisy = key_rate(Protocol{NoisyHomodyne{kDet}}, kParams, ch);
  CHECK(noisy.lambdas.conditional_count == 2);
  CHECK(noisy.chi_be == noisy.s_e - noisy.s_e_given_b);
  CHECK_FALSE(noisy.chi_be_clamped);

  // Reconciliation efficiency only scales the Shannon term.
  const ProtocolParams beta95{40.0, 0.95};
  const KeyRateBreakdown kb = key_rate(Protocol{PerfectHomodyne{}}, beta95, ch);
  CHECK_THAT(kb.k_raw, WithinAbs(0.95 * kb.i_ab - kb.chi_be, 1e-15));

  // Spectrum invariants on the stored eigenvalues.
  const detail::LinkState st = detail::link_state(kParams, ch);
  const double d = st.a * st.b - st.c * st.c;
  CHECK_THAT(noisy.lambdas.lambda1 * noisy.lambdas.lambda2, WithinRel(d, 1e-9));
  CHECK(noisy.lambdas.lambda1 >= 1.0 - 1e-9);
  for (std::size_t i = 0; i < noisy.lambdas.conditional_count; ++i)
    CHECK(noisy.lambdas.conditional[i] >= 1.0 - 1e-9);
}

TEST_CASE("lossless noiseless spectra are pure") {
  // eps = 0 keeps Eve's state pure on the lambda1 branch for any loss.
  for (double loss : {0.5, 3.0, 10.0, 20.0}) {
    const ChannelModel ch = ChannelModel::from_loss_db(loss, 0.0);
    const KeyRateBreakdown kb = key_rate(Protocol{PerfectHomodyne{}}, kParams, ch);
    CHECK_THAT(kb.lambdas.lambda1, WithinAbs(1.0, 1e-9));
    CHECK_THAT(kb.lambdas.lambda2, WithinRel(40.0 * (1.0 - ch.t) + ch.t, 1e-9));
  }
}
