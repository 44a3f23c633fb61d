#include <catch2/catch_amalgamated.hpp>

#include "cvqkd/core.hpp"
#include "expected_values.hpp"

using namespace cvqkd;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("dB / transmission conversions") {
  CHECK(db_to_transmission(0.0) == 1.0);
  CHECK_THAT(db_to_transmission(3.0), WithinRel(expected::t_3db, 1e-15));
  CHECK_THAT(db_to_transmission(10.0), WithinRel(0.1, 1e-15));
  CHECK_THAT(transmission_to_db(0.5), WithinRel(3.0102999566398120, 1e-15));

  for (double db : {0.0, 0.25, 3.0, 7.5, 20.0, 30.0})
    CHECK_THAT(transmission_to_db(db_to_transmission(db)), WithinAbs(db, 1e-12));

  CHECK_THROWS_AS(db_to_transmission(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(transmission_to_db(0.0), std::invalid_argument);
  CHECK_THROWS_AS(transmission_to_db(1.5), std::invalid_argument);
}

TEST_CASE("parameter validation") {
  CHECK_NOTHROW(ProtocolParams{1.0, 1.0}.validate());
  CHECK_NOTHROW(ProtocolParams{40.0, 0.95}.validate());
  CHECK_THROWS_AS((ProtocolParams{0.5, 1.0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ProtocolParams{40.0, 0.0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((ProtocolParams{40.0, 1.5}.validate()), std::invalid_argument);

  CHECK_NOTHROW(ChannelModel::from_loss_db(3.0, 0.2));
  CHECK_THROWS_AS(ChannelModel::from_loss_db(3.0, -0.1), std::invalid_argument);
  // loss_db and t must agree; a hand-built inconsistent pair is rejected.
  ChannelModel bad{3.0, 0.6, 0.0};
  CHECK_THROWS_WITH(bad.validate(), ContainsSubstring("inconsistent"));

  const ChannelModel half = ChannelModel::from_transmission(0.5, 0.2);
  CHECK(half.t == 0.5);
  CHECK_THAT(half.loss_db, WithinRel(3.0102999566398120, 1e-15));
  CHECK_NOTHROW(half.validate());

  DetectorModel det;
  CHECK_NOTHROW(det.validate());
  det.eta = 0.0;
  CHECK_THROWS_AS(det.validate(), std::invalid_argument);
  det.eta = 1.2;
  CHECK_THROWS_AS(det.validate(), std::invalid_argument);
  det = DetectorModel{};
  det.lo_gain = 0.0;
  CHECK_THROWS_AS(det.validate(), std::invalid_argument);
}

TEST_CASE("LO gain rescales the effective electronic noise") {
  DetectorModel det;
  CHECK(det.effective_n_el() == 0.041);
  det.lo_gain = 2.0;
  CHECK(det.effective_n_el() == 0.0205);
  det.lo_gain = 10.0;
  CHECK(det.effective_n_el() == 0.0041);
}

TEST_CASE("noise budget composition") {
  const ChannelModel ch = ChannelModel::from_loss_db(3.0, 0.1);
  const DetectorModel det;  // eta=0.606, n_el=0.041
  const NoiseBudget nb = noise_budget(ch, det);

  CHECK_THAT(nb.chi_c, WithinRel((1.0 - ch.t) / ch.t + 0.1, 1e-15));
  CHECK_THAT(nb.chi_d, WithinRel(expected::chi_d_eta606_nel041, 1e-15));
  CHECK_THAT(nb.chi_t, WithinRel(nb.chi_c + nb.chi_d / ch.t, 1e-15));
  REQUIRE(nb.epr_noise_variance.has_value());
  CHECK_THAT(*nb.epr_noise_variance, WithinRel(expected::epr_n_eta606_nel041, 1e-15));

  // Lossless detector: no EPR ancilla, chi_d reduces to the electronic part.
  const NoiseBudget ideal = noise_budget(ch, DetectorModel{1.0, 0.0, 1.0, 1e8});
  CHECK(ideal.chi_d == 0.0);
  CHECK_FALSE(ideal.epr_noise_variance.has_value());

  // Identity channel: chi_t = chi_c + chi_d exactly (t = 1).
  const NoiseBudget id = noise_budget(ChannelModel::from_loss_db(0.0, 0.0), det);
  CHECK(id.chi_c == 0.0);
  CHECK(id.chi_t == id.chi_d);
}

TEST_CASE("link covariance in standard form") {
  const ProtocolParams params{40.0, 1.0};

  const TwoModeCovariance ident =
      covariance_from_link(params, ChannelModel::from_loss_db(0.0, 0.0));
  CHECK(ident.a == 40.0);
  CHECK(ident.b == 40.0);
  CHECK_THAT(ident.c, WithinRel(std::sqrt(1599.0), 1e-15));

  const ChannelModel t01 = ChannelModel::from_loss_db(10.0, 0.0);
  const TwoModeCovariance cov = covariance_from_link(params, t01);
  CHECK(cov.a == 40.0);
  CHECK_THAT(cov.b, WithinRel(t01.t * (40.0 + (1.0 - t01.t) / t01.t), 1e-14));
  CHECK_THAT(cov.c, WithinRel(expected::cov_c_v40_t01, 1e-13));
}

TEST_CASE("symplectic spectrum of physical states") {
  // Pure EPR state through the identity channel: degenerate vacuum pair.
  const SymplecticPair pure = symplectic_pair(TwoModeCovariance{40.0, 40.0, std::sqrt(1599.0)});
  CHECK_THAT(pure.lambda1, WithinAbs(1.0, 1e-12));
  CHECK_THAT(pure.lambda2, WithinAbs(1.0, 1e-12));

  // Lossy but noiseless: lambda1 = 1, lambda2 = V(1-T) + T.
  const ProtocolParams params{40.0, 1.0};
  const TwoModeCovariance cov =
      covariance_from_link(params, ChannelModel::from_transmission(0.5, 0.0));
  const SymplecticPair lam = symplectic_pair(cov);
  CHECK_THAT(lam.lambda1, WithinAbs(1.0, 1e-9));
  CHECK_THAT(lam.lambda2, WithinRel(20.5, 1e-9));

  // Product invariant lambda1 lambda2 = det-root D, on a noisy state.
  const TwoModeCovariance noisy =
      covariance_from_link(params, ChannelModel::from_loss_db(7.0, 0.3));
  const SymplecticPair ln = symplectic_pair(noisy);
  const double d = noisy.a * noisy.b - noisy.c * noisy.c;
  CHECK_THAT(ln.lambda1 * ln.lambda2, WithinRel(d, 1e-12));
  CHECK(ln.lambda1 >= 1.0 - 1e-9);
  CHECK(ln.lambda2 >= ln.lambda1);
}

TEST_CASE("unphysical covariances are rejected") {
  // Correlations beyond the uncertainty bound.
  CHECK_THROWS_AS(symplectic_pair(TwoModeCovariance{2.0, 2.0, 2.5}), unphysical_state_error);
  // Below-vacuum diagonal.
  CHECK_THROWS_AS(symplectic_pair(TwoModeCovariance{0.5, 0.5, 0.0}), unphysical_state_error);
  // Non-finite input.
  CHECK_THROWS_AS(
      symplectic_pair(TwoModeCovariance{std::numeric_limits<double>::quiet_NaN(), 1.0, 0.0}),
      unphysical_state_error);
}

TEST_CASE("thermal entropy g") {
  CHECK(g_entropy(0.0) == 0.0);
  CHECK_THAT(g_entropy(0.5), WithinRel(expected::g_entropy_half, 1e-15));
  CHECK(g_entropy(1e-12) > 0.0);
  CHECK(g_entropy(10.0) > g_entropy(1.0));
  CHECK_THROWS_AS(g_entropy(-0.1), std::invalid_argument);
  CHECK_THROWS_AS(g_entropy(std::numeric_limits<double>::infinity()), std::invalid_argument);
}
