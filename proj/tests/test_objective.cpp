#include <doctest.h>

#include <cmath>

#include "saslm/objective.hpp"

using namespace saslm;

namespace {

// log-probability rows that put probability p on the target column.
MatF logp_rows(const std::vector<double>& target_probs, int vocab, const std::vector<int>& targets) {
  MatF rows(static_cast<Eigen::Index>(target_probs.size()), vocab);
  for (std::size_t i = 0; i < target_probs.size(); ++i) {
    double rest = (1.0 - target_probs[i]) / (vocab - 1);
    for (int c = 0; c < vocab; ++c) rows(static_cast<Eigen::Index>(i), c) = static_cast<float>(std::log(rest));
    rows(static_cast<Eigen::Index>(i), targets[i]) = static_cast<float>(std::log(target_probs[i]));
  }
  return rows;
}

}  // namespace

TEST_CASE("mlm loss is the mean negative log-probability of the targets") {
  Tape<float> tape;
  SUBCASE("probability one on every target gives zero loss") {
    MatF rows = logp_rows({1.0 - 1e-12, 1.0 - 1e-12}, 8, {1, 2});
    Value<float> loss = mlm_loss(tape, tape.constant(rows), {1, 2});
    CHECK(loss.val()(0, 0) == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("the uniform model over 32 tokens scores ln 32") {
    MatF rows = MatF::Constant(4, 32, static_cast<float>(-std::log(32.0)));
    Value<float> loss = mlm_loss(tape, tape.constant(rows), {0, 5, 9, 31});
    CHECK(loss.val()(0, 0) == doctest::Approx(std::log(32.0)).epsilon(1e-6));
  }
  SUBCASE("two positions at -1 and -3 average to 2") {
    MatF rows(2, 4);
    rows.setConstant(-2.0f);
    rows(0, 1) = -1.0f;
    rows(1, 2) = -3.0f;
    Value<float> loss = mlm_loss(tape, tape.constant(rows), {1, 2});
    CHECK(loss.val()(0, 0) == doctest::Approx(2.0).epsilon(1e-6));
  }
  SUBCASE("an empty position set yields zero with the warning flag") {
    bool empty = false;
    Value<float> loss = mlm_loss(tape, tape.constant(MatF(0, 4)), {}, &empty);
    CHECK(loss.val()(0, 0) == 0.0f);
    CHECK(empty);
  }
}

TEST_CASE("rtd loss matches the worked binary cross-entropy cases") {
  Tape<float> tape;
  auto loss_of = [&tape](std::vector<float> logits, std::vector<std::uint8_t> labels) {
    MatF z(static_cast<Eigen::Index>(logits.size()), 1);
    for (std::size_t i = 0; i < logits.size(); ++i) z(static_cast<Eigen::Index>(i), 0) = logits[i];
    std::vector<std::uint8_t> pad(labels.size(), 1);
    return rtd_loss(tape, tape.constant(z), labels, pad).val()(0, 0);
  };
  SUBCASE("D = 0.5 everywhere costs ln 2 whatever the labels") {
    CHECK(loss_of({0, 0, 0}, {1, 0, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(loss_of({0, 0, 0}, {0, 1, 0}) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
  SUBCASE("a saturated perfect detector at +-30 logits is below 1e-6") {
    CHECK(loss_of({30, -30, 30}, {1, 0, 1}) < 1e-6f);
  }
  SUBCASE("hand arithmetic: y=[1,0], D=[0.9,0.2] costs about 0.1643") {
    float z_for_09 = std::log(0.9f / 0.1f);
    float z_for_02 = std::log(0.2f / 0.8f);
    CHECK(loss_of({z_for_09, z_for_02}, {1, 0}) == doctest::Approx(0.164252).epsilon(1e-4));
  }
  SUBCASE("padded positions contribute nothing") {
    MatF z(2, 1);
    z << 0.0f, 12.0f;
    Value<float> loss = rtd_loss(tape, tape.constant(z), {1, 0}, {1, 0});
    CHECK(loss.val()(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
}

TEST_CASE("lambda schedule covers both published settings") {
  SUBCASE("constant mode holds the start value") {
    LambdaSchedule s{LambdaSchedule::Mode::Constant, 50.0, 200.0, 12};
    for (int e = 0; e < 12; ++e) CHECK(s.value(e) == 50.0);
  }
  SUBCASE("epoch-linear interpolates 50 to 200") {
    LambdaSchedule s{LambdaSchedule::Mode::EpochLinear, 50.0, 200.0, 10};
    CHECK(s.value(0) == doctest::Approx(50.0));
    CHECK(s.value(3) == doctest::Approx(100.0));
    CHECK(s.value(9) == doctest::Approx(200.0));
  }
  SUBCASE("a single-epoch schedule returns the start value") {
    LambdaSchedule s{LambdaSchedule::Mode::EpochLinear, 50.0, 200.0, 1};
    CHECK(s.value(0) == 50.0);
  }
  SUBCASE("epochs outside the range are rejected") {
    LambdaSchedule s{LambdaSchedule::Mode::EpochLinear, 50.0, 200.0, 10};
    CHECK_THROWS_AS(s.value(10), std::invalid_argument);
  }
  SUBCASE("mode names parse both ways") {
    CHECK(LambdaSchedule::parse_mode("constant") == LambdaSchedule::Mode::Constant);
    CHECK(LambdaSchedule::parse_mode("epoch_linear") == LambdaSchedule::Mode::EpochLinear);
    CHECK_THROWS_AS(LambdaSchedule::parse_mode("cosine"), std::invalid_argument);
  }
}

TEST_CASE("combined loss honors total = mlm + lambda * rtd") {
  Tape<float> tape;
  Value<float> mlm = tape.scalar_constant(2.0f);
  Value<float> rtd = tape.scalar_constant(0.01f);
  CHECK(combined_loss(tape, mlm, rtd, 50.0).val()(0, 0) == doctest::Approx(2.5).epsilon(1e-6));
  // doubling lambda exactly doubles the rtd contribution
  float base = combined_loss(tape, mlm, rtd, 50.0).val()(0, 0);
  float doubled = combined_loss(tape, mlm, rtd, 100.0).val()(0, 0);
  CHECK(doubled - base == doctest::Approx(50.0 * 0.01).epsilon(1e-6));
}

TEST_CASE("gradient additivity: d(total) = d(mlm) + lambda * d(rtd) for shared inputs") {
  const double lambda = 7.0;
  MatD x0(3, 2);
  x0 << 0.3, -0.8, 1.2, 0.4, -0.5, 0.9;
  auto grads = [&x0, lambda](int which) {
    Tape<double> tape;
    Value<double> x = tape.leaf(x0, true);
    // Both losses read the same "hidden" leaf, as both heads read f_e.
    Value<double> mlm = scale(mean_all(pick_per_row(log_softmax_rows(x), {0, 1, 0})), -1.0);
    MatD y(3, 1);
    y << 1, 0, 1;
    Value<double> rtd = bce_with_logits_masked_mean(
        pick_per_row(x, {1, 1, 0}), y, {1, 1, 1});
    Value<double> loss = which == 0 ? mlm : which == 1 ? rtd : combined_loss(tape, mlm, rtd, lambda);
    tape.backward(loss);
    return MatD(x.grad());
  };
  MatD g_mlm = grads(0), g_rtd = grads(1), g_total = grads(2);
  CHECK((g_total - (g_mlm + lambda * g_rtd)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mlm loss ignores log-probability rows outside the position set") {
  Tape<float> tape;
  MatF rows = logp_rows({0.7, 0.6, 0.5, 0.4}, 6, {1, 2, 3, 4});
  // Only rows 0 and 2 participate; rows 1 and 3 are "other positions".
  Value<float> all = tape.constant(rows);
  Value<float> base = mlm_loss(tape, row_gather(all, {0, 2}), {1, 3});
  MatF noisy = rows;
  noisy.row(1).setConstant(-50.0f);
  noisy.row(3).setConstant(-0.001f);
  Value<float> perturbed = mlm_loss(tape, row_gather(tape.constant(noisy), {0, 2}), {1, 3});
  CHECK(base.val()(0, 0) == perturbed.val()(0, 0));
}
