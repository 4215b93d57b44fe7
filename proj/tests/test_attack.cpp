#include <gtest/gtest.h>

#include "roast/attack.hpp"
#include "roast/cohort.hpp"

using namespace roast;

namespace {

// Predicts the mean of the last two label values; windows are [hr x2, aux x2].
ForecastModel mean_model() {
    auto m = ForecastModel::make_linear(4);
    m.w = {0.5, 0.5, 0.0, 0.0};
    return m;
}

AttackConfig hr_attack() {
    AttackConfig c;
    c.attacked_feature = "hr";
    c.bounds = {40, 140};
    c.n_candidates = 16;
    c.seed = 5;
    return c;
}

Cohort tiny_cohort() {
    Cohort c;
    c.schema = {"hr", "aux"};
    c.label_channel = "hr";
    c.states.safe["hr"] = {50, 120};
    c.patients.push_back({"a", c.schema, {0, 1, 2, 3}, {{80, 90, 100, 130}, {1, 1, 1, 1}}, std::string("hr")});
    c.patients.push_back({"b", c.schema, {0, 1, 2, 3}, {{60, 62, 64, 66}, {1, 1, 1, 1}}, std::string("hr")});
    return c;
}

}  // namespace

TEST(Fgsm, ZeroEpsilonIsIdentity) {
    const auto cohort = synth_cohort(1, 4, 60, {1, 1, 5, 5});
    auto m = ForecastModel::make_linear(12);
    for (std::size_t j = 0; j < 12; ++j) m.w[j] = 0.1 * static_cast<double>(j) - 0.3;
    auto cfg = hr_attack();
    cfg.mode = AttackMode::fgsm;
    cfg.epsilon = 0.0;
    const auto coords = attacked_coordinates(0, 6);
    for (const auto& p : cohort.patients)
        for (const auto& w : windowize(p, 6, 1)) EXPECT_EQ(fgsm_perturb(m, w, 50.0, cfg, coords), w);
}

TEST(Fgsm, StepsAlongLossGradientSign) {
    auto m = mean_model();
    m.w = {0.5, -0.5, 0.0, 0.0};
    auto cfg = hr_attack();
    cfg.epsilon = 2.0;
    const std::vector<double> x{100, 90, 7, 7};
    // prediction 5, target 0: loss grows when the prediction grows.
    const auto adv = fgsm_perturb(m, x, 0.0, cfg, attacked_coordinates(0, 2));
    EXPECT_EQ(adv, (std::vector<double>{102, 88, 7, 7}));
}

TEST(Fgsm, ClampsAttackedCoordinates) {
    auto cfg = hr_attack();
    cfg.epsilon = 50.0;
    const auto adv = fgsm_perturb(mean_model(), {130, 130, 0, 0}, 0.0, cfg, attacked_coordinates(0, 2));
    EXPECT_EQ(adv[0], 140.0);
    EXPECT_EQ(adv[1], 140.0);
}

TEST(Fgsm, FullInputTouchesEveryCoordinate) {
    auto m = mean_model();
    m.w = {0.5, 0.5, 1.0, -1.0};
    auto cfg = hr_attack();
    cfg.epsilon = 1.0;
    cfg.full_input = true;
    const auto adv = fgsm_perturb(m, {80, 80, 3, 3}, 0.0, cfg, attacked_coordinates(0, 2));
    EXPECT_EQ(adv, (std::vector<double>{81, 81, 4, 2}));
}

TEST(Blackbox, CandidatesRaiseWithinBounds) {
    Rng rng(1);
    const auto cfg = hr_attack();
    const std::vector<double> x{100, 150, 5, 5};
    const auto r = blackbox_search(mean_model(), x, cfg, attacked_coordinates(0, 2), rng);
    EXPECT_GE(r.window[0], 100.0);
    EXPECT_LE(r.window[0], 140.0);
    EXPECT_GE(r.window[1], 140.0 - 1e-12);
    EXPECT_LE(r.window[1], 140.0);
    EXPECT_EQ(r.window[2], 5.0);
    EXPECT_TRUE(r.improved);
    EXPECT_DOUBLE_EQ(r.prediction, mean_model().predict(r.window));
}

TEST(Blackbox, TiesKeepLowestIndex) {
    Rng rng(1);
    auto m = ForecastModel::make_linear(4);
    const auto r = blackbox_search(m, {80, 80, 0, 0}, hr_attack(), attacked_coordinates(0, 2), rng);
    EXPECT_EQ(r.candidate_index, 0u);
    EXPECT_FALSE(r.improved);
}

TEST(Blackbox, LowerDirection) {
    Rng rng(2);
    auto cfg = hr_attack();
    cfg.direction = Direction::lower;
    const auto r = blackbox_search(mean_model(), {80, 80, 0, 0}, cfg, attacked_coordinates(0, 2), rng);
    EXPECT_LE(r.window[0], 80.0);
    EXPECT_GE(r.window[0], 40.0);
    EXPECT_LT(r.prediction, 80.0);
}

TEST(Judge, SafeToUnsafeOnly) {
    const Interval safe{50, 120};
    EXPECT_TRUE(judge(100, 125, safe));
    EXPECT_TRUE(judge(60, 45, safe));
    EXPECT_FALSE(judge(100, 110, safe));
    EXPECT_FALSE(judge(130, 140, safe));
    EXPECT_FALSE(judge(130, 100, safe));
    EXPECT_FALSE(judge(100, 120, safe));
}

TEST(AttackConfig, Validation) {
    auto c = hr_attack();
    c.bounds = {10, 10};
    EXPECT_THROW(c.validate(), PreconditionError);
    c = hr_attack();
    c.n_candidates = 0;
    EXPECT_THROW(c.validate(), PreconditionError);
    c = hr_attack();
    c.epsilon = -1;
    EXPECT_THROW(c.validate(), PreconditionError);
}

TEST(SimulateCohort, AttacksOnlySafeWindows) {
    const auto res = simulate_cohort(tiny_cohort(), mean_model(), hr_attack(), 2, 1);
    const auto& a = res.patient("a");
    EXPECT_EQ(a.n_windows, 3u);
    // windows end at 90, 100, 130 -> predictions 85, 95, 115 are all safe.
    EXPECT_EQ(a.n_safe, 3u);
    ASSERT_EQ(a.outcomes.size(), 3u);
    EXPECT_EQ(a.outcomes[2].t, 3);
    for (const auto& o : a.outcomes) EXPECT_EQ(o.success, judge(o.pred_benign, o.pred_adv, {50, 120}));
    ASSERT_TRUE(a.success_rate().has_value());
    EXPECT_THROW(res.patient("zz"), PreconditionError);
}

TEST(SimulateCohort, NoSafeWindowGivesEmptyRate) {
    auto c = tiny_cohort();
    c.patients[1].channels[0] = {130, 131, 132, 133};
    const auto res = simulate_cohort(c, mean_model(), hr_attack(), 2, 1);
    EXPECT_EQ(res.patient("b").n_safe, 0u);
    EXPECT_FALSE(res.patient("b").success_rate().has_value());
}

TEST(SimulateCohort, IndependentOfJobs) {
    const auto c = synth_cohort(4, 6, 60, {1, 1, 1, 9, 9, 9});
    auto m = ForecastModel::make_linear(12);
    for (std::size_t j = 0; j < 6; ++j) m.w[j] = 1.0 / 6.0;
    const auto a = simulate_cohort(c, m, hr_attack(), 6, 1, 1);
    const auto b = simulate_cohort(c, m, hr_attack(), 6, 1, 4);
    EXPECT_EQ(serialize_attack(a), serialize_attack(b));
}

TEST(SimulateCohort, RecordRoundTrip) {
    const auto res = simulate_cohort(tiny_cohort(), mean_model(), hr_attack(), 2, 1);
    const auto text = serialize_attack(res);
    EXPECT_EQ(serialize_attack(deserialize_attack(text)), text);
    const auto csv = attack_outcomes_csv(res);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "patient_id,t,benign,adversarial,pred_benign,pred_adv,success");
}

TEST(SimulateCohort, RejectsDimensionMismatch) {
    EXPECT_THROW(simulate_cohort(tiny_cohort(), ForecastModel::make_linear(3), hr_attack(), 2, 1), DimensionError);
}

TEST(Blackbox, WinnerDominatesEveryCandidate) {
    auto m = mean_model();
    m.w = {0.7, -0.2, 0.1, 0.0};
    auto cfg = hr_attack();
    cfg.n_candidates = 5;
    const auto coords = attacked_coordinates(0, 2);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const std::vector<double> x{70.0 + static_cast<double>(seed), 90, 3, 4};
        Rng rng(seed);
        const auto r = blackbox_search(m, x, cfg, coords, rng);
        // Regenerate the same candidates from an identical stream.
        Rng replay(seed);
        for (std::size_t c = 0; c < cfg.n_candidates; ++c) {
            auto cand = x;
            for (std::size_t j : coords) cand[j] = replay.uniform(std::clamp(x[j], cfg.bounds.lo, cfg.bounds.hi), cfg.bounds.hi);
            const double p = m.predict(cand);
            EXPECT_GE(r.prediction, p);
            if (c == r.candidate_index) {
                EXPECT_EQ(cand, r.window);
                EXPECT_EQ(p, r.prediction);
            }
        }
    }
}

TEST(Judge, HighPredictionPastUpperBoundSucceeds) {
    EXPECT_TRUE(judge(90, 210, {70, 125}));
    EXPECT_FALSE(judge(90, 120, {70, 125}));
}

TEST(SimulateCohort, NearBoundaryPatientIsMostVulnerable) {
    Cohort c;
    c.schema = {"hr", "aux"};
    c.label_channel = "hr";
    c.states.safe["hr"] = {50, 120};
    const double levels[3] = {65, 85, 112};
    const char* ids[3] = {"low", "mid", "edge"};
    for (int i = 0; i < 3; ++i) {
        PatientSeries p{ids[i], c.schema, {}, {{}, {}}, std::string("hr")};
        for (int t = 0; t < 40; ++t) {
            p.timestamps.push_back(t);
            p.channels[0].push_back(levels[i] + (t % 3));
            p.channels[1].push_back(1);
        }
        c.patients.push_back(p);
    }
    auto cfg = hr_attack();
    cfg.n_candidates = 2;
    const auto res = simulate_cohort(c, mean_model(), cfg, 2, 1);
    const double edge = *res.patient("edge").success_rate();
    EXPECT_GT(edge, *res.patient("mid").success_rate());
    EXPECT_GT(edge, *res.patient("low").success_rate());
}
