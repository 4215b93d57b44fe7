#include <gtest/gtest.h>

#include <cmath>

#include "roast/log.hpp"
#include "roast/risk.hpp"
#include "roast/rng.hpp"

using namespace roast;

namespace {

CohortAttack make_attack(const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& spec) {
    // One feature ("hr") and window length 1: the window holds the value itself.
    CohortAttack a;
    a.attacked_feature = "hr";
    a.window_length = 1;
    for (const auto& [id, pairs] : spec) {
        PatientAttack p;
        p.patient_id = id;
        p.n_windows = p.n_safe = pairs.size();
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            AttackOutcome o;
            o.window_index = k;
            o.t = static_cast<std::int64_t>(k);
            o.benign_window = {pairs[k].first};
            o.adversarial_window = {pairs[k].second};
            p.outcomes.push_back(o);
        }
        a.patients.push_back(p);
    }
    return a;
}

struct CaptureWarnings {
    std::vector<std::string> seen;
    WarningSink old;
    CaptureWarnings() { old = set_warning_sink([this](const std::string& m) { seen.push_back(m); }); }
    ~CaptureWarnings() { set_warning_sink(old); }
};

}  // namespace

TEST(InstantaneousRisk, GlucoseExample) {
    EXPECT_EQ(instantaneous_risk(90, 210, -10.78), -155232.0);
    EXPECT_EQ(instantaneous_risk(90, 90, -10.78), 0.0);
    EXPECT_EQ(instantaneous_risk(210, 90, -10.78), instantaneous_risk(90, 210, -10.78));
}

TEST(InstantaneousRisk, QuadraticInDeviation) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        // Integer values keep (o + 2d) - o == 2d exact; S stays an arbitrary real.
        const double o = std::floor(rng.uniform(-100, 100)), d = std::floor(rng.uniform(-50, 50)), s = rng.uniform(-20, 20);
        EXPECT_EQ(instantaneous_risk(o, o + 2 * d, s), 4 * instantaneous_risk(o, o + d, s)) << o << ' ' << d << ' ' << s;
    }
}

TEST(SeverityLinear, ExactOnNoiselessData) {
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    for (int i = 0; i < 20; ++i) {
        X.push_back({static_cast<double>(i)});
        y.push_back(3.0 * i);
    }
    const auto m = fit_severity_linear(X, y, {"x"}, "x");
    EXPECT_NEAR(m.S(), 3.0, 1e-12);
    EXPECT_NEAR(m.intercept, 0.0, 1e-10);
}

TEST(SeverityLinear, RecoversPlantedGlucoseCoefficient) {
    Rng rng(2);
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    for (int i = 0; i < 500; ++i) {
        const double cgm = rng.uniform(60, 250), hr = rng.uniform(50, 110);
        X.push_back({cgm, hr});
        y.push_back(-10.78 * cgm + 0.3 * hr + 12.0);
    }
    const auto m = fit_severity_linear(X, y, {"cgm", "hr"}, "cgm");
    EXPECT_NEAR(m.S(), -10.78, 1e-10);
    EXPECT_NEAR(m.coefficient("hr"), 0.3, 1e-10);
    EXPECT_THROW(m.coefficient("spo2"), SchemaError);
}

TEST(SeverityLinear, ConstantColumnIsRankError) {
    std::vector<std::vector<double>> X{{1, 5}, {2, 5}, {3, 5}, {4, 5}};
    std::vector<double> y{1, 2, 3, 4};
    try {
        fit_severity_linear(X, y, {"a", "const"}, "a");
        FAIL();
    } catch (const RankError& e) {
        const std::string msg = e.what();
        EXPECT_TRUE(msg.find("const") != std::string::npos || msg.find("intercept") != std::string::npos) << msg;
    }
}

TEST(SeverityLinear, Preconditions) {
    EXPECT_THROW(fit_severity_linear({{1}, {1}}, {1, 2}, {"a"}, "a"), PreconditionError);
    EXPECT_THROW(fit_severity_linear({{1}, {2}}, {1, 2}, {"a"}, "b"), SchemaError);
    EXPECT_THROW(fit_severity_linear({{1}, {2}}, {1}, {"a"}, "a"), PreconditionError);
}

TEST(SeverityLogistic, RecoversPlantedCoefficient) {
    Rng rng(3);
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    for (int i = 0; i < 5000; ++i) {
        const double x = rng.normal() * 2.0, z = rng.normal();
        const double p = 1.0 / (1.0 + std::exp(-(-0.76 * x + 0.4 * z + 0.2)));
        X.push_back({x, z});
        y.push_back(rng.uniform() < p ? 1 : 0);
    }
    const auto m = fit_severity_logistic(X, y, {"x", "z"}, "x");
    EXPECT_NEAR(m.S(), -0.76, 0.076);
}

TEST(SeverityLogistic, NoAssociationGivesNearZero) {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    for (int i = -50; i <= 50; ++i) {
        X.push_back({static_cast<double>(i)});
        X.push_back({static_cast<double>(i)});
        y.push_back(0);
        y.push_back(1);
    }
    const auto m = fit_severity_logistic(X, y, {"x"}, "x");
    EXPECT_LT(std::abs(m.S()), 0.05);
}

TEST(SeverityLogistic, SingleClassAndSeparation) {
    EXPECT_THROW(fit_severity_logistic({{1}, {2}, {3}}, {1, 1, 1}, {"x"}, "x"), PreconditionError);
    CaptureWarnings w;
    const auto m = fit_severity_logistic({{1}, {2}, {3}, {4}}, {0, 0, 1, 1}, {"x"}, "x");
    EXPECT_TRUE(std::isfinite(m.S()));
    EXPECT_GT(m.S(), 0.0);
    ASSERT_EQ(w.seen.size(), 1u);
    EXPECT_NE(w.seen[0].find("norm cap"), std::string::npos);
}

TEST(BuildProfiles, OrderAndValues) {
    const auto a = make_attack({{"a", {{1, 3}, {2, 2}, {0, 5}}}, {"b", {{4, 1}}}});
    const auto ps = build_profiles(a, {"hr"}, {{"hr", 2.0}});
    ASSERT_EQ(ps.size(), 2u);
    EXPECT_EQ(ps[0].values, (std::vector<double>{8, 0, 50}));
    EXPECT_EQ(ps[0].t, (std::vector<std::int64_t>{0, 1, 2}));
    EXPECT_EQ(ps[1].values, (std::vector<double>{18}));
}

TEST(BuildProfiles, NoOpAttackGivesZeros) {
    const auto a = make_attack({{"a", {{1, 1}, {7, 7}}}});
    const auto ps = build_profiles(a, {"hr"}, {{"hr", -4.0}});
    for (double v : ps[0].values) EXPECT_EQ(v, 0.0);
}

TEST(BuildProfiles, SingleFactorEqualsDirectFormula) {
    Rng rng(4);
    std::vector<std::pair<double, double>> pairs;
    for (int i = 0; i < 200; ++i) pairs.push_back({rng.uniform(40, 200), rng.uniform(40, 200)});
    const auto ps = build_profiles(make_attack({{"a", pairs}}), {"hr"}, {{"hr", -10.78}});
    for (std::size_t k = 0; k < pairs.size(); ++k) EXPECT_EQ(ps[0].values[k], instantaneous_risk(pairs[k].first, pairs[k].second, -10.78));
}

TEST(BuildProfiles, TwoFactorsAreAdditive) {
    CohortAttack a;
    a.attacked_feature = "hr";
    a.window_length = 2;
    PatientAttack p;
    p.patient_id = "a";
    AttackOutcome o;
    o.benign_window = {0, 10, 0, 100};
    o.adversarial_window = {0, 13, 0, 98};
    p.outcomes = {o};
    a.patients = {p};
    const std::vector<std::string> schema{"hr", "aux"};
    const double both = build_profiles(a, schema, {{"hr", 2.0}, {"aux", -1.0}})[0].values[0];
    const double hr = build_profiles(a, schema, {{"hr", 2.0}})[0].values[0];
    const double aux = build_profiles(a, schema, {{"aux", -1.0}})[0].values[0];
    EXPECT_EQ(both, hr + aux);
    EXPECT_EQ(both, 18.0 - 4.0);
}

TEST(BuildProfiles, PatientWithoutOutcomesIsSkippedWithWarning) {
    CaptureWarnings w;
    const auto a = make_attack({{"a", {{1, 2}}}, {"empty", {}}});
    const auto ps = build_profiles(a, {"hr"}, {{"hr", 1.0}});
    EXPECT_EQ(ps.size(), 1u);
    ASSERT_EQ(w.seen.size(), 1u);
    EXPECT_NE(w.seen[0].find("empty"), std::string::npos);
    EXPECT_THROW(build_profiles(a, {"hr"}, {{"spo2", 1.0}}), SchemaError);
}

TEST(RiskRecords, CsvAndJsonRoundTrip) {
    const auto ps = build_profiles(make_attack({{"a", {{1, 3}, {2, 2.5}}}, {"b", {{4, 1}}}}), {"hr"}, {{"hr", 0.1}});
    const auto back = parse_profiles_csv(profiles_csv(ps));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].values, ps[0].values);
    EXPECT_THROW(parse_profiles_csv("x,y\n"), ParseError);

    SeverityModel m{FitKind::logistic, {"hr", "aux"}, {-0.76, 0.1}, 0.5, "unsafe", "hr"};
    const auto r = severity_from_json(to_json(m));
    EXPECT_EQ(r.coefficients, m.coefficients);
    EXPECT_EQ(r.fit_kind, FitKind::logistic);
    EXPECT_EQ(to_json(m)["S"], -0.76);
}
