#include <gtest/gtest.h>

#include <set>

#include "roast/strategy.hpp"

using namespace roast;

namespace {

// Patient i has 4 benign windows valued 100*i + k and `adv` adversarial windows
// valued -(100*i + k), so every window names its source.
PatientPools make_pools(std::size_t n, std::size_t adv = 6) {
    PatientPools p;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string id = "p" + std::to_string(i);
        p.ids.push_back(id);
        for (std::size_t k = 0; k < 4; ++k) p.benign[id].push_back({100.0 * i + k});
        for (std::size_t k = 0; k < adv; ++k) p.adversarial[id].push_back({-(100.0 * i + k) - 1});
    }
    return p;
}

ClusterAssignment groups_of(std::vector<std::string> lv, std::vector<std::string> mv) {
    ClusterAssignment a;
    a.less_vulnerable = std::move(lv);
    a.more_vulnerable = std::move(mv);
    return a;
}

std::string owner(const std::vector<double>& w) {
    const double v = w[0] >= 0 ? w[0] : -w[0] - 1;
    return "p" + std::to_string(static_cast<int>(v) / 100);
}

struct CaptureWarnings {
    std::vector<std::string> seen;
    WarningSink old;
    CaptureWarnings() { old = set_warning_sink([this](const std::string& m) { seen.push_back(m); }); }
    ~CaptureWarnings() { set_warning_sink(old); }
};

}  // namespace

TEST(Strategy, NamesRoundTrip) {
    for (auto k : all_strategies()) EXPECT_EQ(strategy_kind_from(to_string(k)), k);
    EXPECT_EQ(all_strategies().size(), 5u);
    EXPECT_THROW(strategy_kind_from("half_oe"), ConfigError);
}

TEST(Strategy, AllBenignHasNoAdversarialWindows) {
    const auto sets = build(StrategyKind::all_benign, make_pools(5), groups_of({"p0"}, {"p1", "p2", "p3", "p4"}), {});
    ASSERT_EQ(sets.size(), 1u);
    EXPECT_EQ(sets[0].windows.size(), 20u);
    EXPECT_EQ(sets[0].n_adversarial, 0u);
    for (auto f : sets[0].adversarial) EXPECT_EQ(f, 0);
}

TEST(Strategy, OeSetsAreOneToOneAndDrawWithinGroup) {
    const auto pools = make_pools(6);
    const auto a = groups_of({"p1", "p4"}, {"p0", "p2", "p3", "p5"});
    for (auto kind : {StrategyKind::all_oe, StrategyKind::less_vulnerable_oe, StrategyKind::more_vulnerable_oe}) {
        const auto ts = build(kind, pools, a, {3, 7}).at(0);
        EXPECT_EQ(ts.n_benign, ts.n_adversarial) << to_string(kind);
        EXPECT_FALSE(ts.with_replacement);
        const std::set<std::string> group(ts.patients.begin(), ts.patients.end());
        std::set<std::vector<double>> adv;
        for (std::size_t i = 0; i < ts.windows.size(); ++i) {
            EXPECT_TRUE(group.count(owner(ts.windows[i]))) << to_string(kind);
            EXPECT_EQ(ts.source[i], owner(ts.windows[i]));
            EXPECT_EQ(ts.adversarial[i] == 1, ts.windows[i][0] < 0);
            if (ts.adversarial[i]) adv.insert(ts.windows[i]);
        }
        EXPECT_EQ(adv.size(), ts.n_adversarial) << "draws without replacement are distinct";
    }
    EXPECT_EQ(build(StrategyKind::less_vulnerable_oe, pools, a, {}).at(0).patients, (std::vector<std::string>{"p1", "p4"}));
    EXPECT_EQ(build(StrategyKind::all_oe, pools, a, {}).at(0).windows.size(), 48u);
}

TEST(Strategy, SmallAdversarialPoolFallsBackToReplacement) {
    CaptureWarnings w;
    const auto ts = build(StrategyKind::less_vulnerable_oe, make_pools(3, 1), groups_of({"p0"}, {"p1", "p2"}), {}).at(0);
    EXPECT_TRUE(ts.with_replacement);
    EXPECT_EQ(ts.n_adversarial, 4u);
    ASSERT_EQ(w.seen.size(), 1u);
    EXPECT_NE(w.seen[0].find("replacement"), std::string::npos);
}

TEST(Strategy, EmptyGroupsAreErrors) {
    const auto pools = make_pools(3);
    EXPECT_THROW(build(StrategyKind::less_vulnerable_oe, pools, groups_of({}, {"p0"}), {}), PreconditionError);
    EXPECT_THROW(build(StrategyKind::more_vulnerable_oe, pools, groups_of({"p0"}, {}), {}), PreconditionError);
    EXPECT_THROW(build(StrategyKind::random_oe, pools, groups_of({}, {"p0"}), {}), PreconditionError);
    auto no_adv = pools;
    no_adv.adversarial.clear();
    EXPECT_THROW(build(StrategyKind::all_oe, no_adv, groups_of({"p0"}, {"p1"}), {}), PreconditionError);
}

TEST(Strategy, RandomRunsMatchLvSizeAndDiffer) {
    const auto pools = make_pools(12);
    const auto a = groups_of({"p0", "p1", "p2"}, {"p3", "p4", "p5", "p6", "p7", "p8", "p9", "p10", "p11"});
    const auto runs = build(StrategyKind::random_oe, pools, a, {10, 42});
    ASSERT_EQ(runs.size(), 10u);
    std::set<std::uint64_t> seeds;
    std::set<std::vector<std::string>> groups;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        EXPECT_EQ(runs[r].run, r);
        EXPECT_EQ(runs[r].patients.size(), 3u);
        EXPECT_EQ(runs[r].n_benign, runs[r].n_adversarial);
        seeds.insert(runs[r].seed);
        groups.insert(runs[r].patients);
    }
    EXPECT_EQ(seeds.size(), 10u);
    EXPECT_GT(groups.size(), 1u);

    const auto again = build(StrategyKind::random_oe, pools, a, {10, 42});
    for (std::size_t r = 0; r < runs.size(); ++r) EXPECT_EQ(again[r].windows, runs[r].windows);
    EXPECT_NE(build(StrategyKind::random_oe, pools, a, {10, 43})[0].seed, runs[0].seed);
}

TEST(Strategy, ReductionStats) {
    EXPECT_DOUBLE_EQ(reduction_stats(12, 3), 75.0);
    EXPECT_DOUBLE_EQ(reduction_stats(10, 10), 0.0);
    EXPECT_THROW(reduction_stats(0, 0), PreconditionError);
    const auto pools = make_pools(12);
    const auto a = groups_of({"p0", "p1", "p2"}, {"p3", "p4", "p5", "p6", "p7", "p8", "p9", "p10", "p11"});
    const auto full = build(StrategyKind::all_oe, pools, a, {}).at(0);
    const auto lv = build(StrategyKind::less_vulnerable_oe, pools, a, {}).at(0);
    EXPECT_DOUBLE_EQ(reduction_stats(full.windows.size(), lv.windows.size()), 75.0);
}

TEST(Strategy, ManifestFields) {
    const auto ts = build(StrategyKind::all_oe, make_pools(2), groups_of({"p0"}, {"p1"}), {1, 5}).at(0);
    const auto m = manifest(ts);
    EXPECT_EQ(m["strategy"], "all_oe");
    EXPECT_EQ(m["n_benign"], 8);
    EXPECT_EQ(m["n_adversarial"], 8);
    EXPECT_EQ(m["with_replacement"], false);
}
