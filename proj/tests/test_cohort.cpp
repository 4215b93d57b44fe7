#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "roast/cohort.hpp"

#include "oracles.hpp"

using namespace roast;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
    const auto dir = std::filesystem::temp_directory_path() / "roast_test_cohort";
    std::filesystem::create_directories(dir);
    const auto p = dir / name;
    write_file(p, content);
    return p;
}

struct OutlierCase {
    std::vector<double> values;
    double zscore;
    double iqr;
};

const std::vector<OutlierCase> kOutlierOracle{
#include "data/outlier_oracle.inc"
};

}  // namespace

TEST(LoadCsv, SortsRowsAndKeepsPatientOrder) {
    const auto p = temp_file("ok.csv",
                             "patient_id,timestamp,hr,glucose\n"
                             "b,2,71,100\n"
                             "a,5,80,120\n"
                             "b,1,70,99\r\n"
                             "a,3,79,118\n");
    const auto c = load_csv(p, {"hr", "glucose"});
    ASSERT_EQ(c.patients.size(), 2u);
    EXPECT_EQ(c.patients[0].patient_id, "b");
    EXPECT_EQ(c.patients[0].timestamps, (std::vector<std::int64_t>{1, 2}));
    EXPECT_EQ(c.patients[0].channels[0], (std::vector<double>{70, 71}));
    EXPECT_EQ(c.patients[1].channels[1], (std::vector<double>{118, 120}));
}

TEST(LoadCsv, RejectsSchemaMismatch) {
    const auto p = temp_file("schema.csv", "patient_id,timestamp,hr\na,1,70\n");
    EXPECT_THROW(load_csv(p, {"hr", "glucose"}), SchemaError);
    EXPECT_THROW(load_csv(p, {"glucose"}), SchemaError);
}

TEST(LoadCsv, ReportsRowOfBadValue) {
    const auto p = temp_file("bad.csv", "patient_id,timestamp,hr\na,1,70\na,2,seventy\n");
    try {
        load_csv(p, {"hr"});
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
    }
}

TEST(LoadCsv, RejectsDuplicateTimestamp) {
    const auto p = temp_file("dup.csv", "patient_id,timestamp,hr\na,1,70\na,1,71\n");
    EXPECT_THROW(load_csv(p, {"hr"}), ParseError);
}

TEST(LoadCsv, RejectsMissingFile) { EXPECT_THROW(load_csv("/nonexistent/x.csv", {"hr"}), ParseError); }

TEST(SynthCohort, ShapeAndDeterminism) {
    const std::vector<double> noise{1.0, 2.0, 3.0};
    const auto a = synth_cohort(7, 3, 50, noise);
    const auto b = synth_cohort(7, 3, 50, noise);
    const auto c = synth_cohort(8, 3, 50, noise);
    ASSERT_EQ(a.patients.size(), 3u);
    EXPECT_EQ(a.patients[2].patient_id, "p02");
    EXPECT_EQ(a.patients[0].length(), 50u);
    EXPECT_EQ(a.patients[0].channels.size(), a.schema.size());
    EXPECT_EQ(serialize_cohort(a), serialize_cohort(b));
    EXPECT_NE(serialize_cohort(a), serialize_cohort(c));
    EXPECT_NO_THROW(a.validate());
}

TEST(SynthCohort, PatientStreamsIgnoreCohortSize) {
    const auto small = synth_cohort(3, 2, 40, {1.0, 1.0});
    const auto big = synth_cohort(3, 4, 40, {1.0, 1.0, 5.0, 5.0});
    EXPECT_EQ(small.patients[1].channels, big.patients[1].channels);
}

TEST(SynthCohort, RejectsBadSizes) {
    EXPECT_THROW(synth_cohort(0, 1, 10, {1.0}), PreconditionError);
    EXPECT_THROW(synth_cohort(0, 2, 1, {1.0, 1.0}), PreconditionError);
    EXPECT_THROW(synth_cohort(0, 2, 10, {1.0}), PreconditionError);
}

TEST(SynthCohort, QuietSingleChannelHasNoIqrOutliers) {
    SynthSpec spec;
    spec.channels = {ChannelShape{"x", 10.0, 1.0, 0.0, 0.0, 0.0, 0.0}};
    const auto c = synth_cohort(1, 5, 400, std::vector<double>(5, 0.0), spec);
    for (const auto& p : c.patients) EXPECT_EQ(iqr_outlier_fraction(p.channels[0]), 0.0);
}

TEST(SynthCohort, HomogeneousCohortHasSmallSpread) {
    const auto c = synth_cohort(11, 6, 4000, std::vector<double>(6, 2.0));
    const auto t = outlier_table(c);
    EXPECT_LT(t.iqr_std, 0.01);
    EXPECT_LT(t.zscore_std, 0.01);
}

TEST(ChronoSplit, EightyTwentyAndNoOverlap) {
    const auto c = synth_cohort(1, 2, 240, {1.0, 1.0});
    const auto [tr, te] = chrono_split(c);
    EXPECT_EQ(tr.patients[0].length(), 192u);
    EXPECT_EQ(te.patients[0].length(), 48u);
    EXPECT_LT(tr.patients[0].timestamps.back(), te.patients[0].timestamps.front());
    EXPECT_EQ(train_length(10, 0.7), 7u);
}

TEST(ChronoSplit, EmptyPartIsAnError) {
    const auto c = synth_cohort(1, 2, 3, {1.0, 1.0});
    EXPECT_THROW(chrono_split(c, SplitSpec{0.1}), PreconditionError);
    EXPECT_THROW(chrono_split(c, SplitSpec{1.0}), PreconditionError);
}

TEST(Windowize, FeatureMajorLayout) {
    PatientSeries p{"a", {"x", "y"}, {0, 1, 2, 3}, {{1, 2, 3, 4}, {10, 20, 30, 40}}, std::nullopt};
    const auto w = windowize(p, 3, 1);
    ASSERT_EQ(w.size(), 2u);
    EXPECT_EQ(w[0], (std::vector<double>{1, 2, 3, 10, 20, 30}));
    EXPECT_EQ(w[1], (std::vector<double>{2, 3, 4, 20, 30, 40}));
    EXPECT_EQ(windowize(p, 2, 2).size(), window_count(4, 2, 2));
    EXPECT_TRUE(windowize(p, 5, 1).empty());
    EXPECT_THROW(windowize(p, 2, 0), PreconditionError);
}

TEST(Windowize, SupervisedTargetsFollowEachWindow) {
    PatientSeries p{"a", {"x"}, {0, 1, 2, 3, 4}, {{1, 2, 3, 4, 5}}, std::string("x")};
    const auto s = make_supervised(p, 2, 1, "x", 1);
    ASSERT_EQ(s.inputs.size(), 3u);
    EXPECT_EQ(s.targets, (std::vector<double>{3, 4, 5}));
    EXPECT_EQ(s.inputs[2], (std::vector<double>{3, 4}));
}

TEST(OutlierFractions, MatchesNumpyOracle) {
    ASSERT_EQ(kOutlierOracle.size(), 50u);
    for (const auto& c : kOutlierOracle) {
        EXPECT_EQ(zscore_outlier_fraction(c.values), c.zscore);
        EXPECT_EQ(iqr_outlier_fraction(c.values), c.iqr);
    }
}

TEST(OutlierFractions, MatchesHandCodedReferenceOnRandomArrays) {
    std::mt19937_64 gen(5);
    std::student_t_distribution<double> t(2.0);
    for (int k = 0; k < 50; ++k) {
        std::vector<double> x(3 + gen() % 12);
        for (auto& v : x) v = t(gen) * 10.0;
        EXPECT_EQ(zscore_outlier_fraction(x), oracle::zscore_fraction(x));
        EXPECT_EQ(iqr_outlier_fraction(x), oracle::iqr_fraction(x));
    }
}

TEST(OutlierFractions, HandExample) {
    const std::vector<double> x{1, 2, 3, 4, 100};
    EXPECT_DOUBLE_EQ(zscore_outlier_fraction(x), 0.2);
    EXPECT_DOUBLE_EQ(iqr_outlier_fraction(x), 0.2);
    EXPECT_EQ(zscore_outlier_fraction({5, 5, 5, 5}), 0.0);
    EXPECT_THROW(zscore_outlier_fraction({}), PreconditionError);
}

TEST(OutlierFractions, AffineInvariance) {
    // Integer data with power-of-two scale and integer shift keeps every
    // intermediate exact, so the fractions must agree bit for bit.
    std::mt19937_64 gen(9);
    for (int k = 0; k < 1000; ++k) {
        std::vector<double> x(4 + gen() % 20);
        for (auto& v : x) v = static_cast<double>(static_cast<int>(gen() % 200) - 100) * (gen() % 7 == 0 ? 8 : 1);
        const double a = std::ldexp(1.0, static_cast<int>(gen() % 9) - 4) * (gen() % 2 ? 1.0 : -1.0);
        const double b = static_cast<double>(static_cast<int>(gen() % 2001) - 1000);
        std::vector<double> y;
        for (double v : x) y.push_back(a * v + b);
        EXPECT_EQ(zscore_outlier_fraction(x), zscore_outlier_fraction(y));
        EXPECT_EQ(iqr_outlier_fraction(x), iqr_outlier_fraction(y));
    }
}

TEST(NormalAbnormalRatio, CountsLabelChannel) {
    PatientSeries p{"a", {"hr"}, {0, 1, 2, 3}, {{60, 70, 130, 40}}, std::string("hr")};
    StateConfig s;
    s.safe["hr"] = {50, 120};
    EXPECT_DOUBLE_EQ(normal_abnormal_ratio(p, s), 1.0);
    p.channels[0] = {60, 70, 80, 90};
    EXPECT_TRUE(std::isinf(normal_abnormal_ratio(p, s)));
}

TEST(CohortRecord, RoundTrip) {
    auto c = synth_cohort(2, 3, 20, {1.0, 2.0, 3.0});
    const auto back = deserialize_cohort(serialize_cohort(c));
    EXPECT_EQ(back.schema, c.schema);
    EXPECT_EQ(back.label_channel, c.label_channel);
    ASSERT_EQ(back.patients.size(), 3u);
    EXPECT_EQ(back.patients[1].channels, c.patients[1].channels);
    EXPECT_EQ(back.states.at("hr").hi, 120.0);
    EXPECT_THROW(deserialize_cohort("garbage"), ParseError);
}

TEST(OutlierFractions, ThreeEvenlySpacedValuesHaveNone) {
    EXPECT_EQ(zscore_outlier_fraction({1, 2, 3}), 0.0);
    EXPECT_EQ(iqr_outlier_fraction({1, 2, 3}), 0.0);
}

TEST(SynthCohort, NoisierPatientHasMoreIqrOutliers) {
    const auto t = outlier_table(synth_cohort(2, 2, 2000, {0.0, 5.0}));
    EXPECT_LT(t.rows[0].iqr, t.rows[1].iqr);
}

TEST(SynthCohort, HomogeneousSpreadIsSmallRelativeToMean) {
    // Pure noise with one shared level, long enough that each fraction is well estimated.
    SynthSpec spec;
    spec.channels = {ChannelShape{"x", 0.0, 0.0, 0.0, 0.0, 0.0, 1.0}};
    const auto t = outlier_table(synth_cohort(11, 6, 1000000, std::vector<double>(6, 20.0), spec));
    EXPECT_GT(t.iqr_mean, 0.0);
    EXPECT_LT(t.iqr_std, t.iqr_mean / 10.0);
    EXPECT_LT(t.zscore_std, t.zscore_mean / 10.0);
}

TEST(SynthCohort, SingleNoisyPatientTopsBothRankings) {
    const auto t = outlier_table(synth_cohort(5, 6, 2000, {1.5, 1.5, 1.5, 20.0, 1.5, 1.5}));
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        if (i == 3) continue;
        EXPECT_GT(t.rows[3].zscore, t.rows[i].zscore) << i;
        EXPECT_GT(t.rows[3].iqr, t.rows[i].iqr) << i;
    }
}
