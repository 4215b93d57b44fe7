#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "roast/rng.hpp"
#include "roast/victim.hpp"

using namespace roast;

namespace {

ForecastModel random_mlp(std::size_t d, std::size_t h, Rng& rng) {
    auto m = ForecastModel::make_mlp(d, h);
    std::vector<double> p(m.parameter_count());
    for (auto& v : p) v = rng.normal() * 0.7;
    m.set_parameters(p);
    for (std::size_t j = 0; j < d; ++j) {
        m.scaler.in_mean[j] = rng.uniform(-5, 5);
        m.scaler.in_scale[j] = rng.uniform(0.5, 3);
    }
    m.scaler.out_mean = rng.uniform(50, 100);
    m.scaler.out_scale = rng.uniform(1, 10);
    return m;
}

double loss(const ForecastModel& m, const std::vector<double>& x, double target) {
    const double r = m.predict(x) - target;
    return r * r;
}

}  // namespace

TEST(InputGradient, MatchesCentralDifferences) {
    Rng rng(42);
    const double h = 1e-5;
    for (int c = 0; c < 100; ++c) {
        const std::size_t d = 2 + rng.index(10);
        const auto m = c % 4 == 0 ? [&] {
            auto l = ForecastModel::make_linear(d);
            for (auto& w : l.w) w = rng.normal();
            l.b = rng.normal();
            return l;
        }()
                                  : random_mlp(d, 1 + rng.index(8), rng);
        std::vector<double> x(d);
        for (auto& v : x) v = rng.uniform(-8, 8);
        const double target = rng.uniform(40, 120);
        const auto g = m.input_gradient(x, target);
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            auto xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            const double fd = (loss(m, xp, target) - loss(m, xm, target)) / (2 * h);
            num += (g[j] - fd) * (g[j] - fd);
            den += fd * fd;
        }
        // Central differences cannot resolve less than about eps * |f| / h; that
        // round-off level is the absolute floor for near-flat cases.
        const double floor = 1e-16 * std::max(1.0, loss(m, x, target)) / h * 100.0;
        EXPECT_LE(std::sqrt(num), 1e-4 * std::sqrt(den) + floor) << "case " << c;
    }
}

TEST(InputGradient, ZeroAtTarget) {
    auto m = ForecastModel::make_linear(3);
    m.w = {1, 2, 3};
    const std::vector<double> x{1, 1, 1};
    for (double g : m.input_gradient(x, m.predict(x))) EXPECT_EQ(g, 0.0);
}

TEST(Fit, RecoversNoiselessLinearMap) {
    Rng rng(3);
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    for (int i = 0; i < 400; ++i) {
        std::vector<double> x{rng.uniform(60, 100), rng.uniform(80, 140), rng.uniform(0, 10)};
        y.push_back(0.5 * x[0] - 0.25 * x[1] + 2.0 * x[2] + 7.0);
        X.push_back(x);
    }
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.seed = 1;
    const auto r = fit(ForecastModel::make_linear(3), X, y, cfg);
    EXPECT_LT(r.final_loss, 1e-6);
    EXPECT_LT(r.loss_history.back(), r.loss_history.front());
    EXPECT_NEAR(r.model.predict({80, 100, 5}), 0.5 * 80 - 25 + 10 + 7, 1e-3);
}

TEST(Fit, SeededAndReproducible) {
    Rng rng(4);
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    for (int i = 0; i < 100; ++i) {
        X.push_back({rng.normal(), rng.normal()});
        y.push_back(std::sin(X.back()[0]) + X.back()[1]);
    }
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 9;
    const auto a = fit(ForecastModel::make_mlp(2, 4), X, y, cfg);
    const auto b = fit(ForecastModel::make_mlp(2, 4), X, y, cfg);
    EXPECT_EQ(a.model.parameters(), b.model.parameters());
    cfg.seed = 10;
    const auto c = fit(ForecastModel::make_mlp(2, 4), X, y, cfg);
    EXPECT_NE(a.model.parameters(), c.model.parameters());
}

TEST(Fit, DivergenceNamesEpoch) {
    std::vector<std::vector<double>> X{{1}, {2}, {3}, {4}};
    std::vector<double> y{1, 2, 3, 4};
    TrainConfig cfg;
    cfg.learning_rate = 1e6;
    cfg.epochs = 50;
    try {
        fit(ForecastModel::make_linear(1), X, y, cfg);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    }
}

TEST(Fit, RejectsBadInputs) {
    EXPECT_THROW(fit(ForecastModel::make_linear(2), {{1, 2}}, {}, {}), PreconditionError);
    EXPECT_THROW(fit(ForecastModel::make_linear(2), {{1, 2, 3}}, {1}, {}), DimensionError);
    EXPECT_THROW(ForecastModel::make_mlp(2, 0), PreconditionError);
}

TEST(ModelRecord, RoundTripIsExact) {
    Rng rng(8);
    const auto m = random_mlp(6, 5, rng);
    const auto back = deserialize_model(serialize_model(m));
    const std::vector<double> x{1, 2, 3, 4, 5, 6};
    EXPECT_EQ(back.predict(x), m.predict(x));
    EXPECT_EQ(back.parameters(), m.parameters());
    EXPECT_THROW(deserialize_model("roast-model 2\n"), ParseError);
}

TEST(Predict, DimensionMismatch) {
    const auto m = ForecastModel::make_linear(4);
    EXPECT_THROW(m.predict({1, 2}), DimensionError);
}
