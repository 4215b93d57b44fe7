#pragma once

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "attack.hpp"
#include "cohort.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "log.hpp"

namespace roast {

enum class FitKind { linear, logistic };

inline const char* to_string(FitKind k) { return k == FitKind::linear ? "linear" : "logistic"; }

struct SeverityModel {
    FitKind fit_kind = FitKind::linear;
    std::vector<std::string> feature_names;
    std::vector<double> coefficients;
    double intercept = 0.0;
    std::string target;
    std::string attacked_feature;

    double coefficient(const std::string& feature) const {
        for (std::size_t i = 0; i < feature_names.size(); ++i)
            if (feature_names[i] == feature) return coefficients[i];
        throw SchemaError("severity model has no coefficient for '" + feature + "'");
    }

    /// Coefficient of the attacked feature.
    double S() const { return coefficient(attacked_feature); }
};

namespace detail {

inline Eigen::MatrixXd design_matrix(const std::vector<std::vector<double>>& X, std::size_t p) {
    Eigen::MatrixXd A(static_cast<Eigen::Index>(X.size()), static_cast<Eigen::Index>(p + 1));
    for (std::size_t i = 0; i < X.size(); ++i) {
        if (X[i].size() != p) throw DimensionError("severity design row has the wrong width");
        A(static_cast<Eigen::Index>(i), 0) = 1.0;
        for (std::size_t j = 0; j < p; ++j) A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = X[i][j];
    }
    return A;
}

inline void check_inputs(const std::vector<std::vector<double>>& X, std::size_t ny, const std::vector<std::string>& names,
                         const std::string& attacked) {
    if (X.size() != ny) throw PreconditionError("severity inputs and targets are not aligned");
    if (std::find(names.begin(), names.end(), attacked) == names.end())
        throw SchemaError("attacked feature '" + attacked + "' is not a regression column");
    std::set<std::vector<double>> distinct(X.begin(), X.end());
    if (distinct.size() < 2) throw PreconditionError("severity fit needs at least 2 distinct samples");
}

}  // namespace detail

/// Ordinary least squares with an intercept, solved by column-pivoted QR.
/// A rank-deficient design raises RankError naming the dependent columns.
inline SeverityModel fit_severity_linear(const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                                         const std::vector<std::string>& names, const std::string& attacked_feature,
                                         const std::string& target = "target") {
    detail::check_inputs(X, y.size(), names, attacked_feature);
    const std::size_t p = names.size();
    const Eigen::MatrixXd A = detail::design_matrix(X, p);
    Eigen::VectorXd b(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) b(static_cast<Eigen::Index>(i)) = y[i];

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < A.cols()) {
        std::string cols;
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < A.cols(); ++k) {
            const auto c = static_cast<std::size_t>(perm(k));
            if (!cols.empty()) cols += ", ";
            cols += c == 0 ? std::string("intercept") : names[c - 1];
        }
        throw RankError("rank-deficient severity design; collinear columns: " + cols);
    }
    const Eigen::VectorXd beta = qr.solve(b);
    SeverityModel m;
    m.fit_kind = FitKind::linear;
    m.feature_names = names;
    m.intercept = beta(0);
    for (std::size_t j = 0; j < p; ++j) m.coefficients.push_back(beta(static_cast<Eigen::Index>(j + 1)));
    m.target = target;
    m.attacked_feature = attacked_feature;
    return m;
}

struct LogisticOptions {
    double tolerance = 1e-6;
    std::size_t max_iterations = 10000;
    double norm_cap = 1e3;
};

/// Unregularized logistic regression by full-batch gradient descent on the mean
/// log-loss. Columns are standardized for the descent and the coefficients mapped
/// back to raw units. Stops when the gradient's max-norm drops below the tolerance.
inline SeverityModel fit_severity_logistic(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                                           const std::vector<std::string>& names, const std::string& attacked_feature,
                                           const std::string& target = "target", const LogisticOptions& opt = {}) {
    detail::check_inputs(X, y.size(), names, attacked_feature);
    bool has0 = false, has1 = false;
    for (int v : y) {
        if (v != 0 && v != 1) throw PreconditionError("logistic target must be 0/1");
        (v ? has1 : has0) = true;
    }
    if (!has0 || !has1) throw PreconditionError("logistic severity fit needs both classes in the target");

    const std::size_t p = names.size();
    const auto n = static_cast<Eigen::Index>(X.size());
    Eigen::MatrixXd A = detail::design_matrix(X, p);
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p + 1));
    Eigen::VectorXd sd = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(p + 1));
    for (Eigen::Index j = 1; j < A.cols(); ++j) {
        mu(j) = A.col(j).mean();
        sd(j) = std::sqrt((A.col(j).array() - mu(j)).square().mean());
        if (!(sd(j) > 0.0)) throw RankError("rank-deficient severity design; collinear columns: intercept, " + names[static_cast<std::size_t>(j - 1)]);
        A.col(j) = (A.col(j).array() - mu(j)) / sd(j);
    }
    Eigen::VectorXd t(n);
    for (Eigen::Index i = 0; i < n; ++i) t(i) = y[static_cast<std::size_t>(i)];

    const double lr = 4.0 / static_cast<double>(p + 1);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(A.cols());
    bool capped = false, converged = false;
    for (std::size_t it = 0; it < opt.max_iterations; ++it) {
        const Eigen::VectorXd z = A * beta;
        const Eigen::VectorXd prob = (1.0 / (1.0 + (-z.array()).exp())).matrix();
        const Eigen::VectorXd grad = A.transpose() * (prob - t) / static_cast<double>(n);
        if (grad.cwiseAbs().maxCoeff() < opt.tolerance) {
            converged = true;
            break;
        }
        beta -= lr * grad;
        if (beta.norm() > opt.norm_cap) {
            beta *= opt.norm_cap / beta.norm();
            capped = true;
            break;
        }
    }
    // Under perfect separation the log-loss has no finite minimizer and descent only
    // grows the norm slowly, so a separating iterate is pushed straight to the cap.
    if (!converged && !capped && beta.norm() > 0.0) {
        const Eigen::VectorXd z = A * beta;
        bool separates = true;
        for (Eigen::Index i = 0; i < n && separates; ++i) separates = (t(i) > 0.5) == (z(i) > 0.0) && z(i) != 0.0;
        if (separates) {
            beta *= opt.norm_cap / beta.norm();
            capped = true;
        }
    }
    if (capped) warn("logistic severity fit hit the coefficient norm cap; the classes look perfectly separable");

    SeverityModel m;
    m.fit_kind = FitKind::logistic;
    m.feature_names = names;
    double intercept = beta(0);
    for (std::size_t j = 0; j < p; ++j) {
        const auto jj = static_cast<Eigen::Index>(j + 1);
        m.coefficients.push_back(beta(jj) / sd(jj));
        intercept -= beta(jj) * mu(jj) / sd(jj);
    }
    m.intercept = intercept;
    m.target = target;
    m.attacked_feature = attacked_feature;
    return m;
}

/// R(t) = S * (manipulated - original)^2.
inline double instantaneous_risk(double original, double manipulated, double S) {
    const double d = manipulated - original;
    return S * (d * d);
}

struct RiskFactor {
    std::string feature;
    double S = 0.0;
};

struct RiskProfile {
    std::string patient_id;
    /// Ticks of the attacked windows' most recent timestamps, one per value.
    std::vector<std::int64_t> t;
    std::vector<double> values;
};

/// One profile per patient with at least one attacked window; R(t) = sum_i S_i * Z_i(t)
/// where Z_i is the squared change of factor i's feature at the window's most recent
/// timestamp. Patients without outcomes are skipped, with a warning unless disabled.
inline std::vector<RiskProfile> build_profiles(const CohortAttack& attack, const std::vector<std::string>& schema,
                                               const std::vector<RiskFactor>& factors, bool warn_missing = true) {
    if (factors.empty()) throw PreconditionError("build_profiles needs at least one risk factor");
    std::vector<std::size_t> last;
    for (const auto& f : factors) {
        auto it = std::find(schema.begin(), schema.end(), f.feature);
        if (it == schema.end()) throw SchemaError("risk factor feature '" + f.feature + "' is not in the schema");
        const auto fi = static_cast<std::size_t>(it - schema.begin());
        last.push_back(fi * attack.window_length + attack.window_length - 1);
    }
    std::vector<RiskProfile> out;
    for (const auto& p : attack.patients) {
        if (p.outcomes.empty()) {
            if (warn_missing) warn("patient " + p.patient_id + " has no attack outcomes and is left out of risk profiling");
            continue;
        }
        RiskProfile rp;
        rp.patient_id = p.patient_id;
        for (const auto& o : p.outcomes) {
            double r = 0.0;
            for (std::size_t k = 0; k < factors.size(); ++k)
                r += instantaneous_risk(o.benign_window[last[k]], o.adversarial_window[last[k]], factors[k].S);
            rp.t.push_back(o.t);
            rp.values.push_back(r);
        }
        out.push_back(std::move(rp));
    }
    return out;
}

inline std::vector<RiskFactor> factors_from(const SeverityModel& m, const std::vector<std::string>& features) {
    std::vector<RiskFactor> f;
    for (const auto& name : features) f.push_back({name, m.coefficient(name)});
    return f;
}

inline std::string profiles_csv(const std::vector<RiskProfile>& profiles) {
    std::ostringstream out;
    out << "patient_id,t_index,risk\n";
    for (const auto& p : profiles)
        for (std::size_t k = 0; k < p.values.size(); ++k) out << p.patient_id << ',' << k << ',' << format_double(p.values[k]) << '\n';
    return out.str();
}

inline std::vector<RiskProfile> parse_profiles_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || strip_cr(line) != "patient_id,t_index,risk") throw ParseError("risk profile CSV: bad header");
    std::vector<RiskProfile> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        line = strip_cr(line);
        if (line.empty()) continue;
        auto f = split(line, ',');
        const std::string ctx = "risk profile CSV row " + std::to_string(row);
        if (f.size() != 3) throw ParseError(ctx + ": expected 3 fields");
        if (out.empty() || out.back().patient_id != f[0]) out.push_back({f[0], {}, {}});
        auto& p = out.back();
        if (static_cast<std::size_t>(parse_int(f[1], ctx)) != p.values.size()) throw ParseError(ctx + ": t_index out of order");
        p.t.push_back(static_cast<std::int64_t>(p.values.size()));
        p.values.push_back(parse_double(f[2], ctx));
    }
    return out;
}

inline nlohmann::json to_json(const SeverityModel& m) {
    return {{"fit_kind", to_string(m.fit_kind)}, {"features", m.feature_names}, {"coefficients", m.coefficients},
            {"intercept", m.intercept},          {"target", m.target},          {"attacked_feature", m.attacked_feature},
            {"S", m.S()}};
}

inline SeverityModel severity_from_json(const nlohmann::json& j) {
    SeverityModel m;
    const auto kind = j.at("fit_kind").get<std::string>();
    if (kind != "linear" && kind != "logistic") throw ParseError("severity record: unknown fit_kind " + kind);
    m.fit_kind = kind == "linear" ? FitKind::linear : FitKind::logistic;
    m.feature_names = j.at("features").get<std::vector<std::string>>();
    m.coefficients = j.at("coefficients").get<std::vector<double>>();
    m.intercept = j.at("intercept").get<double>();
    m.target = j.at("target").get<std::string>();
    m.attacked_feature = j.at("attacked_feature").get<std::string>();
    if (m.coefficients.size() != m.feature_names.size()) throw ParseError("severity record: coefficient count mismatch");
    return m;
}

}  // namespace roast
