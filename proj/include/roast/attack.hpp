#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cohort.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "victim.hpp"

namespace roast {

enum class AttackMode { blackbox, fgsm };
enum class Direction { raise, lower };

struct AttackConfig {
    AttackMode mode = AttackMode::blackbox;
    std::string attacked_feature;
    /// FGSM step in scaled input units; the raw step on coordinate j is epsilon * in_scale[j].
    double epsilon = 0.1;
    std::size_t n_candidates = 32;
    std::uint64_t seed = 0;
    /// Plausibility bounds for the attacked feature.
    Interval bounds{0.0, 1.0};
    Direction direction = Direction::raise;
    /// FGSM only: perturb every coordinate instead of the attacked feature's.
    bool full_input = false;

    void validate() const {
        if (!(bounds.lo < bounds.hi)) throw PreconditionError("plausibility bounds need lo < hi");
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw PreconditionError("epsilon must be finite and >= 0");
        if (n_candidates < 1) throw PreconditionError("n_candidates must be >= 1");
        if (attacked_feature.empty()) throw PreconditionError("attacked_feature is not set");
    }
};

/// Indices of one feature's coordinates inside a feature-major flattened window.
inline std::vector<std::size_t> attacked_coordinates(std::size_t feature_index, std::size_t window_length) {
    std::vector<std::size_t> c(window_length);
    for (std::size_t k = 0; k < window_length; ++k) c[k] = feature_index * window_length + k;
    return c;
}

inline double sign(double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }

/// One FGSM step that increases the squared loss against `target`, restricted to
/// `coords` unless full_input is set. Attacked coordinates are clamped to the bounds afterwards.
inline std::vector<double> fgsm_perturb(const ForecastModel& model, const std::vector<double>& window, double target,
                                        const AttackConfig& cfg, const std::vector<std::size_t>& coords) {
    const auto g = model.input_gradient(window, target);
    std::vector<double> adv = window;
    if (cfg.epsilon == 0.0) return adv;
    if (cfg.full_input) {
        for (std::size_t j = 0; j < adv.size(); ++j) adv[j] += cfg.epsilon * model.scaler.in_scale[j] * sign(g[j]);
    } else {
        for (std::size_t j : coords) adv[j] += cfg.epsilon * model.scaler.in_scale[j] * sign(g[j]);
    }
    for (std::size_t j : coords) adv[j] = std::clamp(adv[j], cfg.bounds.lo, cfg.bounds.hi);
    return adv;
}

struct BlackboxResult {
    std::vector<double> window;
    double prediction = 0.0;
    std::size_t candidate_index = 0;
    /// False when no candidate moved the prediction toward the unsafe side.
    bool improved = false;
};

/// Random-generation search. Each candidate replaces the attacked coordinates with
/// independent uniform draws that only move in the attack direction, within bounds.
/// The candidate with the largest predicted shift wins; ties go to the lowest index.
inline BlackboxResult blackbox_search(const ForecastModel& model, const std::vector<double>& window, const AttackConfig& cfg,
                                      const std::vector<std::size_t>& coords, Rng& rng) {
    const double base = model.predict(window);
    const double dir = cfg.direction == Direction::raise ? 1.0 : -1.0;
    BlackboxResult best;
    double best_score = -INFINITY;
    std::vector<double> cand = window;
    for (std::size_t c = 0; c < cfg.n_candidates; ++c) {
        for (std::size_t j : coords) {
            const double orig = std::clamp(window[j], cfg.bounds.lo, cfg.bounds.hi);
            cand[j] = cfg.direction == Direction::raise ? rng.uniform(orig, cfg.bounds.hi) : rng.uniform(cfg.bounds.lo, orig);
        }
        const double pred = model.predict(cand);
        const double score = dir * pred;
        if (score > best_score) {
            best_score = score;
            best.window = cand;
            best.prediction = pred;
            best.candidate_index = c;
        }
    }
    best.improved = dir * (best.prediction - base) > 0.0;
    return best;
}

/// Success means the benign prediction is safe and the adversarial one is not.
inline bool judge(double pred_benign, double pred_adv, const Interval& safe) {
    return safe.contains(pred_benign) && !safe.contains(pred_adv);
}

struct AttackOutcome {
    std::size_t window_index = 0;
    /// Tick of the window's most recent timestamp.
    std::int64_t t = 0;
    std::vector<double> benign_window;
    std::vector<double> adversarial_window;
    double pred_benign = 0.0;
    double pred_adv = 0.0;
    bool success = false;

    const char* state_before(const Interval& safe) const { return safe.contains(pred_benign) ? "safe" : "unsafe"; }
    const char* state_after(const Interval& safe) const { return safe.contains(pred_adv) ? "safe" : "unsafe"; }
};

struct PatientAttack {
    std::string patient_id;
    std::size_t n_windows = 0;
    /// Windows whose benign prediction was safe; each was attacked once.
    std::size_t n_safe = 0;
    std::vector<AttackOutcome> outcomes;

    /// Successes over attacked windows; empty when no window was safe.
    std::optional<double> success_rate() const {
        if (n_safe == 0) return std::nullopt;
        std::size_t s = 0;
        for (const auto& o : outcomes) s += o.success;
        return static_cast<double>(s) / static_cast<double>(n_safe);
    }
};

struct CohortAttack {
    std::string attacked_feature;
    std::size_t window_length = 0;
    std::size_t feature_index = 0;
    std::vector<PatientAttack> patients;

    const PatientAttack& patient(const std::string& id) const {
        for (const auto& p : patients)
            if (p.patient_id == id) return p;
        throw PreconditionError("no attack results for patient '" + id + "'");
    }
};

/// Attacks every benign-safe window of every patient once. Each patient draws from
/// its own stream derived from (cfg.seed, stream_tag, patient_id).
inline CohortAttack simulate_cohort(const Cohort& cohort, const ForecastModel& model, const AttackConfig& cfg,
                                    std::size_t window_length, std::size_t stride, int jobs = 1,
                                    const std::string& stream_tag = "attack") {
    if (cohort.patients.empty()) throw PreconditionError("simulate_cohort on an empty cohort");
    if (!cohort.label_channel) throw PreconditionError("cohort has no label channel");
    cfg.validate();
    const auto& safe = cohort.states.at(*cohort.label_channel);
    const std::size_t fi = cohort.feature_index(cfg.attacked_feature);
    if (model.input_dim != window_length * cohort.schema.size())
        throw DimensionError("victim input_dim does not match window length times feature count");
    const auto coords = attacked_coordinates(fi, window_length);
    const double fgsm_target = cfg.direction == Direction::raise ? safe.lo : safe.hi;

    CohortAttack result;
    result.attacked_feature = cfg.attacked_feature;
    result.window_length = window_length;
    result.feature_index = fi;
    result.patients.resize(cohort.patients.size());
    parallel_for(cohort.patients.size(), jobs, [&](std::size_t i) {
        const auto& p = cohort.patients[i];
        Rng rng(derive_seed(cfg.seed, stream_tag, p.patient_id));
        PatientAttack pa;
        pa.patient_id = p.patient_id;
        const auto windows = windowize(p, window_length, stride);
        pa.n_windows = windows.size();
        for (std::size_t k = 0; k < windows.size(); ++k) {
            const double pb = model.predict(windows[k]);
            if (!safe.contains(pb)) continue;
            ++pa.n_safe;
            AttackOutcome o;
            o.window_index = k;
            o.t = p.timestamps[k * stride + window_length - 1];
            o.benign_window = windows[k];
            if (cfg.mode == AttackMode::fgsm) {
                o.adversarial_window = fgsm_perturb(model, windows[k], fgsm_target, cfg, coords);
                o.pred_adv = model.predict(o.adversarial_window);
            } else {
                auto r = blackbox_search(model, windows[k], cfg, coords, rng);
                o.adversarial_window = std::move(r.window);
                o.pred_adv = r.prediction;
            }
            o.pred_benign = pb;
            o.success = judge(pb, o.pred_adv, safe);
            pa.outcomes.push_back(std::move(o));
        }
        result.patients[i] = std::move(pa);
    });
    return result;
}

/// `patient_id,t,benign,adversarial,pred_benign,pred_adv,success`, with the attacked
/// feature's value at each window's most recent timestamp.
inline std::string attack_outcomes_csv(const CohortAttack& a) {
    std::ostringstream out;
    out << "patient_id,t,benign,adversarial,pred_benign,pred_adv,success\n";
    const std::size_t last = a.feature_index * a.window_length + a.window_length - 1;
    for (const auto& p : a.patients)
        for (const auto& o : p.outcomes)
            out << p.patient_id << ',' << o.t << ',' << format_double(o.benign_window[last]) << ','
                << format_double(o.adversarial_window[last]) << ',' << format_double(o.pred_benign) << ','
                << format_double(o.pred_adv) << ',' << (o.success ? 1 : 0) << '\n';
    return out.str();
}

inline std::string serialize_attack(const CohortAttack& a) {
    std::ostringstream out;
    out << "roast-attack 1\nfeature " << a.attacked_feature << ' ' << a.feature_index << ' ' << a.window_length << '\n';
    for (const auto& p : a.patients) {
        out << "patient " << p.patient_id << ' ' << p.n_windows << ' ' << p.n_safe << ' ' << p.outcomes.size() << '\n';
        for (const auto& o : p.outcomes) {
            out << "o " << o.window_index << ' ' << o.t << ' ' << format_double(o.pred_benign) << ' '
                << format_double(o.pred_adv) << ' ' << (o.success ? 1 : 0) << '\n';
            out << "b " << join_doubles(o.benign_window) << '\n';
            out << "a " << join_doubles(o.adversarial_window) << '\n';
        }
    }
    return out.str();
}

inline CohortAttack deserialize_attack(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    auto next = [&](const char* key) {
        if (!std::getline(in, line)) throw ParseError(std::string("attack record truncated before ") + key);
        auto f = split(line, ' ');
        if (f.empty() || f[0] != key) throw ParseError(std::string("attack record: expected '") + key + "' line");
        return f;
    };
    if (!std::getline(in, line) || line != "roast-attack 1") throw ParseError("not a version-1 attack record");
    CohortAttack a;
    auto f = next("feature");
    if (f.size() != 4) throw ParseError("attack record: bad feature line");
    a.attacked_feature = f[1];
    a.feature_index = static_cast<std::size_t>(parse_int(f[2], "feature index"));
    a.window_length = static_cast<std::size_t>(parse_int(f[3], "window length"));
    auto rest = [](const std::vector<std::string>& v) {
        std::vector<double> out;
        for (std::size_t i = 1; i < v.size(); ++i) out.push_back(parse_double(v[i], "attack record"));
        return out;
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto p = split(line, ' ');
        if (p.size() != 5 || p[0] != "patient") throw ParseError("attack record: expected patient line");
        PatientAttack pa;
        pa.patient_id = p[1];
        pa.n_windows = static_cast<std::size_t>(parse_int(p[2], "n_windows"));
        pa.n_safe = static_cast<std::size_t>(parse_int(p[3], "n_safe"));
        const auto count = static_cast<std::size_t>(parse_int(p[4], "outcome count"));
        for (std::size_t k = 0; k < count; ++k) {
            auto o = next("o");
            if (o.size() != 6) throw ParseError("attack record: bad outcome line");
            AttackOutcome out;
            out.window_index = static_cast<std::size_t>(parse_int(o[1], "window index"));
            out.t = parse_int(o[2], "t");
            out.pred_benign = parse_double(o[3], "pred_benign");
            out.pred_adv = parse_double(o[4], "pred_adv");
            out.success = o[5] == "1";
            out.benign_window = rest(next("b"));
            out.adversarial_window = rest(next("a"));
            pa.outcomes.push_back(std::move(out));
        }
        a.patients.push_back(std::move(pa));
    }
    return a;
}

}  // namespace roast
