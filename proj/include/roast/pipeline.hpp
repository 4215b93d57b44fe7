#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attack.hpp"
#include "cluster.hpp"
#include "cohort.hpp"
#include "detectors.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "io.hpp"
#include "log.hpp"
#include "risk.hpp"
#include "rng.hpp"
#include "strategy.hpp"
#include "victim.hpp"

namespace roast {

// ---------------------------------------------------------------- configuration

struct CohortSection {
    std::string source = "synth";
    std::size_t n_patients = 12;
    std::size_t length = 240;
    std::vector<double> noise_profile;
    std::filesystem::path csv_path;
    std::vector<std::string> schema;
    std::optional<std::string> label;
    std::map<std::string, Interval> states;
    double train_fraction = 0.8;
    std::size_t window_length = 6;
    std::size_t stride = 1;
};

struct VictimSection {
    ModelKind model = ModelKind::linear;
    std::size_t hidden = 8;
    std::size_t horizon = 1;
    TrainConfig train;
};

struct AttackSection {
    AttackConfig cfg;
    AttackMode oe_mode = AttackMode::blackbox;
};

struct RiskSection {
    FitKind fit_kind = FitKind::linear;
    std::size_t lead = 1;
    std::vector<std::string> factors;
    LogisticOptions logistic;
};

struct SweepSection {
    int range_pct = 50;
    int step_pct = 5;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
    CohortSection cohort;
    VictimSection victim;
    AttackSection attack;
    RiskSection risk;
    SweepSection sweep;
    std::vector<DetectorKind> detectors{DetectorKind::knn, DetectorKind::ocsvm, DetectorKind::autoencoder};
    DetectorConfig detector;
    std::vector<StrategyKind> strategies = all_strategies();
    std::size_t n_random_runs = 10;
    bool fit_seconds_in_metrics = false;
    bool traces = true;
    /// Normalized config sections, used for cache keys.
    nlohmann::json normalized;
};

namespace config_detail {

using nlohmann::json;

inline void allow(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : keys) ok = ok || it.key() == k;
        if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

inline const json& section(const json& j, const char* key) {
    static const json empty = json::object();
    return j.contains(key) ? j.at(key) : empty;
}

inline Interval read_interval(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw ConfigError(where + ": expected [lo, hi]");
    Interval iv{j[0].get<double>(), j[1].get<double>()};
    if (!(iv.lo < iv.hi)) throw ConfigError(where + ": needs lo < hi");
    return iv;
}

}  // namespace config_detail

/// Synthetic reference cohort: three quiet patients and nine noisy ones.
inline std::vector<double> reference_noise_profile() {
    std::vector<double> v(12, 20.0);
    v[0] = v[1] = v[2] = 1.5;
    return v;
}

/// Validates a version-1 config. Unknown keys are rejected at every level.
/// `base_dir` resolves a relative csv path.
inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    using namespace config_detail;
    RunConfig c;
    allow(j, "config", {"version", "seed", "output_dir", "cohort", "victim", "attack", "risk", "cluster", "detectors", "strategies", "report"});
    if (!j.contains("version") || j.at("version") != 1) throw ConfigError("config: 'version' must be 1");
    read(j, "seed", c.seed, "config");
    std::string out_dir = c.output_dir.string();
    read(j, "output_dir", out_dir, "config");
    c.output_dir = out_dir;

    // cohort
    const json& co = section(j, "cohort");
    allow(co, "cohort", {"source", "synth", "csv", "label", "states", "split", "window"});
    auto& C = c.cohort;
    read(co, "source", C.source, "cohort");
    if (C.source == "synth") {
        const json& s = section(co, "synth");
        allow(s, "cohort.synth", {"n_patients", "length", "noise_profile"});
        read(s, "n_patients", C.n_patients, "cohort.synth");
        read(s, "length", C.length, "cohort.synth");
        C.noise_profile = C.n_patients == 12 ? reference_noise_profile() : std::vector<double>(C.n_patients, 1.0);
        read(s, "noise_profile", C.noise_profile, "cohort.synth");
        if (C.n_patients < 2) throw ConfigError("cohort.synth.n_patients must be >= 2");
        if (C.noise_profile.size() != C.n_patients) throw ConfigError("cohort.synth.noise_profile must have n_patients entries");
        const auto spec = default_synth_spec();
        for (const auto& ch : spec.channels) C.schema.push_back(ch.name);
        C.label = spec.label_channel;
        C.states = spec.states.safe;
        if (co.contains("csv")) throw ConfigError("cohort.csv is only valid with source 'csv'");
    } else if (C.source == "csv") {
        const json& s = section(co, "csv");
        allow(s, "cohort.csv", {"path", "schema"});
        std::string p;
        read(s, "path", p, "cohort.csv");
        if (p.empty()) throw ConfigError("cohort.csv.path is required");
        C.csv_path = std::filesystem::path(p).is_absolute() || base_dir.empty() ? std::filesystem::path(p) : base_dir / p;
        read(s, "schema", C.schema, "cohort.csv");
        if (C.schema.empty()) throw ConfigError("cohort.csv.schema is required");
        if (co.contains("synth")) throw ConfigError("cohort.synth is only valid with source 'synth'");
    } else {
        throw ConfigError("cohort.source must be 'synth' or 'csv'");
    }
    if (co.contains("label")) {
        std::string l;
        read(co, "label", l, "cohort");
        C.label = l;
    }
    if (!C.label) throw ConfigError("cohort.label is required");
    if (std::find(C.schema.begin(), C.schema.end(), *C.label) == C.schema.end())
        throw ConfigError("cohort.label '" + *C.label + "' is not in the schema");
    if (co.contains("states")) {
        const json& st = co.at("states");
        if (!st.is_object()) throw ConfigError("cohort.states: expected an object");
        for (auto it = st.begin(); it != st.end(); ++it) {
            if (std::find(C.schema.begin(), C.schema.end(), it.key()) == C.schema.end())
                throw ConfigError("cohort.states: unknown feature '" + it.key() + "'");
            C.states[it.key()] = read_interval(it.value(), "cohort.states." + it.key());
        }
    }
    if (!C.states.count(*C.label)) throw ConfigError("cohort.states needs a safe interval for the label '" + *C.label + "'");
    const json& sp = section(co, "split");
    allow(sp, "cohort.split", {"train_fraction"});
    read(sp, "train_fraction", C.train_fraction, "cohort.split");
    if (!(C.train_fraction > 0.0 && C.train_fraction < 1.0)) throw ConfigError("cohort.split.train_fraction must lie in (0, 1)");
    const json& wi = section(co, "window");
    allow(wi, "cohort.window", {"length", "stride"});
    read(wi, "length", C.window_length, "cohort.window");
    read(wi, "stride", C.stride, "cohort.window");
    if (C.window_length < 1 || C.stride < 1) throw ConfigError("cohort.window length and stride must be >= 1");

    // victim
    const json& vi = section(j, "victim");
    allow(vi, "victim", {"model", "hidden", "horizon", "learning_rate", "epochs", "batch_size", "standardize"});
    std::string model = "linear";
    read(vi, "model", model, "victim");
    if (model != "linear" && model != "mlp") throw ConfigError("victim.model must be 'linear' or 'mlp'");
    c.victim.model = model == "linear" ? ModelKind::linear : ModelKind::mlp;
    read(vi, "hidden", c.victim.hidden, "victim");
    read(vi, "horizon", c.victim.horizon, "victim");
    read(vi, "learning_rate", c.victim.train.learning_rate, "victim");
    read(vi, "epochs", c.victim.train.epochs, "victim");
    read(vi, "batch_size", c.victim.train.batch_size, "victim");
    read(vi, "standardize", c.victim.train.standardize, "victim");
    if (c.victim.horizon < 1) throw ConfigError("victim.horizon must be >= 1");
    if (c.victim.model == ModelKind::mlp && c.victim.hidden < 1) throw ConfigError("victim.hidden must be >= 1");
    if (!(c.victim.train.learning_rate > 0.0) || c.victim.train.epochs < 1 || c.victim.train.batch_size < 1)
        throw ConfigError("victim: learning_rate, epochs and batch_size must be positive");
    c.victim.train.seed = derive_seed(c.seed, "victim");

    // attack
    const json& at = section(j, "attack");
    allow(at, "attack", {"mode", "oe_mode", "feature", "bounds", "n_candidates", "epsilon", "direction", "full_input"});
    auto mode_from = [](const std::string& s, const char* key) {
        if (s == "blackbox") return AttackMode::blackbox;
        if (s == "fgsm") return AttackMode::fgsm;
        throw ConfigError(std::string("attack.") + key + " must be 'blackbox' or 'fgsm'");
    };
    auto& A = c.attack.cfg;
    std::string mode = "blackbox";
    read(at, "mode", mode, "attack");
    A.mode = mode_from(mode, "mode");
    std::string oe_mode = mode;
    read(at, "oe_mode", oe_mode, "attack");
    c.attack.oe_mode = mode_from(oe_mode, "oe_mode");
    A.attacked_feature = *C.label;
    read(at, "feature", A.attacked_feature, "attack");
    if (std::find(C.schema.begin(), C.schema.end(), A.attacked_feature) == C.schema.end())
        throw ConfigError("attack.feature '" + A.attacked_feature + "' is not in the schema");
    A.bounds = {40.0, 140.0};
    if (at.contains("bounds")) A.bounds = read_interval(at.at("bounds"), "attack.bounds");
    read(at, "n_candidates", A.n_candidates, "attack");
    read(at, "epsilon", A.epsilon, "attack");
    std::string dir = "raise";
    read(at, "direction", dir, "attack");
    if (dir != "raise" && dir != "lower") throw ConfigError("attack.direction must be 'raise' or 'lower'");
    A.direction = dir == "raise" ? Direction::raise : Direction::lower;
    read(at, "full_input", A.full_input, "attack");
    A.seed = derive_seed(c.seed, "attack");
    try {
        A.validate();
    } catch (const PreconditionError& e) {
        throw ConfigError(std::string("attack: ") + e.what());
    }

    // risk
    const json& ri = section(j, "risk");
    allow(ri, "risk", {"fit_kind", "lead", "factors", "tolerance", "max_iterations", "norm_cap"});
    std::string fk = "linear";
    read(ri, "fit_kind", fk, "risk");
    if (fk != "linear" && fk != "logistic") throw ConfigError("risk.fit_kind must be 'linear' or 'logistic'");
    c.risk.fit_kind = fk == "linear" ? FitKind::linear : FitKind::logistic;
    read(ri, "lead", c.risk.lead, "risk");
    c.risk.factors = {A.attacked_feature};
    read(ri, "factors", c.risk.factors, "risk");
    read(ri, "tolerance", c.risk.logistic.tolerance, "risk");
    read(ri, "max_iterations", c.risk.logistic.max_iterations, "risk");
    read(ri, "norm_cap", c.risk.logistic.norm_cap, "risk");
    if (c.risk.factors.empty()) throw ConfigError("risk.factors must not be empty");
    for (const auto& f : c.risk.factors)
        if (std::find(C.schema.begin(), C.schema.end(), f) == C.schema.end()) throw ConfigError("risk.factors: unknown feature '" + f + "'");

    // cluster
    const json& cl = section(j, "cluster");
    allow(cl, "cluster", {"sweep_range_pct", "sweep_step_pct"});
    read(cl, "sweep_range_pct", c.sweep.range_pct, "cluster");
    read(cl, "sweep_step_pct", c.sweep.step_pct, "cluster");
    if (c.sweep.step_pct <= 0 || c.sweep.range_pct < 0 || c.sweep.range_pct >= 100)
        throw ConfigError("cluster: sweep_step_pct must be > 0 and sweep_range_pct in [0, 100)");

    // detectors
    const json& de = section(j, "detectors");
    allow(de, "detectors", {"enabled", "knn", "ocsvm", "autoencoder"});
    if (de.contains("enabled")) {
        std::vector<std::string> names;
        read(de, "enabled", names, "detectors");
        c.detectors.clear();
        for (const auto& n : names) {
            const auto k = detector_kind_from(n);
            if (std::find(c.detectors.begin(), c.detectors.end(), k) != c.detectors.end()) throw ConfigError("detectors.enabled lists '" + n + "' twice");
            c.detectors.push_back(k);
        }
    }
    if (c.detectors.empty()) throw ConfigError("detectors.enabled must not be empty");
    const json& kn = section(de, "knn");
    allow(kn, "detectors.knn", {"k", "contamination", "mean_of_k"});
    read(kn, "k", c.detector.knn.neighbors, "detectors.knn");
    read(kn, "contamination", c.detector.knn.contamination, "detectors.knn");
    read(kn, "mean_of_k", c.detector.knn.mean_of_k, "detectors.knn");
    const json& oc = section(de, "ocsvm");
    allow(oc, "detectors.ocsvm", {"gamma", "nu", "tol", "max_iter", "cache_mb"});
    read(oc, "gamma", c.detector.ocsvm.gamma, "detectors.ocsvm");
    read(oc, "nu", c.detector.ocsvm.nu, "detectors.ocsvm");
    read(oc, "tol", c.detector.ocsvm.tol, "detectors.ocsvm");
    read(oc, "max_iter", c.detector.ocsvm.max_iter, "detectors.ocsvm");
    std::size_t cache_mb = c.detector.ocsvm.cache_bytes >> 20;
    read(oc, "cache_mb", cache_mb, "detectors.ocsvm");
    c.detector.ocsvm.cache_bytes = cache_mb << 20;
    const json& ae = section(de, "autoencoder");
    allow(ae, "detectors.autoencoder", {"epochs", "learning_rate", "batch_size", "bottleneck", "contamination", "tanh_hidden"});
    read(ae, "epochs", c.detector.autoencoder.epochs, "detectors.autoencoder");
    read(ae, "learning_rate", c.detector.autoencoder.learning_rate, "detectors.autoencoder");
    read(ae, "batch_size", c.detector.autoencoder.batch_size, "detectors.autoencoder");
    read(ae, "bottleneck", c.detector.autoencoder.bottleneck, "detectors.autoencoder");
    read(ae, "contamination", c.detector.autoencoder.contamination, "detectors.autoencoder");
    read(ae, "tanh_hidden", c.detector.autoencoder.tanh_hidden, "detectors.autoencoder");
    c.detector.autoencoder.seed = derive_seed(c.seed, "detector", "autoencoder");
    if (c.detector.knn.neighbors < 1) throw ConfigError("detectors.knn.k must be >= 1");
    for (double v : {c.detector.knn.contamination, c.detector.ocsvm.nu, c.detector.autoencoder.contamination})
        if (!(v > 0.0 && v < 1.0)) throw ConfigError("detectors: contamination and nu must lie in (0, 1)");
    if (!(c.detector.ocsvm.gamma >= 0.0) || !(c.detector.ocsvm.tol > 0.0)) throw ConfigError("detectors.ocsvm: gamma >= 0 and tol > 0 required");
    if (c.detector.autoencoder.epochs < 1 || c.detector.autoencoder.batch_size < 1 || !(c.detector.autoencoder.learning_rate > 0.0))
        throw ConfigError("detectors.autoencoder: epochs, batch_size and learning_rate must be positive");

    // strategies
    const json& st = section(j, "strategies");
    allow(st, "strategies", {"enabled", "n_random_runs"});
    if (st.contains("enabled")) {
        std::vector<std::string> names;
        read(st, "enabled", names, "strategies");
        c.strategies.clear();
        for (const auto& n : names) {
            const auto k = strategy_kind_from(n);
            if (std::find(c.strategies.begin(), c.strategies.end(), k) != c.strategies.end()) throw ConfigError("strategies.enabled lists '" + n + "' twice");
            c.strategies.push_back(k);
        }
    }
    if (c.strategies.empty()) throw ConfigError("strategies.enabled must not be empty");
    read(st, "n_random_runs", c.n_random_runs, "strategies");
    if (c.n_random_runs < 1) throw ConfigError("strategies.n_random_runs must be >= 1");

    // report
    const json& re = section(j, "report");
    allow(re, "report", {"fit_seconds_in_metrics", "traces"});
    read(re, "fit_seconds_in_metrics", c.fit_seconds_in_metrics, "report");
    read(re, "traces", c.traces, "report");

    c.normalized = j;
    c.normalized.erase("output_dir");
    if (C.source == "csv") c.normalized["cohort"]["csv"]["path"] = C.csv_path.string();
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j, path.parent_path());
}

// ---------------------------------------------------------------- stages

/// A stage failed after validation. Carries the stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& msg) : Error("stage '" + stage + "' failed: " + msg), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> v{"attack", "risk", "cluster", "train", "evaluate", "sensitivity", "outlier-stats"};
    return v;
}

struct RunOptions {
    int jobs = 1;
    bool force = false;
    bool timing_strict = false;
};

class Pipeline {
public:
    Pipeline(RunConfig cfg, RunOptions opt) : cfg_(std::move(cfg)), opt_(opt), out_(cfg_.output_dir), cache_(out_ / "cache") {
        if (opt_.jobs < 1) throw ConfigError("--jobs must be >= 1");
    }

    const std::filesystem::path& out_dir() const { return out_; }

    /// Runs one named stage, or every stage for "run". Returns the stages that
    /// were recomputed rather than served from cache.
    std::vector<std::string> execute(const std::string& name) {
        std::vector<std::string> ran;
        if (name == "run") {
            for (const auto& s : stage_names())
                if (run_stage(s)) ran.push_back(s);
            return ran;
        }
        if (std::find(stage_names().begin(), stage_names().end(), name) == stage_names().end())
            throw ConfigError("unknown stage '" + name + "'");
        if (run_stage(name)) ran.push_back(name);
        return ran;
    }

    /// Builds the cohort the config describes.
    Cohort make_cohort() const {
        const auto& C = cfg_.cohort;
        Cohort c;
        if (C.source == "synth") {
            c = synth_cohort(derive_seed(cfg_.seed, "cohort"), C.n_patients, C.length, C.noise_profile);
        } else {
            c = load_csv(C.csv_path, C.schema);
            c.label_channel = C.label;
            for (auto& p : c.patients) p.label_channel = C.label;
        }
        c.states.safe = C.states;
        c.validate();
        return c;
    }

private:
    std::filesystem::path cpath(const std::string& name) const { return cache_ / name; }

    std::string need(const std::string& name, const char* producer) const {
        const auto p = cpath(name);
        if (!std::filesystem::exists(p))
            throw MissingArtifactError("missing artifact " + p.string() + " (produced by the '" + producer + "' stage)");
        return read_file(p);
    }

    static std::string hex(std::uint64_t v) {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
        return buf;
    }

    std::string section_dump(std::initializer_list<const char*> keys) const {
        nlohmann::json j;
        j["seed"] = cfg_.seed;
        for (const char* k : keys)
            if (cfg_.normalized.contains(k)) j[k] = cfg_.normalized.at(k);
        return j.dump();
    }

    bool fresh(const std::string& stage, const std::string& key, const std::vector<std::string>& outputs) const {
        if (opt_.force) return false;
        const auto kp = cpath(stage + ".key");
        if (!std::filesystem::exists(kp) || read_file(kp) != key) return false;
        for (const auto& o : outputs)
            if (!std::filesystem::exists(out_ / o)) return false;
        return true;
    }

    bool run_stage(const std::string& name) {
        try {
            std::string key;
            std::vector<std::string> outputs;
            std::function<void()> body;
            if (name == "attack") {
                key = section_dump({"cohort", "victim", "attack"});
                outputs = {"cache/cohort.txt", "cache/victim.txt", "cache/attack_train.txt", "cache/attack_test.txt", "cache/attack_oe.txt",
                           "attack_outcomes.csv", "fig_success_rates.csv"};
                body = [this] { stage_attack(); };
            } else if (name == "risk") {
                key = section_dump({"risk"}) + need("cohort.txt", "attack") + need("attack_train.txt", "attack");
                outputs = {"cache/severity.json", "cache/risk_profiles.csv", "risk_profiles.csv", "severity.json"};
                body = [this] { stage_risk(); };
            } else if (name == "cluster") {
                key = need("risk_profiles.csv", "risk") + need("attack_train.txt", "attack");
                outputs = {"cache/clustering.json", "clusters.json"};
                body = [this] { stage_cluster(); };
            } else if (name == "train") {
                key = section_dump({"detectors", "strategies"}) + (opt_.timing_strict ? "strict" : "approx") + need("cohort.txt", "attack") +
                      need("attack_oe.txt", "attack") + need("clustering.json", "cluster");
                outputs = {"cache/train.json", "training_sets.json"};
                body = [this] { stage_train(); };
            } else if (name == "evaluate") {
                key = section_dump({"report"}) + need("train.json", "train") + need("attack_test.txt", "attack") + need("cohort.txt", "attack");
                outputs = {"metrics.csv", "summary.json", "strategy_summary.csv", "reductions.csv", "timings.csv", "fig_recall_precision.csv"};
                if (cfg_.traces) outputs.push_back("fig_traces.csv");
                body = [this] { stage_evaluate(); };
            } else if (name == "sensitivity") {
                key = section_dump({"cluster"}) + need("clustering.json", "cluster") + need("severity.json", "risk") +
                      need("attack_train.txt", "attack") + need("cohort.txt", "attack");
                outputs = {"fig_jaccard_sweep.csv"};
                body = [this] { stage_sensitivity(); };
            } else {
                key = section_dump({"cohort"});
                outputs = {"outlier_stats.csv"};
                body = [this] { stage_outlier_stats(); };
            }
            key = hex(fnv1a(key));
            if (fresh(name, key, outputs)) return false;
            body();
            write_file(cpath(name + ".key"), key);
            return true;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
    }

    std::pair<Cohort, Cohort> split(const Cohort& c) const { return chrono_split(c, SplitSpec{cfg_.cohort.train_fraction}); }

    std::size_t L() const { return cfg_.cohort.window_length; }
    std::size_t stride() const { return cfg_.cohort.stride; }

    void stage_attack() {
        const Cohort cohort = make_cohort();
        const auto [train, test] = split(cohort);
        const std::string& label = *cohort.label_channel;

        std::vector<std::vector<double>> X;
        std::vector<double> y;
        for (const auto& p : train.patients) {
            auto s = make_supervised(p, L(), stride(), label, cfg_.victim.horizon);
            X.insert(X.end(), s.inputs.begin(), s.inputs.end());
            y.insert(y.end(), s.targets.begin(), s.targets.end());
        }
        if (X.empty()) throw PreconditionError("the training split yields no victim windows");
        const std::size_t d = L() * cohort.schema.size();
        ForecastModel init = cfg_.victim.model == ModelKind::linear ? ForecastModel::make_linear(d) : ForecastModel::make_mlp(d, cfg_.victim.hidden);
        const FitResult fr = fit(init, X, y, cfg_.victim.train);

        const auto& A = cfg_.attack.cfg;
        const auto atk_train = simulate_cohort(train, fr.model, A, L(), stride(), opt_.jobs, "attack/train");
        const auto atk_test = simulate_cohort(test, fr.model, A, L(), stride(), opt_.jobs, "attack/test");
        std::string oe_text;
        if (cfg_.attack.oe_mode == A.mode) {
            oe_text = serialize_attack(atk_train);
        } else {
            AttackConfig oe = A;
            oe.mode = cfg_.attack.oe_mode;
            oe_text = serialize_attack(simulate_cohort(train, fr.model, oe, L(), stride(), opt_.jobs, "attack/oe"));
        }

        write_file(cpath("cohort.txt"), serialize_cohort(cohort));
        write_file(cpath("victim.txt"), serialize_model(fr.model));
        write_file(cpath("attack_train.txt"), serialize_attack(atk_train));
        write_file(cpath("attack_test.txt"), serialize_attack(atk_test));
        write_file(cpath("attack_oe.txt"), oe_text);
        write_file(out_ / "attack_outcomes.csv", attack_outcomes_csv(atk_train));

        std::ostringstream sr;
        sr << "patient_id,n_windows,n_attacked,n_success,success_rate\n";
        for (const auto& p : atk_train.patients) {
            std::size_t s = 0;
            for (const auto& o : p.outcomes) s += o.success;
            const auto r = p.success_rate();
            sr << p.patient_id << ',' << p.n_windows << ',' << p.n_safe << ',' << s << ',' << (r ? format_double(*r) : "NA") << '\n';
        }
        write_file(out_ / "fig_success_rates.csv", sr.str());
        nlohmann::json vj{{"model", to_string(fr.model.kind)}, {"final_train_mse", fr.final_loss}, {"n_train_windows", X.size()}};
        write_file(out_ / "victim.json", vj.dump(2) + "\n");
    }

    SeverityModel fit_severity(const Cohort& train) const {
        const std::string& label = *train.label_channel;
        const auto& safe = train.states.at(label);
        const std::size_t lead = cfg_.risk.lead;
        std::vector<std::vector<double>> X;
        std::vector<double> y;
        std::vector<int> yc;
        for (const auto& p : train.patients) {
            const auto& target = p.channel(label);
            for (std::size_t t = 0; t + lead < p.length(); ++t) {
                std::vector<double> row;
                for (const auto& ch : p.channels) row.push_back(ch[t]);
                X.push_back(std::move(row));
                y.push_back(target[t + lead]);
                yc.push_back(safe.contains(target[t + lead]) ? 0 : 1);
            }
        }
        const std::string target = label + "(t+" + std::to_string(lead) + ")";
        if (cfg_.risk.fit_kind == FitKind::linear) return fit_severity_linear(X, y, train.schema, cfg_.attack.cfg.attacked_feature, target);
        return fit_severity_logistic(X, yc, train.schema, cfg_.attack.cfg.attacked_feature, "unsafe " + target, cfg_.risk.logistic);
    }

    void stage_risk() {
        const Cohort cohort = deserialize_cohort(need("cohort.txt", "attack"));
        const auto attack = deserialize_attack(need("attack_train.txt", "attack"));
        const auto sev = fit_severity(split(cohort).first);
        const auto profiles = build_profiles(attack, cohort.schema, factors_from(sev, cfg_.risk.factors));
        const auto csv = profiles_csv(profiles);
        const auto js = to_json(sev).dump(2) + "\n";
        write_file(cpath("severity.json"), js);
        write_file(cpath("risk_profiles.csv"), csv);
        write_file(out_ / "severity.json", js);
        write_file(out_ / "risk_profiles.csv", csv);
    }

    static SuccessRates rates_of(const CohortAttack& a) {
        SuccessRates r;
        for (const auto& p : a.patients) r[p.patient_id] = p.success_rate();
        return r;
    }

    void stage_cluster() {
        const auto profiles = parse_profiles_csv(need("risk_profiles.csv", "risk"));
        const auto attack = deserialize_attack(need("attack_train.txt", "attack"));
        const auto rates = rates_of(attack);
        const auto r = cluster_profiles(profiles, rates, opt_.jobs);
        nlohmann::json matrix = nlohmann::json::array();
        for (std::size_t i = 0; i < r.matrix.n; ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t k = 0; k < r.matrix.n; ++k) row.push_back(r.matrix(i, k));
            matrix.push_back(row);
        }
        nlohmann::json rj = nlohmann::json::object();
        for (const auto& [id, v] : rates) rj[id] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
        const nlohmann::json j{{"ids", r.ids}, {"dendrogram", to_json(r.dendrogram, r.ids)}, {"assignment", to_json(r.assignment)},
                               {"dtw_matrix", matrix}, {"success_rates", rj}};
        write_file(cpath("clustering.json"), j.dump() + "\n");
        write_file(out_ / "clusters.json", nlohmann::json{{"assignment", to_json(r.assignment)}, {"success_rates", rj}}.dump(2) + "\n");
    }

    /// Per-patient benign windows of one split, in cohort order.
    std::map<std::string, Windows> benign_windows(const Cohort& c) const {
        std::map<std::string, Windows> m;
        for (const auto& p : c.patients) m[p.patient_id] = windowize(p, L(), stride());
        return m;
    }

    static std::string cell_file(DetectorKind d, StrategyKind s, std::size_t run) {
        return std::string("detectors/") + to_string(d) + "__" + to_string(s) + "__" + std::to_string(run) + ".txt";
    }

    void stage_train() {
        const Cohort cohort = deserialize_cohort(need("cohort.txt", "attack"));
        const auto oe = deserialize_attack(need("attack_oe.txt", "attack"));
        const auto clustering = nlohmann::json::parse(need("clustering.json", "cluster"));
        const auto assignment = assignment_from_json(clustering.at("assignment"));
        const Cohort train = split(cohort).first;

        PatientPools pools;
        pools.ids = train.patient_ids();
        pools.benign = benign_windows(train);
        for (const auto& p : oe.patients) {
            auto& v = pools.adversarial[p.patient_id];
            for (const auto& o : p.outcomes) v.push_back(o.adversarial_window);
        }
        Windows all_benign;
        for (const auto& id : pools.ids) all_benign.insert(all_benign.end(), pools.benign[id].begin(), pools.benign[id].end());
        const WindowScaler scaler = WindowScaler::fit(all_benign);

        TrainingSubsetSpec spec{cfg_.n_random_runs, derive_seed(cfg_.seed, "strategy")};
        std::vector<TrainingSet> sets;
        nlohmann::json manifests = nlohmann::json::array();
        for (auto kind : cfg_.strategies) {
            for (auto& ts : build(kind, pools, assignment, spec)) {
                manifests.push_back(manifest(ts));
                ts.windows = scaler.apply(ts.windows);
                sets.push_back(std::move(ts));
            }
        }
        const auto fitted = fit_all(sets, cfg_.detectors, cfg_.detector, opt_.jobs, opt_.timing_strict);
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& f : fitted) {
            const auto file = cell_file(f.detector, f.strategy, f.run);
            write_file(cpath(file), f.model->serialize());
            cells.push_back({{"detector", to_string(f.detector)},
                             {"strategy", to_string(f.strategy)},
                             {"run", f.run},
                             {"file", file},
                             {"fit_seconds", f.fit_seconds},
                             {"train_size", f.train_size},
                             {"patients", f.patients}});
        }
        const nlohmann::json j{{"timing", opt_.timing_strict ? "strict" : "approximate"},
                               {"scaler", {{"mean", scaler.mean}, {"scale", scaler.scale}}},
                               {"cells", cells}};
        write_file(cpath("train.json"), j.dump() + "\n");
        write_file(out_ / "training_sets.json", manifests.dump(2) + "\n");
    }

    void stage_evaluate() {
        const auto tj = nlohmann::json::parse(need("train.json", "train"));
        const Cohort cohort = deserialize_cohort(need("cohort.txt", "attack"));
        const auto attack = deserialize_attack(need("attack_test.txt", "attack"));
        WindowScaler scaler;
        scaler.mean = tj.at("scaler").at("mean").get<std::vector<double>>();
        scaler.scale = tj.at("scaler").at("scale").get<std::vector<double>>();

        std::vector<FittedCell> fitted;
        for (const auto& c : tj.at("cells")) {
            FittedCell f;
            f.detector = detector_kind_from(c.at("detector").get<std::string>());
            f.strategy = strategy_kind_from(c.at("strategy").get<std::string>());
            f.run = c.at("run").get<std::size_t>();
            f.model = deserialize_detector(need(c.at("file").get<std::string>(), "train"));
            f.fit_seconds = c.at("fit_seconds").get<double>();
            f.train_size = c.at("train_size").get<std::size_t>();
            f.patients = c.at("patients").get<std::vector<std::string>>();
            fitted.push_back(std::move(f));
        }

        const Cohort test = split(cohort).second;
        auto benign = benign_windows(test);
        TestSet ts;
        for (const auto& p : test.patients) {
            PatientTest pt{p.patient_id, scaler.apply(benign[p.patient_id]), {}};
            for (const auto& o : attack.patient(p.patient_id).outcomes) pt.adversarial.push_back(scaler.apply(o.adversarial_window));
            ts.push_back(std::move(pt));
        }
        std::vector<Trace> traces;
        auto rep = evaluate_all(fitted, ts, opt_.jobs, cfg_.traces ? &traces : nullptr);
        rep.timing = tj.at("timing").get<std::string>();
        emit_report(rep, out_, cfg_.fit_seconds_in_metrics);
        if (cfg_.traces) write_file(out_ / "fig_traces.csv", traces_csv(traces));
    }

    void stage_sensitivity() {
        const Cohort cohort = deserialize_cohort(need("cohort.txt", "attack"));
        const auto attack = deserialize_attack(need("attack_train.txt", "attack"));
        const auto sev = severity_from_json(nlohmann::json::parse(need("severity.json", "risk")));
        const auto cj = nlohmann::json::parse(need("clustering.json", "cluster"));
        const auto ids = cj.at("ids").get<std::vector<std::string>>();
        const auto dg = dendrogram_from_json(cj.at("dendrogram"));
        const auto baseline = assignment_from_json(cj.at("assignment"));
        const auto rates = rates_of(attack);
        const auto grid = sweep_grid(cfg_.sweep.range_pct, cfg_.sweep.step_pct);
        auto rows = threshold_sweep(dg, ids, rates, baseline, grid);
        const auto coef = coefficient_sweep(attack, cohort.schema, factors_from(sev, cfg_.risk.factors), rates, baseline, grid, opt_.jobs);
        rows.insert(rows.end(), coef.begin(), coef.end());
        write_file(out_ / "fig_jaccard_sweep.csv", sweep_csv(rows));
    }

    void stage_outlier_stats() {
        const Cohort cohort = make_cohort();
        const auto t = outlier_table(cohort);
        std::ostringstream out;
        out << "patient_id,zscore_fraction,iqr_fraction,normal_abnormal_ratio\n";
        for (const auto& r : t.rows) {
            const double ratio = normal_abnormal_ratio(cohort.patient(r.patient_id), cohort.states);
            out << r.patient_id << ',' << format_double(r.zscore) << ',' << format_double(r.iqr) << ','
                << (std::isinf(ratio) ? std::string("inf") : format_double(ratio)) << '\n';
        }
        out << "mean," << format_double(t.zscore_mean) << ',' << format_double(t.iqr_mean) << ",NA\n";
        out << "std," << format_double(t.zscore_std) << ',' << format_double(t.iqr_std) << ",NA\n";
        write_file(out_ / "outlier_stats.csv", out.str());
    }

    RunConfig cfg_;
    RunOptions opt_;
    std::filesystem::path out_;
    std::filesystem::path cache_;
};

}  // namespace roast
