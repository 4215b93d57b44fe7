#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "detectors.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "stats.hpp"
#include "strategy.hpp"

namespace roast {

/// Positive means anomalous.
struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
    std::optional<double> recall() const {
        if (tp + fn == 0) return std::nullopt;
        return static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    std::optional<double> precision() const {
        if (tp + fp == 0) return std::nullopt;
        return static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
    bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts evaluate(const Detector& det, const Windows& benign, const Windows& adversarial) {
    ConfusionCounts c;
    for (const auto& x : adversarial) (det.classify(x) ? c.tp : c.fn)++;
    for (const auto& x : benign) (det.classify(x) ? c.fp : c.tn)++;
    return c;
}

struct WelchResult {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
};

/// Welch's unequal-variance t-test, two-sided, with Welch-Satterthwaite degrees of freedom.
inline WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) throw PreconditionError("welch_t_test needs at least 2 values per sample");
    const double va = sample_variance(a) / static_cast<double>(a.size());
    const double vb = sample_variance(b) / static_cast<double>(b.size());
    if (va == 0.0 && vb == 0.0) throw PreconditionError("welch_t_test: both samples have zero variance");
    WelchResult r;
    r.t = (mean(a) - mean(b)) / std::sqrt(va + vb);
    r.df = (va + vb) * (va + vb) /
           (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
    boost::math::students_t dist(r.df);
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    return r;
}

/// Per-patient test windows. Benign windows come from every test window of the
/// patient; adversarial windows are the attacked versions of its benign-safe ones.
struct PatientTest {
    std::string patient_id;
    Windows benign;
    Windows adversarial;
};

using TestSet = std::vector<PatientTest>;

struct PatientResult {
    std::string patient_id;
    ConfusionCounts counts;
    bool operator==(const PatientResult&) const = default;
};

struct FittedCell {
    DetectorKind detector = DetectorKind::knn;
    StrategyKind strategy = StrategyKind::all_benign;
    std::size_t run = 0;
    std::shared_ptr<const Detector> model;
    double fit_seconds = 0.0;
    std::size_t train_size = 0;
    std::vector<std::string> patients;
};

/// Fits every detector kind on every training set. Wall time covers the fit only.
/// With `timing_strict` the fits run one at a time regardless of `jobs`.
inline std::vector<FittedCell> fit_all(const std::vector<TrainingSet>& sets, const std::vector<DetectorKind>& kinds,
                                       const DetectorConfig& cfg, int jobs = 1, bool timing_strict = false) {
    std::vector<FittedCell> cells(kinds.size() * sets.size());
    parallel_for(cells.size(), timing_strict ? 1 : jobs, [&](std::size_t c) {
        const DetectorKind kind = kinds[c / sets.size()];
        const TrainingSet& ts = sets[c % sets.size()];
        const auto start = std::chrono::steady_clock::now();
        auto model = fit_detector(kind, ts.windows, cfg);
        const auto stop = std::chrono::steady_clock::now();
        cells[c] = {kind, ts.kind, ts.run, std::move(model), std::chrono::duration<double>(stop - start).count(),
                    ts.windows.size(), ts.patients};
    });
    return cells;
}

struct CellResult {
    DetectorKind detector = DetectorKind::knn;
    StrategyKind strategy = StrategyKind::all_benign;
    std::size_t run = 0;
    ConfusionCounts counts;
    std::vector<PatientResult> per_patient;
    double fit_seconds = 0.0;
    std::size_t train_size = 0;
    std::vector<std::string> train_patients;
    std::optional<double> t_stat;
    std::optional<double> p_value;

    std::optional<double> recall() const { return counts.recall(); }
    std::optional<double> precision() const { return counts.precision(); }
    /// Recalls of patients that have at least one adversarial test window.
    std::vector<double> patient_recalls() const {
        std::vector<double> r;
        for (const auto& p : per_patient)
            if (auto v = p.counts.recall()) r.push_back(*v);
        return r;
    }
    bool operator==(const CellResult&) const = default;
};

struct AggregateRow {
    DetectorKind detector = DetectorKind::knn;
    StrategyKind strategy = StrategyKind::all_benign;
    std::size_t n_runs = 0;
    std::optional<double> recall_mean, recall_std, recall_min, recall_max;
    std::optional<double> precision_mean, precision_std;
    double fit_seconds_mean = 0.0;
    double train_size_mean = 0.0;
    bool operator==(const AggregateRow&) const = default;
};

/// Size and time reduction of a selective strategy against the indiscriminate
/// all_oe set of the same detector. Both percentages follow 100 * (1 - selective / full).
struct ReductionRow {
    DetectorKind detector = DetectorKind::knn;
    StrategyKind strategy = StrategyKind::less_vulnerable_oe;
    double full_size = 0.0, selective_size = 0.0, size_reduction_pct = 0.0;
    double full_seconds = 0.0, selective_seconds = 0.0, time_reduction_pct = 0.0;
    bool operator==(const ReductionRow&) const = default;
};

struct StrategyReport {
    std::vector<CellResult> cells;
    std::vector<AggregateRow> aggregates;
    std::vector<ReductionRow> reductions;
    std::string t_test = "welch two-sided; replication unit: per-patient recall; baseline: all_benign";
    std::string timing = "approximate";
    bool operator==(const StrategyReport&) const = default;
};

inline double time_reduction(double full_seconds, double selective_seconds) {
    if (!(full_seconds > 0.0)) throw PreconditionError("time reduction needs a positive full time");
    return 100.0 * (1.0 - selective_seconds / full_seconds);
}

/// Mean of `v`, plus sample standard deviation (0 for one value).
inline std::pair<std::optional<double>, std::optional<double>> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {std::nullopt, std::nullopt};
    return {mean(v), v.size() > 1 ? sample_stddev(v) : 0.0};
}

inline std::vector<AggregateRow> aggregate(const std::vector<CellResult>& cells) {
    std::vector<AggregateRow> out;
    for (const auto& c : cells) {
        auto it = std::find_if(out.begin(), out.end(), [&](const AggregateRow& a) { return a.detector == c.detector && a.strategy == c.strategy; });
        if (it == out.end()) {
            AggregateRow a;
            a.detector = c.detector;
            a.strategy = c.strategy;
            out.push_back(a);
            it = out.end() - 1;
        }
        it->n_runs++;
    }
    for (auto& a : out) {
        std::vector<double> rec, prec, secs, sizes;
        for (const auto& c : cells) {
            if (c.detector != a.detector || c.strategy != a.strategy) continue;
            if (auto r = c.recall()) rec.push_back(*r);
            if (auto p = c.precision()) prec.push_back(*p);
            secs.push_back(c.fit_seconds);
            sizes.push_back(static_cast<double>(c.train_size));
        }
        std::tie(a.recall_mean, a.recall_std) = mean_std(rec);
        std::tie(a.precision_mean, a.precision_std) = mean_std(prec);
        if (!rec.empty()) {
            a.recall_min = *std::min_element(rec.begin(), rec.end());
            a.recall_max = *std::max_element(rec.begin(), rec.end());
        }
        a.fit_seconds_mean = mean(secs);
        a.train_size_mean = mean(sizes);
    }
    return out;
}

struct Trace {
    DetectorKind detector;
    StrategyKind strategy;
    std::size_t run;
    std::string patient_id;
    std::size_t index;
    bool adversarial;
    double score;
    bool flagged;
};

/// Scores every fitted cell on the common test set, then adds per-patient Welch
/// tests against all_benign, random_oe aggregates and reduction rows.
inline StrategyReport evaluate_all(const std::vector<FittedCell>& fitted, const TestSet& test, int jobs = 1,
                                   std::vector<Trace>* traces = nullptr) {
    StrategyReport rep;
    rep.cells.resize(fitted.size());
    std::vector<std::vector<Trace>> cell_traces(fitted.size());
    parallel_for(fitted.size(), jobs, [&](std::size_t c) {
        const auto& f = fitted[c];
        CellResult r;
        r.detector = f.detector;
        r.strategy = f.strategy;
        r.run = f.run;
        r.fit_seconds = f.fit_seconds;
        r.train_size = f.train_size;
        r.train_patients = f.patients;
        for (const auto& p : test) {
            PatientResult pr{p.patient_id, evaluate(*f.model, p.benign, p.adversarial)};
            r.counts += pr.counts;
            r.per_patient.push_back(pr);
            if (traces && (f.strategy != StrategyKind::random_oe || f.run == 0)) {
                auto add = [&](const Windows& ws, bool adv) {
                    for (std::size_t i = 0; i < ws.size(); ++i) {
                        double s = 0.0;
                        const bool flag = f.model->classify(ws[i], &s);
                        cell_traces[c].push_back({f.detector, f.strategy, f.run, p.patient_id, i, adv, s, flag});
                    }
                };
                add(p.benign, false);
                add(p.adversarial, true);
            }
        }
        rep.cells[c] = std::move(r);
    });
    if (traces)
        for (auto& t : cell_traces) traces->insert(traces->end(), t.begin(), t.end());

    for (auto& c : rep.cells) {
        auto base = std::find_if(rep.cells.begin(), rep.cells.end(), [&](const CellResult& b) {
            return b.detector == c.detector && b.strategy == StrategyKind::all_benign;
        });
        if (base == rep.cells.end()) continue;
        try {
            const auto w = welch_t_test(c.patient_recalls(), base->patient_recalls());
            c.t_stat = w.t;
            c.p_value = w.p;
        } catch (const PreconditionError&) {
            c.t_stat.reset();
            c.p_value.reset();
        }
    }
    rep.aggregates = aggregate(rep.cells);
    for (const auto& a : rep.aggregates) {
        if (a.strategy == StrategyKind::all_benign || a.strategy == StrategyKind::all_oe) continue;
        auto full = std::find_if(rep.aggregates.begin(), rep.aggregates.end(), [&](const AggregateRow& b) {
            return b.detector == a.detector && b.strategy == StrategyKind::all_oe;
        });
        if (full == rep.aggregates.end()) continue;
        ReductionRow r;
        r.detector = a.detector;
        r.strategy = a.strategy;
        r.full_size = full->train_size_mean;
        r.selective_size = a.train_size_mean;
        r.size_reduction_pct = 100.0 * (1.0 - r.selective_size / r.full_size);
        r.full_seconds = full->fit_seconds_mean;
        r.selective_seconds = a.fit_seconds_mean;
        r.time_reduction_pct = r.full_seconds > 0.0 ? time_reduction(r.full_seconds, r.selective_seconds) : 0.0;
        rep.reductions.push_back(r);
    }
    return rep;
}

inline StrategyReport compare_strategies(const std::vector<TrainingSet>& sets, const TestSet& test,
                                         const std::vector<DetectorKind>& kinds, const DetectorConfig& cfg, int jobs = 1,
                                         bool timing_strict = false) {
    auto rep = evaluate_all(fit_all(sets, kinds, cfg, jobs, timing_strict), test, jobs);
    rep.timing = timing_strict ? "strict" : "approximate";
    return rep;
}

// ---------------------------------------------------------------- report output

namespace detail {

inline std::string opt_csv(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline std::optional<double> opt_from(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

inline nlohmann::json counts_json(const ConfusionCounts& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}; }

inline ConfusionCounts counts_from(const nlohmann::json& j) {
    return {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(), j.at("tn").get<std::size_t>(), j.at("fn").get<std::size_t>()};
}

}  // namespace detail

/// One row per fitted detector. fit_seconds is written only when requested, since
/// wall times differ between runs; timings.csv and summary.json always carry them.
inline std::string metrics_csv(const StrategyReport& rep, bool include_fit_seconds = false) {
    std::ostringstream out;
    out << "detector,strategy,run,recall,precision,tp,fp,tn,fn,fit_seconds,train_size,t_stat,p_value\n";
    for (const auto& c : rep.cells)
        out << to_string(c.detector) << ',' << to_string(c.strategy) << ',' << c.run << ',' << detail::opt_csv(c.recall()) << ','
            << detail::opt_csv(c.precision()) << ',' << c.counts.tp << ',' << c.counts.fp << ',' << c.counts.tn << ','
            << c.counts.fn << ',' << (include_fit_seconds ? format_double(c.fit_seconds) : std::string("NA")) << ','
            << c.train_size << ',' << detail::opt_csv(c.t_stat) << ',' << detail::opt_csv(c.p_value) << '\n';
    return out.str();
}

inline std::string strategy_summary_csv(const StrategyReport& rep) {
    std::ostringstream out;
    out << "detector,strategy,n_runs,recall_mean,recall_std,precision_mean,precision_std,train_size_mean\n";
    for (const auto& a : rep.aggregates)
        out << to_string(a.detector) << ',' << to_string(a.strategy) << ',' << a.n_runs << ',' << detail::opt_csv(a.recall_mean)
            << ',' << detail::opt_csv(a.recall_std) << ',' << detail::opt_csv(a.precision_mean) << ','
            << detail::opt_csv(a.precision_std) << ',' << format_double(a.train_size_mean) << '\n';
    return out.str();
}

inline std::string timings_csv(const StrategyReport& rep) {
    std::ostringstream out;
    out << "detector,strategy,run,fit_seconds,train_size,timing\n";
    for (const auto& c : rep.cells)
        out << to_string(c.detector) << ',' << to_string(c.strategy) << ',' << c.run << ',' << format_double(c.fit_seconds)
            << ',' << c.train_size << ',' << rep.timing << '\n';
    return out.str();
}

inline std::string reductions_csv(const StrategyReport& rep) {
    std::ostringstream out;
    out << "detector,strategy,full_size,selective_size,size_reduction_pct,full_fit_seconds,selective_fit_seconds,time_reduction_pct\n";
    for (const auto& r : rep.reductions)
        out << to_string(r.detector) << ',' << to_string(r.strategy) << ',' << format_double(r.full_size) << ','
            << format_double(r.selective_size) << ',' << format_double(r.size_reduction_pct) << ','
            << format_double(r.full_seconds) << ',' << format_double(r.selective_seconds) << ','
            << format_double(r.time_reduction_pct) << '\n';
    return out.str();
}

inline std::string traces_csv(const std::vector<Trace>& traces) {
    std::ostringstream out;
    out << "detector,strategy,run,patient_id,window,label,score,flagged\n";
    for (const auto& t : traces)
        out << to_string(t.detector) << ',' << to_string(t.strategy) << ',' << t.run << ',' << t.patient_id << ',' << t.index
            << ',' << (t.adversarial ? "adversarial" : "benign") << ',' << format_double(t.score) << ','
            << (t.flagged ? 1 : 0) << '\n';
    return out.str();
}

inline nlohmann::json to_json(const StrategyReport& rep) {
    using nlohmann::json;
    json cells = json::array();
    for (const auto& c : rep.cells) {
        json pp = json::array();
        for (const auto& p : c.per_patient) pp.push_back({{"patient_id", p.patient_id}, {"counts", detail::counts_json(p.counts)}});
        cells.push_back({{"detector", to_string(c.detector)},
                         {"strategy", to_string(c.strategy)},
                         {"run", c.run},
                         {"recall", detail::opt_json(c.recall())},
                         {"precision", detail::opt_json(c.precision())},
                         {"counts", detail::counts_json(c.counts)},
                         {"fit_seconds", c.fit_seconds},
                         {"train_size", c.train_size},
                         {"train_patients", c.train_patients},
                         {"t_stat", detail::opt_json(c.t_stat)},
                         {"p_value", detail::opt_json(c.p_value)},
                         {"per_patient", pp}});
    }
    json aggs = json::array();
    for (const auto& a : rep.aggregates)
        aggs.push_back({{"detector", to_string(a.detector)},
                        {"detector_label", display_name(a.detector)},
                        {"strategy", to_string(a.strategy)},
                        {"n_runs", a.n_runs},
                        {"recall_mean", detail::opt_json(a.recall_mean)},
                        {"recall_std", detail::opt_json(a.recall_std)},
                        {"recall_min", detail::opt_json(a.recall_min)},
                        {"recall_max", detail::opt_json(a.recall_max)},
                        {"precision_mean", detail::opt_json(a.precision_mean)},
                        {"precision_std", detail::opt_json(a.precision_std)},
                        {"fit_seconds_mean", a.fit_seconds_mean},
                        {"train_size_mean", a.train_size_mean}});
    json reds = json::array();
    for (const auto& r : rep.reductions)
        reds.push_back({{"detector", to_string(r.detector)},
                        {"strategy", to_string(r.strategy)},
                        {"full_size", r.full_size},
                        {"selective_size", r.selective_size},
                        {"size_reduction_pct", r.size_reduction_pct},
                        {"full_seconds", r.full_seconds},
                        {"selective_seconds", r.selective_seconds},
                        {"time_reduction_pct", r.time_reduction_pct}});
    return {{"version", 1}, {"t_test", rep.t_test}, {"timing", rep.timing}, {"cells", cells}, {"aggregates", aggs}, {"reductions", reds}};
}

inline StrategyReport report_from_json(const nlohmann::json& j) {
    StrategyReport rep;
    rep.t_test = j.at("t_test").get<std::string>();
    rep.timing = j.at("timing").get<std::string>();
    for (const auto& c : j.at("cells")) {
        CellResult r;
        r.detector = detector_kind_from(c.at("detector").get<std::string>());
        r.strategy = strategy_kind_from(c.at("strategy").get<std::string>());
        r.run = c.at("run").get<std::size_t>();
        r.counts = detail::counts_from(c.at("counts"));
        r.fit_seconds = c.at("fit_seconds").get<double>();
        r.train_size = c.at("train_size").get<std::size_t>();
        r.train_patients = c.at("train_patients").get<std::vector<std::string>>();
        r.t_stat = detail::opt_from(c.at("t_stat"));
        r.p_value = detail::opt_from(c.at("p_value"));
        for (const auto& p : c.at("per_patient")) r.per_patient.push_back({p.at("patient_id").get<std::string>(), detail::counts_from(p.at("counts"))});
        rep.cells.push_back(std::move(r));
    }
    for (const auto& a : j.at("aggregates")) {
        AggregateRow r;
        r.detector = detector_kind_from(a.at("detector").get<std::string>());
        r.strategy = strategy_kind_from(a.at("strategy").get<std::string>());
        r.n_runs = a.at("n_runs").get<std::size_t>();
        r.recall_mean = detail::opt_from(a.at("recall_mean"));
        r.recall_std = detail::opt_from(a.at("recall_std"));
        r.recall_min = detail::opt_from(a.at("recall_min"));
        r.recall_max = detail::opt_from(a.at("recall_max"));
        r.precision_mean = detail::opt_from(a.at("precision_mean"));
        r.precision_std = detail::opt_from(a.at("precision_std"));
        r.fit_seconds_mean = a.at("fit_seconds_mean").get<double>();
        r.train_size_mean = a.at("train_size_mean").get<double>();
        rep.aggregates.push_back(r);
    }
    for (const auto& x : j.at("reductions")) {
        ReductionRow r;
        r.detector = detector_kind_from(x.at("detector").get<std::string>());
        r.strategy = strategy_kind_from(x.at("strategy").get<std::string>());
        r.full_size = x.at("full_size").get<double>();
        r.selective_size = x.at("selective_size").get<double>();
        r.size_reduction_pct = x.at("size_reduction_pct").get<double>();
        r.full_seconds = x.at("full_seconds").get<double>();
        r.selective_seconds = x.at("selective_seconds").get<double>();
        r.time_reduction_pct = x.at("time_reduction_pct").get<double>();
        rep.reductions.push_back(r);
    }
    return rep;
}

/// Writes metrics.csv, strategy_summary.csv, reductions.csv, timings.csv,
/// summary.json and fig_recall_precision.csv into `dir`.
inline void emit_report(const StrategyReport& rep, const std::filesystem::path& dir, bool include_fit_seconds = false) {
    if (dir.empty()) throw PreconditionError("emit_report needs an output directory");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw Error("cannot create output directory " + dir.string());
    write_file(dir / "metrics.csv", metrics_csv(rep, include_fit_seconds));
    write_file(dir / "strategy_summary.csv", strategy_summary_csv(rep));
    write_file(dir / "fig_recall_precision.csv", strategy_summary_csv(rep));
    write_file(dir / "reductions.csv", reductions_csv(rep));
    write_file(dir / "timings.csv", timings_csv(rep));
    write_file(dir / "summary.json", to_json(rep).dump(2) + "\n");
}

}  // namespace roast
