#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cluster.hpp"
#include "detectors.hpp"
#include "errors.hpp"
#include "log.hpp"
#include "rng.hpp"

namespace roast {

enum class StrategyKind { all_benign, all_oe, less_vulnerable_oe, more_vulnerable_oe, random_oe };

inline const char* to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::all_benign: return "all_benign";
        case StrategyKind::all_oe: return "all_oe";
        case StrategyKind::less_vulnerable_oe: return "less_vulnerable_oe";
        case StrategyKind::more_vulnerable_oe: return "more_vulnerable_oe";
        case StrategyKind::random_oe: return "random_oe";
    }
    return "?";
}

inline StrategyKind strategy_kind_from(const std::string& s) {
    for (auto k : {StrategyKind::all_benign, StrategyKind::all_oe, StrategyKind::less_vulnerable_oe,
                   StrategyKind::more_vulnerable_oe, StrategyKind::random_oe})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown strategy '" + s + "'");
}

inline const std::vector<StrategyKind>& all_strategies() {
    static const std::vector<StrategyKind> v{StrategyKind::all_benign, StrategyKind::all_oe, StrategyKind::less_vulnerable_oe,
                                             StrategyKind::more_vulnerable_oe, StrategyKind::random_oe};
    return v;
}

struct TrainingSubsetSpec {
    std::size_t n_random_runs = 10;
    std::uint64_t seed = 0;
};

/// Per-patient benign and adversarial windows of the training split, in cohort order.
struct PatientPools {
    std::vector<std::string> ids;
    std::map<std::string, Windows> benign;
    std::map<std::string, Windows> adversarial;
};

struct TrainingSet {
    StrategyKind kind = StrategyKind::all_benign;
    std::size_t run = 0;
    std::uint64_t seed = 0;
    /// Patients the set draws from, in cohort order.
    std::vector<std::string> patients;
    Windows windows;
    /// 1 for an injected adversarial window. Detectors never see this label.
    std::vector<std::uint8_t> adversarial;
    /// Source patient of each window.
    std::vector<std::string> source;
    std::size_t n_benign = 0;
    std::size_t n_adversarial = 0;
    bool with_replacement = false;
};

/// Training-set size reduction in percent: 100 * (1 - selective / full).
inline double reduction_stats(std::size_t full, std::size_t selective) {
    if (full == 0) throw PreconditionError("reduction_stats needs a nonempty full set");
    return 100.0 * (1.0 - static_cast<double>(selective) / static_cast<double>(full));
}

namespace detail {

inline TrainingSet assemble(StrategyKind kind, std::size_t run, std::uint64_t seed, std::vector<std::string> group,
                            const PatientPools& pools, bool inject) {
    TrainingSet ts;
    ts.kind = kind;
    ts.run = run;
    ts.seed = seed;
    ts.patients = std::move(group);
    if (ts.patients.empty()) throw PreconditionError(std::string(to_string(kind)) + ": patient group is empty");
    for (const auto& id : ts.patients) {
        auto it = pools.benign.find(id);
        if (it == pools.benign.end()) throw PreconditionError("no benign windows for patient " + id);
        for (const auto& w : it->second) {
            ts.windows.push_back(w);
            ts.adversarial.push_back(0);
            ts.source.push_back(id);
        }
    }
    ts.n_benign = ts.windows.size();
    if (!inject) return ts;

    std::vector<std::pair<const std::string*, const std::vector<double>*>> pool;
    for (const auto& id : ts.patients)
        if (auto it = pools.adversarial.find(id); it != pools.adversarial.end())
            for (const auto& w : it->second) pool.emplace_back(&it->first, &w);
    if (pool.empty()) throw PreconditionError(std::string(to_string(kind)) + ": the patient group has no adversarial windows");

    Rng rng(seed);
    std::vector<std::size_t> pick;
    const std::size_t m = ts.n_benign;
    if (pool.size() >= m) {
        std::vector<std::size_t> idx(pool.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
        pick.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
        std::sort(pick.begin(), pick.end());
    } else {
        ts.with_replacement = true;
        warn(std::string(to_string(kind)) + " run " + std::to_string(run) + ": only " + std::to_string(pool.size()) +
             " adversarial windows for " + std::to_string(m) + " benign ones; sampling with replacement");
        for (std::size_t i = 0; i < m; ++i) pick.push_back(rng.index(pool.size()));
    }
    for (std::size_t i : pick) {
        ts.windows.push_back(*pool[i].second);
        ts.adversarial.push_back(1);
        ts.source.push_back(*pool[i].first);
    }
    ts.n_adversarial = pick.size();
    return ts;
}

inline std::vector<std::string> in_cohort_order(const std::vector<std::string>& ids, const std::vector<std::string>& members) {
    std::vector<std::string> out;
    for (const auto& id : ids)
        if (std::find(members.begin(), members.end(), id) != members.end()) out.push_back(id);
    return out;
}

}  // namespace detail

/// Builds one training set, or n_random_runs sets for random_oe. OE kinds add
/// adversarial windows drawn only from the set's own patients until the counts
/// match 1:1.
inline std::vector<TrainingSet> build(StrategyKind kind, const PatientPools& pools, const ClusterAssignment& assignment,
                                      const TrainingSubsetSpec& spec) {
    auto oe_seed = [&](std::size_t run) { return derive_seed(spec.seed, std::string("oe/") + to_string(kind), std::to_string(run)); };
    switch (kind) {
        case StrategyKind::all_benign: return {detail::assemble(kind, 0, 0, pools.ids, pools, false)};
        case StrategyKind::all_oe: return {detail::assemble(kind, 0, oe_seed(0), pools.ids, pools, true)};
        case StrategyKind::less_vulnerable_oe:
            if (assignment.less_vulnerable.empty()) throw PreconditionError("less-vulnerable cluster is empty");
            return {detail::assemble(kind, 0, oe_seed(0), detail::in_cohort_order(pools.ids, assignment.less_vulnerable), pools, true)};
        case StrategyKind::more_vulnerable_oe:
            if (assignment.more_vulnerable.empty()) throw PreconditionError("more-vulnerable cluster is empty");
            return {detail::assemble(kind, 0, oe_seed(0), detail::in_cohort_order(pools.ids, assignment.more_vulnerable), pools, true)};
        case StrategyKind::random_oe: {
            const std::size_t size = assignment.less_vulnerable.size();
            if (size == 0) throw PreconditionError("less-vulnerable cluster is empty");
            if (size > pools.ids.size()) throw PreconditionError("random_oe subset larger than the cohort");
            std::vector<TrainingSet> runs;
            for (std::size_t r = 0; r < spec.n_random_runs; ++r) {
                Rng rng(derive_seed(spec.seed, "random_oe/patients", std::to_string(r)));
                std::vector<std::string> ids = pools.ids;
                for (std::size_t i = 0; i < size; ++i) std::swap(ids[i], ids[i + rng.index(ids.size() - i)]);
                ids.resize(size);
                runs.push_back(detail::assemble(kind, r, oe_seed(r), detail::in_cohort_order(pools.ids, ids), pools, true));
            }
            return runs;
        }
    }
    throw PreconditionError("unknown strategy kind");
}

inline nlohmann::json manifest(const TrainingSet& ts) {
    return {{"strategy", to_string(ts.kind)}, {"run", ts.run},       {"seed", ts.seed},
            {"patients", ts.patients},        {"n_benign", ts.n_benign}, {"n_adversarial", ts.n_adversarial},
            {"with_replacement", ts.with_replacement}};
}

}  // namespace roast
