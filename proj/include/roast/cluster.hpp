#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "attack.hpp"
#include "errors.hpp"
#include "log.hpp"
#include "parallel.hpp"
#include "risk.hpp"

namespace roast {

/// Dynamic time warping with local cost |a_i - b_j| and no warping band.
inline double dtw_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw PreconditionError("dtw_distance needs nonempty sequences");
    const std::size_t m = b.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
    prev[0] = 0.0;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = inf;
        for (std::size_t j = 1; j <= m; ++j) {
            const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
            cur[j] = std::abs(a[i - 1] - b[j - 1]) + best;
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

struct DistanceMatrix {
    std::size_t n = 0;
    std::vector<double> d;

    double operator()(std::size_t i, std::size_t j) const { return d[i * n + j]; }
};

/// Each unordered pair is computed once; rows may run in parallel.
inline DistanceMatrix pairwise_matrix(const std::vector<std::vector<double>>& seqs, int jobs = 1) {
    if (seqs.size() < 2) throw PreconditionError("pairwise_matrix needs at least 2 sequences");
    DistanceMatrix m{seqs.size(), std::vector<double>(seqs.size() * seqs.size(), 0.0)};
    parallel_for(seqs.size(), jobs, [&](std::size_t i) {
        for (std::size_t j = i + 1; j < seqs.size(); ++j) {
            const double v = dtw_distance(seqs[i], seqs[j]);
            m.d[i * m.n + j] = v;
            m.d[j * m.n + i] = v;
        }
    });
    return m;
}

/// Leaves are 0..n-1; the k-th merge creates cluster n+k.
struct Merge {
    std::size_t a = 0, b = 0;
    double height = 0.0;
    std::size_t size = 0;
};

struct Dendrogram {
    std::size_t n_leaves = 0;
    std::vector<Merge> merges;
};

/// Agglomerative clustering with complete linkage. Ties on distance go to the
/// lexicographically smallest (cluster id, cluster id) pair.
inline Dendrogram complete_linkage(const DistanceMatrix& dm) {
    const std::size_t n = dm.n;
    if (n < 2) throw PreconditionError("complete_linkage needs n >= 2");
    const std::size_t total = 2 * n - 1;
    std::vector<double> D(total * total, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) D[i * total + j] = dm(i, j);
    std::vector<std::size_t> active(n), sizes(total, 1);
    for (std::size_t i = 0; i < n; ++i) active[i] = i;

    Dendrogram dg;
    dg.n_leaves = n;
    for (std::size_t step = 0; step + 1 < n; ++step) {
        std::size_t ba = 0, bb = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t x = 0; x < active.size(); ++x)
            for (std::size_t y = x + 1; y < active.size(); ++y) {
                const double v = D[active[x] * total + active[y]];
                if (v < best) {
                    best = v;
                    ba = x;
                    bb = y;
                }
            }
        const std::size_t ia = active[ba], ib = active[bb], id = n + step;
        sizes[id] = sizes[ia] + sizes[ib];
        dg.merges.push_back({ia, ib, best, sizes[id]});
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(bb));
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(ba));
        for (std::size_t k : active) {
            const double v = std::max(D[ia * total + k], D[ib * total + k]);
            D[id * total + k] = v;
            D[k * total + id] = v;
        }
        active.push_back(id);
    }
    return dg;
}

/// Applies the first n - k merges and returns the k clusters as sorted leaf lists,
/// ordered by their smallest leaf.
inline std::vector<std::vector<std::size_t>> cut_into(const Dendrogram& dg, std::size_t k) {
    const std::size_t n = dg.n_leaves;
    if (k < 1 || k > n) throw PreconditionError("cut_into needs 1 <= k <= n");
    std::vector<std::size_t> parent(2 * n - 1);
    for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
    auto root = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x];
        return x;
    };
    for (std::size_t s = 0; s < n - k; ++s) {
        parent[dg.merges[s].a] = n + s;
        parent[dg.merges[s].b] = n + s;
    }
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[root(i)].push_back(i);
    std::vector<std::vector<std::size_t>> out;
    for (auto& [r, g] : groups) out.push_back(std::move(g));
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.front() < y.front(); });
    return out;
}

/// Clusters left after cutting at `height`: merges at or below it are applied.
inline std::vector<std::vector<std::size_t>> cut_at(const Dendrogram& dg, double height) {
    std::size_t applied = 0;
    while (applied < dg.merges.size() && dg.merges[applied].height <= height) ++applied;
    return cut_into(dg, dg.n_leaves - applied);
}

struct Partition {
    std::vector<std::vector<std::size_t>> clusters;
    double cut_height = 0.0;
    double inter_cluster_distance = 0.0;
    /// Cluster count the largest gap alone would give.
    std::size_t natural_clusters = 2;
    /// True when the largest gap gave more than two clusters and the cut was moved up.
    bool forced = false;
};

/// Cuts in the largest gap between consecutive merge heights (ties go to the higher
/// gap) and then forces exactly two clusters by cutting below the final merge.
/// The cut height is the midpoint of the gap under the final merge.
inline Partition cut_largest_gap(const Dendrogram& dg) {
    const std::size_t n = dg.n_leaves;
    if (n < 2) throw PreconditionError("cut_largest_gap needs at least 2 leaves");
    Partition p;
    const auto& h = dg.merges;
    const std::size_t m = h.size();
    p.inter_cluster_distance = h.back().height;
    if (n == 2) {
        p.cut_height = h[0].height / 2.0;
        p.natural_clusters = 2;
    } else {
        std::size_t best_k = 0;
        double best_gap = -1.0;
        for (std::size_t k = 0; k + 1 < m; ++k) {
            const double gap = h[k + 1].height - h[k].height;
            if (gap >= best_gap) {
                best_gap = gap;
                best_k = k;
            }
        }
        p.natural_clusters = n - best_k - 1;
        p.cut_height = (h[m - 2].height + h[m - 1].height) / 2.0;
    }
    p.forced = p.natural_clusters > 2;
    p.clusters = cut_into(dg, 2);
    return p;
}

using SuccessRates = std::map<std::string, std::optional<double>>;

/// Index of the cluster with the lowest mean success rate. Undefined rates are left
/// out of the mean. Ties go to the smaller cluster, then to the earlier one.
inline std::size_t least_vulnerable_cluster(const std::vector<std::vector<std::size_t>>& clusters,
                                            const std::vector<std::string>& ids, const SuccessRates& rates,
                                            bool* tie = nullptr) {
    std::vector<double> means;
    for (const auto& c : clusters) {
        double s = 0.0;
        std::size_t cnt = 0;
        for (std::size_t leaf : c) {
            auto it = rates.find(ids[leaf]);
            if (it == rates.end()) throw PreconditionError("no success rate for patient " + ids[leaf]);
            if (it->second) {
                s += *it->second;
                ++cnt;
            }
        }
        if (cnt == 0) throw PreconditionError("a cluster has no patient with a defined success rate");
        means.push_back(s / static_cast<double>(cnt));
    }
    std::size_t best = 0;
    bool tied = false;
    for (std::size_t k = 1; k < clusters.size(); ++k) {
        if (means[k] < means[best]) {
            best = k;
            tied = false;
        } else if (means[k] == means[best]) {
            tied = true;
            if (clusters[k].size() < clusters[best].size()) best = k;
        }
    }
    if (tie) *tie = tied;
    return best;
}

struct ClusterAssignment {
    std::vector<std::string> less_vulnerable;
    std::vector<std::string> more_vulnerable;
    double cut_height = 0.0;
    double inter_cluster_distance = 0.0;
    std::size_t natural_clusters = 2;
    bool forced = false;
    double less_vulnerable_mean = 0.0;
    double more_vulnerable_mean = 0.0;
};

inline double mean_rate(const std::vector<std::string>& members, const SuccessRates& rates) {
    double s = 0.0;
    std::size_t c = 0;
    for (const auto& id : members)
        if (auto it = rates.find(id); it != rates.end() && it->second) {
            s += *it->second;
            ++c;
        }
    return c ? s / static_cast<double>(c) : std::nan("");
}

/// The cluster with the lower mean attack success rate becomes less_vulnerable.
inline ClusterAssignment label_vulnerability(const Partition& p, const std::vector<std::string>& ids, const SuccessRates& rates) {
    if (p.clusters.size() != 2) throw PreconditionError("label_vulnerability expects exactly two clusters");
    bool tie = false;
    const std::size_t lv = least_vulnerable_cluster(p.clusters, ids, rates, &tie);
    if (tie) warn("both clusters have the same mean success rate; the smaller one is labeled less vulnerable");
    ClusterAssignment a;
    for (std::size_t leaf : p.clusters[lv]) a.less_vulnerable.push_back(ids[leaf]);
    for (std::size_t leaf : p.clusters[1 - lv]) a.more_vulnerable.push_back(ids[leaf]);
    std::sort(a.less_vulnerable.begin(), a.less_vulnerable.end());
    std::sort(a.more_vulnerable.begin(), a.more_vulnerable.end());
    a.cut_height = p.cut_height;
    a.inter_cluster_distance = p.inter_cluster_distance;
    a.natural_clusters = p.natural_clusters;
    a.forced = p.forced;
    a.less_vulnerable_mean = mean_rate(a.less_vulnerable, rates);
    a.more_vulnerable_mean = mean_rate(a.more_vulnerable, rates);
    return a;
}

/// |a & b| / |a | b|, and 1 when both are empty.
inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& x : a) inter += b.count(x);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

struct ClusteringResult {
    std::vector<std::string> ids;
    DistanceMatrix matrix;
    Dendrogram dendrogram;
    ClusterAssignment assignment;
};

inline ClusteringResult cluster_profiles(const std::vector<RiskProfile>& profiles, const SuccessRates& rates, int jobs = 1) {
    ClusteringResult r;
    std::vector<std::vector<double>> seqs;
    for (const auto& p : profiles) {
        r.ids.push_back(p.patient_id);
        seqs.push_back(p.values);
    }
    r.matrix = pairwise_matrix(seqs, jobs);
    r.dendrogram = complete_linkage(r.matrix);
    r.assignment = label_vulnerability(cut_largest_gap(r.dendrogram), r.ids, rates);
    return r;
}

struct SweepRow {
    std::string parameter;
    int perturbation_pct = 0;
    double jaccard = 1.0;
    std::size_t n_clusters = 2;
};

/// Perturbation grid -range..+range in `step` percent increments.
inline std::vector<int> sweep_grid(int range_pct = 50, int step_pct = 5) {
    if (step_pct <= 0 || range_pct < 0) throw PreconditionError("sweep grid needs step > 0 and range >= 0");
    std::vector<int> g;
    for (int p = -range_pct; p <= range_pct; p += step_pct) g.push_back(p);
    return g;
}

/// Less-vulnerable patient set for an arbitrary number of clusters: the cluster with
/// the lowest mean success rate, or every patient when only one cluster is left.
inline std::set<std::string> less_vulnerable_set(const std::vector<std::vector<std::size_t>>& clusters,
                                                 const std::vector<std::string>& ids, const SuccessRates& rates) {
    std::set<std::string> out;
    const std::size_t k = clusters.size() == 1 ? 0 : least_vulnerable_cluster(clusters, ids, rates);
    for (std::size_t leaf : clusters[k]) out.insert(ids[leaf]);
    return out;
}

/// Threshold sweep on a fixed dendrogram: the baseline cut height is scaled by
/// (100 + pct) / 100 and the less-vulnerable set compared with the baseline one.
inline std::vector<SweepRow> threshold_sweep(const Dendrogram& dg, const std::vector<std::string>& ids, const SuccessRates& rates,
                                             const ClusterAssignment& baseline, const std::vector<int>& grid) {
    const std::set<std::string> base(baseline.less_vulnerable.begin(), baseline.less_vulnerable.end());
    std::vector<SweepRow> rows;
    for (int pct : grid) {
        if (pct == 0) {
            rows.push_back({"threshold", 0, 1.0, 2});
            continue;
        }
        const auto clusters = cut_at(dg, baseline.cut_height * (100.0 + pct) / 100.0);
        rows.push_back({"threshold", pct, jaccard(base, less_vulnerable_set(clusters, ids, rates)), clusters.size()});
    }
    return rows;
}

/// Coefficient sweep: one factor's coefficient is scaled at a time, profiles are
/// rebuilt and reclustered with the same cut rule, and the new less-vulnerable set
/// is compared with the baseline one.
inline std::vector<SweepRow> coefficient_sweep(const CohortAttack& attack, const std::vector<std::string>& schema,
                                               const std::vector<RiskFactor>& factors, const SuccessRates& rates,
                                               const ClusterAssignment& baseline, const std::vector<int>& grid, int jobs = 1) {
    const std::set<std::string> base(baseline.less_vulnerable.begin(), baseline.less_vulnerable.end());
    std::vector<SweepRow> rows;
    for (std::size_t f = 0; f < factors.size(); ++f) {
        for (int pct : grid) {
            auto scaled = factors;
            scaled[f].S = factors[f].S * (100.0 + pct) / 100.0;
            const auto profiles = build_profiles(attack, schema, scaled, false);
            const auto r = cluster_profiles(profiles, rates, jobs);
            const std::set<std::string> lv(r.assignment.less_vulnerable.begin(), r.assignment.less_vulnerable.end());
            rows.push_back({"coef:" + factors[f].feature, pct, jaccard(base, lv), 2});
        }
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "parameter,perturbation_pct,jaccard\n";
    for (const auto& r : rows) out += r.parameter + "," + std::to_string(r.perturbation_pct) + "," + format_double(r.jaccard) + "\n";
    return out;
}

inline nlohmann::json to_json(const Dendrogram& dg, const std::vector<std::string>& ids) {
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& m : dg.merges) merges.push_back({{"a", m.a}, {"b", m.b}, {"height", m.height}, {"size", m.size}});
    return {{"leaves", ids}, {"merges", merges}};
}

inline Dendrogram dendrogram_from_json(const nlohmann::json& j) {
    Dendrogram dg;
    dg.n_leaves = j.at("leaves").size();
    for (const auto& m : j.at("merges"))
        dg.merges.push_back({m.at("a").get<std::size_t>(), m.at("b").get<std::size_t>(), m.at("height").get<double>(),
                             m.at("size").get<std::size_t>()});
    if (dg.n_leaves < 2 || dg.merges.size() != dg.n_leaves - 1) throw ParseError("dendrogram record: merge count mismatch");
    return dg;
}

inline nlohmann::json to_json(const ClusterAssignment& a) {
    return {{"less_vulnerable", a.less_vulnerable},
            {"more_vulnerable", a.more_vulnerable},
            {"cut_height", a.cut_height},
            {"inter_cluster_distance", a.inter_cluster_distance},
            {"natural_clusters", a.natural_clusters},
            {"forced_two_clusters", a.forced},
            {"less_vulnerable_mean_success", a.less_vulnerable_mean},
            {"more_vulnerable_mean_success", a.more_vulnerable_mean}};
}

inline ClusterAssignment assignment_from_json(const nlohmann::json& j) {
    ClusterAssignment a;
    a.less_vulnerable = j.at("less_vulnerable").get<std::vector<std::string>>();
    a.more_vulnerable = j.at("more_vulnerable").get<std::vector<std::string>>();
    a.cut_height = j.at("cut_height").get<double>();
    a.inter_cluster_distance = j.at("inter_cluster_distance").get<double>();
    a.natural_clusters = j.at("natural_clusters").get<std::size_t>();
    a.forced = j.at("forced_two_clusters").get<bool>();
    a.less_vulnerable_mean = j.at("less_vulnerable_mean_success").get<double>();
    a.more_vulnerable_mean = j.at("more_vulnerable_mean_success").get<double>();
    return a;
}

}  // namespace roast
