#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace roast {

/// Closed interval [lo, hi].
struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Safe interval per feature. A value outside its feature's interval is unsafe.
struct StateConfig {
    std::map<std::string, Interval> safe;

    void validate() const {
        for (const auto& [name, iv] : safe)
            if (!(iv.lo < iv.hi))
                throw PreconditionError("state interval for '" + name + "' needs lo < hi");
    }

    const Interval& at(const std::string& feature) const {
        auto it = safe.find(feature);
        if (it == safe.end()) throw SchemaError("no safe interval configured for feature '" + feature + "'");
        return it->second;
    }
};

struct PatientSeries {
    std::string patient_id;
    std::vector<std::string> feature_names;
    std::vector<std::int64_t> timestamps;
    /// One channel per feature, in `feature_names` order.
    std::vector<std::vector<double>> channels;
    std::optional<std::string> label_channel;

    std::size_t length() const { return timestamps.size(); }

    std::size_t feature_index(const std::string& name) const {
        auto it = std::find(feature_names.begin(), feature_names.end(), name);
        if (it == feature_names.end()) throw SchemaError("unknown feature '" + name + "'");
        return static_cast<std::size_t>(it - feature_names.begin());
    }

    const std::vector<double>& channel(const std::string& name) const { return channels[feature_index(name)]; }

    void validate() const {
        if (channels.size() != feature_names.size())
            throw SchemaError("patient " + patient_id + ": channel count does not match feature names");
        if (timestamps.empty()) throw PreconditionError("patient " + patient_id + ": empty series");
        for (const auto& c : channels)
            if (c.size() != timestamps.size())
                throw SchemaError("patient " + patient_id + ": channels differ in length");
        for (std::size_t i = 1; i < timestamps.size(); ++i)
            if (timestamps[i] <= timestamps[i - 1])
                throw PreconditionError("patient " + patient_id + ": timestamps not strictly increasing");
    }
};

struct Cohort {
    std::vector<std::string> schema;
    std::optional<std::string> label_channel;
    StateConfig states;
    std::vector<PatientSeries> patients;

    std::size_t feature_index(const std::string& name) const {
        auto it = std::find(schema.begin(), schema.end(), name);
        if (it == schema.end()) throw SchemaError("unknown feature '" + name + "'");
        return static_cast<std::size_t>(it - schema.begin());
    }

    const PatientSeries& patient(const std::string& id) const {
        for (const auto& p : patients)
            if (p.patient_id == id) return p;
        throw PreconditionError("unknown patient '" + id + "'");
    }

    std::vector<std::string> patient_ids() const {
        std::vector<std::string> ids;
        ids.reserve(patients.size());
        for (const auto& p : patients) ids.push_back(p.patient_id);
        return ids;
    }

    void validate() const {
        std::set<std::string> seen;
        for (const auto& p : patients) {
            if (!seen.insert(p.patient_id).second) throw PreconditionError("duplicate patient id " + p.patient_id);
            if (p.feature_names != schema) throw SchemaError("patient " + p.patient_id + " does not match the cohort schema");
            p.validate();
        }
        if (label_channel) feature_index(*label_channel);
        states.validate();
    }
};

/// Reads `patient_id,timestamp,<schema...>` rows. Patients keep their order of
/// first appearance and rows are sorted by timestamp within each patient.
inline Cohort load_csv(const std::filesystem::path& path, const std::vector<std::string>& schema) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    const auto header = split(strip_cr(line), ',');
    std::vector<std::string> expected{"patient_id", "timestamp"};
    expected.insert(expected.end(), schema.begin(), schema.end());
    for (const auto& col : expected)
        if (std::find(header.begin(), header.end(), col) == header.end())
            throw SchemaError(path.string() + ": header is missing column '" + col + "'");
    if (header != expected) throw SchemaError(path.string() + ": header does not match schema order");

    struct Row {
        std::int64_t t;
        std::vector<double> v;
    };
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<Row>> rows;
    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split(line, ',');
        const std::string ctx = path.string() + " row " + std::to_string(row_no);
        if (fields.size() != expected.size()) throw ParseError(ctx + ": expected " + std::to_string(expected.size()) + " fields");
        if (fields[0].empty()) throw ParseError(ctx + ": empty patient_id");
        Row r{parse_int(fields[1], ctx), {}};
        for (std::size_t j = 2; j < fields.size(); ++j) {
            if (fields[j].empty()) throw ParseError(ctx + ": missing value");
            r.v.push_back(parse_double(fields[j], ctx));
        }
        auto [it, inserted] = rows.try_emplace(fields[0]);
        if (inserted) order.push_back(fields[0]);
        it->second.push_back(std::move(r));
    }

    Cohort c;
    c.schema = schema;
    for (const auto& id : order) {
        auto& rs = rows[id];
        std::stable_sort(rs.begin(), rs.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
        PatientSeries p;
        p.patient_id = id;
        p.feature_names = schema;
        p.channels.assign(schema.size(), {});
        for (std::size_t i = 0; i < rs.size(); ++i) {
            if (i > 0 && rs[i].t == rs[i - 1].t)
                throw ParseError(path.string() + ": duplicate (patient, timestamp) = (" + id + ", " + std::to_string(rs[i].t) + ")");
            p.timestamps.push_back(rs[i].t);
            for (std::size_t f = 0; f < schema.size(); ++f) p.channels[f].push_back(rs[i].v[f]);
        }
        c.patients.push_back(std::move(p));
    }
    return c;
}

/// Shape of one synthetic channel:
/// value(t) = base + jitter + coupling * s + amplitude * sin(slow) + fast_ratio * amplitude * sin(fast) + gain * s * N(0, 1)
/// where s is the patient's noise scale and jitter is drawn from U(-offset_jitter, offset_jitter).
struct ChannelShape {
    std::string name;
    double base = 0.0;
    double amplitude = 1.0;
    double fast_ratio = 0.5;
    double offset_jitter = 4.0;
    double noise_coupling = 0.0;
    double noise_gain = 1.0;
    double slow_period_lo = 60.0, slow_period_hi = 120.0;
    double fast_period_lo = 20.0, fast_period_hi = 40.0;
};

struct SynthSpec {
    std::vector<ChannelShape> channels;
    std::optional<std::string> label_channel;
    StateConfig states;
};

/// Heart-rate-like label channel plus one auxiliary vital sign. Noisier
/// patients also run higher on the label channel.
inline SynthSpec default_synth_spec() {
    SynthSpec s;
    ChannelShape hr{"hr", 75.0, 6.0, 0.5, 4.0, 2.0, 1.0};
    ChannelShape aux{"aux", 100.0, 10.0, 0.0, 8.0, 0.0, 1.0};
    s.channels = {hr, aux};
    s.label_channel = "hr";
    s.states.safe["hr"] = {50.0, 120.0};
    return s;
}

inline std::string synth_patient_id(std::size_t i, std::size_t n) {
    const std::size_t width = std::max<std::size_t>(2, std::to_string(n - 1).size());
    std::string digits = std::to_string(i);
    return "p" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

inline Cohort synth_cohort(std::uint64_t seed, std::size_t n_patients, std::size_t T,
                           const std::vector<double>& noise_profile, const SynthSpec& spec = default_synth_spec()) {
    if (n_patients < 2) throw PreconditionError("invalid size: synth_cohort needs at least 2 patients");
    if (T < 2) throw PreconditionError("invalid size: synth_cohort needs T >= 2");
    if (noise_profile.size() != n_patients) throw PreconditionError("noise_profile length must equal n_patients");
    if (spec.channels.empty()) throw PreconditionError("synth spec has no channels");
    constexpr double two_pi = 6.283185307179586;

    Cohort c;
    for (const auto& ch : spec.channels) c.schema.push_back(ch.name);
    c.label_channel = spec.label_channel;
    c.states = spec.states;
    for (std::size_t i = 0; i < n_patients; ++i) {
        PatientSeries p;
        p.patient_id = synth_patient_id(i, n_patients);
        p.feature_names = c.schema;
        p.label_channel = spec.label_channel;
        p.timestamps.resize(T);
        for (std::size_t t = 0; t < T; ++t) p.timestamps[t] = static_cast<std::int64_t>(t);
        Rng rng(derive_seed(seed, "synth", p.patient_id));
        const double s = noise_profile[i];
        for (const auto& ch : spec.channels) {
            const double offset = ch.base + rng.uniform(-ch.offset_jitter, ch.offset_jitter) + ch.noise_coupling * s;
            const double p_slow = rng.uniform(ch.slow_period_lo, ch.slow_period_hi);
            const double ph_slow = rng.uniform(0.0, two_pi);
            const double p_fast = rng.uniform(ch.fast_period_lo, ch.fast_period_hi);
            const double ph_fast = rng.uniform(0.0, two_pi);
            std::vector<double> v(T);
            for (std::size_t t = 0; t < T; ++t) {
                const double tt = static_cast<double>(t);
                v[t] = offset + ch.amplitude * std::sin(two_pi * tt / p_slow + ph_slow) +
                       ch.fast_ratio * ch.amplitude * std::sin(two_pi * tt / p_fast + ph_fast) +
                       ch.noise_gain * s * rng.normal();
            }
            p.channels.push_back(std::move(v));
        }
        c.patients.push_back(std::move(p));
    }
    return c;
}

struct SplitSpec {
    double train_fraction = 0.8;
};

inline std::size_t train_length(std::size_t T, double fraction) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(T) + 1e-9));
}

inline PatientSeries slice(const PatientSeries& p, std::size_t begin, std::size_t end) {
    PatientSeries out;
    out.patient_id = p.patient_id;
    out.feature_names = p.feature_names;
    out.label_channel = p.label_channel;
    out.timestamps.assign(p.timestamps.begin() + static_cast<std::ptrdiff_t>(begin), p.timestamps.begin() + static_cast<std::ptrdiff_t>(end));
    for (const auto& c : p.channels) out.channels.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(begin), c.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

/// Per patient, the first floor(fraction * T) samples go to train and the rest to test.
inline std::pair<Cohort, Cohort> chrono_split(const Cohort& cohort, const SplitSpec& spec = {}) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw PreconditionError("train_fraction must lie in (0, 1)");
    Cohort train{cohort.schema, cohort.label_channel, cohort.states, {}};
    Cohort test{cohort.schema, cohort.label_channel, cohort.states, {}};
    for (const auto& p : cohort.patients) {
        const std::size_t T = p.length();
        if (T < 2) throw PreconditionError("patient " + p.patient_id + " has fewer than 2 samples");
        const std::size_t n_train = train_length(T, spec.train_fraction);
        if (n_train == 0 || n_train == T)
            throw PreconditionError("patient " + p.patient_id + ": split leaves an empty part");
        train.patients.push_back(slice(p, 0, n_train));
        test.patients.push_back(slice(p, n_train, T));
    }
    return {std::move(train), std::move(test)};
}

/// Flattened windows of n timestamps, feature-major: all n values of feature 0,
/// then all n values of feature 1, and so on. Windows are ordered by start time.
/// Returns no windows when n > T.
inline std::vector<std::vector<double>> windowize(const PatientSeries& series, std::size_t n, std::size_t stride) {
    if (stride == 0) throw PreconditionError("window stride must be >= 1");
    if (n == 0) throw PreconditionError("window length must be >= 1");
    std::vector<std::vector<double>> out;
    const std::size_t T = series.length();
    if (n > T) return out;
    for (std::size_t s = 0; s + n <= T; s += stride) {
        std::vector<double> w;
        w.reserve(n * series.channels.size());
        for (const auto& c : series.channels) w.insert(w.end(), c.begin() + static_cast<std::ptrdiff_t>(s), c.begin() + static_cast<std::ptrdiff_t>(s + n));
        out.push_back(std::move(w));
    }
    return out;
}

inline std::size_t window_count(std::size_t T, std::size_t n, std::size_t stride) {
    return n > T ? 0 : (T - n) / stride + 1;
}

/// Windows paired with the target channel value `horizon` steps after each window's last timestamp.
struct SupervisedSet {
    std::vector<std::vector<double>> inputs;
    std::vector<double> targets;
};

inline SupervisedSet make_supervised(const PatientSeries& series, std::size_t n, std::size_t stride,
                                     const std::string& target_feature, std::size_t horizon = 1) {
    if (stride == 0) throw PreconditionError("window stride must be >= 1");
    SupervisedSet out;
    const auto& target = series.channel(target_feature);
    const std::size_t T = series.length();
    if (n + horizon > T) return out;
    auto all = windowize(series, n, stride);
    for (std::size_t k = 0; k < all.size(); ++k) {
        const std::size_t idx = k * stride + n - 1 + horizon;
        if (idx >= T) break;
        out.inputs.push_back(std::move(all[k]));
        out.targets.push_back(target[idx]);
    }
    return out;
}

/// Fraction of points whose modified Z-score 0.6745 (x - median) / MAD exceeds
/// `cutoff` in absolute value. With MAD = 0, every point off the median counts.
inline double zscore_outlier_fraction(const std::vector<double>& values, double cutoff = 3.5) {
    if (values.empty()) throw PreconditionError("zscore_outlier_fraction of an empty sequence");
    const double med = median(values);
    std::vector<double> dev(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) dev[i] = std::abs(values[i] - med);
    const double mad = median(dev);
    std::size_t count = 0;
    for (double x : values) {
        if (mad == 0.0) {
            count += (x != med);
        } else {
            count += std::abs(0.6745 * (x - med) / mad) > cutoff;
        }
    }
    return static_cast<double>(count) / static_cast<double>(values.size());
}

/// Fraction of points outside [Q1 - factor*IQR, Q3 + factor*IQR].
inline double iqr_outlier_fraction(const std::vector<double>& values, double factor = 1.5) {
    if (values.empty()) throw PreconditionError("iqr_outlier_fraction of an empty sequence");
    const double q1 = quantile(values, 0.25);
    const double q3 = quantile(values, 0.75);
    const double iqr = q3 - q1;
    const double lo = q1 - factor * iqr, hi = q3 + factor * iqr;
    std::size_t count = 0;
    for (double x : values) count += (x < lo || x > hi);
    return static_cast<double>(count) / static_cast<double>(values.size());
}

/// Normal-to-abnormal sample count ratio on the label channel. Returns +infinity
/// when no sample is abnormal.
inline double normal_abnormal_ratio(const PatientSeries& series, const StateConfig& config) {
    if (!series.label_channel) throw PreconditionError("patient " + series.patient_id + " has no label channel");
    const auto& iv = config.at(*series.label_channel);
    std::size_t normal = 0, abnormal = 0;
    for (double v : series.channel(*series.label_channel)) (iv.contains(v) ? normal : abnormal)++;
    if (abnormal == 0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(normal) / static_cast<double>(abnormal);
}

struct OutlierStats {
    std::string patient_id;
    double zscore = 0.0;
    double iqr = 0.0;
};

struct OutlierTable {
    std::vector<OutlierStats> rows;
    double zscore_cutoff = 3.5;
    double iqr_factor = 1.5;
    double zscore_mean = 0.0, zscore_std = 0.0;
    double iqr_mean = 0.0, iqr_std = 0.0;
};

/// Both fractions per patient over all features pooled, plus the cohort mean and
/// sample standard deviation (0 for a single patient).
inline OutlierTable outlier_table(const Cohort& cohort, double cutoff = 3.5, double factor = 1.5) {
    if (cohort.patients.empty()) throw PreconditionError("outlier_table of an empty cohort");
    OutlierTable t;
    t.zscore_cutoff = cutoff;
    t.iqr_factor = factor;
    std::vector<double> zs, qs;
    for (const auto& p : cohort.patients) {
        std::vector<double> pooled;
        for (const auto& c : p.channels) pooled.insert(pooled.end(), c.begin(), c.end());
        OutlierStats s{p.patient_id, zscore_outlier_fraction(pooled, cutoff), iqr_outlier_fraction(pooled, factor)};
        zs.push_back(s.zscore);
        qs.push_back(s.iqr);
        t.rows.push_back(s);
    }
    t.zscore_mean = mean(zs);
    t.iqr_mean = mean(qs);
    t.zscore_std = zs.size() > 1 ? sample_stddev(zs) : 0.0;
    t.iqr_std = qs.size() > 1 ? sample_stddev(qs) : 0.0;
    return t;
}

// Line-based cohort record:
//   roast-cohort 1
//   schema <names...>
//   label <name|->
//   state <feature> <lo> <hi>          (zero or more)
//   patient <id> <T>
//   t <ticks...>
//   f <values...>                      (one line per feature, schema order)
inline std::string serialize_cohort(const Cohort& c) {
    std::ostringstream out;
    out << "roast-cohort 1\nschema";
    for (const auto& s : c.schema) out << ' ' << s;
    out << "\nlabel " << (c.label_channel ? *c.label_channel : "-") << '\n';
    for (const auto& [name, iv] : c.states.safe) out << "state " << name << ' ' << format_double(iv.lo) << ' ' << format_double(iv.hi) << '\n';
    for (const auto& p : c.patients) {
        out << "patient " << p.patient_id << ' ' << p.length() << "\nt";
        for (auto t : p.timestamps) out << ' ' << t;
        out << '\n';
        for (const auto& ch : p.channels) out << "f " << join_doubles(ch) << '\n';
    }
    return out.str();
}

inline Cohort deserialize_cohort(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    auto next = [&](const char* what) {
        if (!std::getline(in, line)) throw ParseError(std::string("cohort record truncated before ") + what);
        return split(line, ' ');
    };
    auto head = next("header");
    if (head.size() != 2 || head[0] != "roast-cohort" || head[1] != "1") throw ParseError("not a version-1 cohort record");
    auto sch = next("schema");
    if (sch.empty() || sch[0] != "schema") throw ParseError("cohort record: expected schema line");
    Cohort c;
    c.schema.assign(sch.begin() + 1, sch.end());
    auto lab = next("label");
    if (lab.size() != 2 || lab[0] != "label") throw ParseError("cohort record: expected label line");
    if (lab[1] != "-") c.label_channel = lab[1];
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split(line, ' ');
        if (f[0] == "state" && f.size() == 4) {
            c.states.safe[f[1]] = {parse_double(f[2], "state"), parse_double(f[3], "state")};
        } else if (f[0] == "patient" && f.size() == 3) {
            PatientSeries p;
            p.patient_id = f[1];
            p.feature_names = c.schema;
            p.label_channel = c.label_channel;
            const auto T = static_cast<std::size_t>(parse_int(f[2], "patient length"));
            auto tl = next("timestamps");
            if (tl.empty() || tl[0] != "t" || tl.size() != T + 1) throw ParseError("cohort record: bad timestamp line for " + p.patient_id);
            for (std::size_t i = 1; i < tl.size(); ++i) p.timestamps.push_back(parse_int(tl[i], "timestamp"));
            for (std::size_t k = 0; k < c.schema.size(); ++k) {
                auto fl = next("feature values");
                if (fl.empty() || fl[0] != "f" || fl.size() != T + 1) throw ParseError("cohort record: bad feature line for " + p.patient_id);
                std::vector<double> v;
                v.reserve(T);
                for (std::size_t i = 1; i < fl.size(); ++i) v.push_back(parse_double(fl[i], "feature value"));
                p.channels.push_back(std::move(v));
            }
            c.patients.push_back(std::move(p));
        } else {
            throw ParseError("cohort record: unexpected line '" + line + "'");
        }
    }
    c.validate();
    return c;
}

}  // namespace roast
