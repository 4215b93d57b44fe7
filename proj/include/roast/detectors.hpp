#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "log.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace roast {

using Windows = std::vector<std::vector<double>>;

enum class DetectorKind { knn, ocsvm, autoencoder };

inline const char* to_string(DetectorKind k) {
    switch (k) {
        case DetectorKind::knn: return "knn";
        case DetectorKind::ocsvm: return "ocsvm";
        case DetectorKind::autoencoder: return "autoencoder";
    }
    return "?";
}

inline const char* display_name(DetectorKind k) {
    switch (k) {
        case DetectorKind::knn: return "kNN";
        case DetectorKind::ocsvm: return "One-Class SVM";
        case DetectorKind::autoencoder: return "AE (MAD-GAN stand-in)";
    }
    return "?";
}

inline DetectorKind detector_kind_from(const std::string& s) {
    if (s == "knn") return DetectorKind::knn;
    if (s == "ocsvm") return DetectorKind::ocsvm;
    if (s == "autoencoder") return DetectorKind::autoencoder;
    throw ConfigError("unknown detector '" + s + "'");
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return std::sqrt(s);
}

/// Threshold leaving `contamination` of the training scores above it: the
/// (1 - contamination) quantile with linear interpolation.
inline double calibrate_threshold(const std::vector<double>& training_scores, double contamination) {
    if (!(contamination > 0.0 && contamination < 1.0)) throw PreconditionError("contamination must lie in (0, 1)");
    return quantile(training_scores, 1.0 - contamination);
}

inline void check_windows(const Windows& w, const char* who) {
    if (w.empty()) throw PreconditionError(std::string(who) + ": no training windows");
    for (const auto& x : w)
        if (x.size() != w.front().size()) throw DimensionError(std::string(who) + ": training windows differ in length");
}

/// Shared interface: higher scores are more anomalous and a window is anomalous
/// iff its score is strictly above the calibrated threshold.
class Detector {
public:
    virtual ~Detector() = default;
    virtual DetectorKind kind() const = 0;
    virtual double score(const std::vector<double>& x) const = 0;
    virtual std::string serialize() const = 0;

    std::size_t input_dim() const { return input_dim_; }
    double threshold() const { return threshold_; }

    bool classify(const std::vector<double>& x, double* raw_score = nullptr) const {
        const double s = score(x);
        if (raw_score) *raw_score = s;
        return s > threshold_;
    }

    std::vector<double> scores(const Windows& xs) const {
        std::vector<double> out(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] = score(xs[i]);
        return out;
    }

protected:
    void check_dim(const std::vector<double>& x) const {
        if (x.size() != input_dim_)
            throw DimensionError("window length " + std::to_string(x.size()) + " does not match detector input_dim " + std::to_string(input_dim_));
    }

    std::size_t input_dim_ = 0;
    double threshold_ = 0.0;
};

// ---------------------------------------------------------------- kNN

struct KnnConfig {
    std::size_t neighbors = 7;
    double contamination = 0.5;
    /// Score by the mean of the k nearest distances instead of the k-th one.
    bool mean_of_k = false;
};

class KnnDetector final : public Detector {
public:
    KnnDetector(Windows train, KnnConfig cfg) : train_(std::move(train)), cfg_(cfg) {
        check_windows(train_, "knn");
        if (cfg_.neighbors < 1) throw PreconditionError("knn needs neighbors >= 1");
        if (train_.size() < cfg_.neighbors + 1) throw PreconditionError("knn needs at least k+1 training windows");
        input_dim_ = train_.front().size();
        training_scores_.resize(train_.size());
        std::vector<double> d;
        for (std::size_t i = 0; i < train_.size(); ++i) {
            d.clear();
            for (std::size_t j = 0; j < train_.size(); ++j)
                if (j != i) d.push_back(euclidean(train_[i], train_[j]));
            training_scores_[i] = reduce(d);
        }
        threshold_ = calibrate_threshold(training_scores_, cfg_.contamination);
    }

    /// Rebuilds a fitted detector from stored state without recomputing the threshold.
    KnnDetector(Windows train, KnnConfig cfg, double threshold) : train_(std::move(train)), cfg_(cfg) {
        check_windows(train_, "knn");
        input_dim_ = train_.front().size();
        threshold_ = threshold;
    }

    DetectorKind kind() const override { return DetectorKind::knn; }

    double score(const std::vector<double>& x) const override {
        check_dim(x);
        std::vector<double> d(train_.size());
        for (std::size_t j = 0; j < train_.size(); ++j) d[j] = euclidean(x, train_[j]);
        return reduce(d);
    }

    /// Leave-self-out scores of the training windows.
    const std::vector<double>& training_scores() const { return training_scores_; }
    const KnnConfig& config() const { return cfg_; }

    std::string serialize() const override {
        std::ostringstream out;
        out << "roast-detector 1\nkind knn\nk " << cfg_.neighbors << ' ' << format_double(cfg_.contamination) << ' '
            << (cfg_.mean_of_k ? 1 : 0) << "\nthreshold " << format_double(threshold_) << "\nwindows " << train_.size() << '\n';
        for (const auto& w : train_) out << join_doubles(w) << '\n';
        return out.str();
    }

private:
    double reduce(std::vector<double>& d) const {
        const std::size_t k = cfg_.neighbors;
        std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
        if (!cfg_.mean_of_k) return d[k - 1];
        std::sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k));
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += d[i];
        return s / static_cast<double>(k);
    }

    Windows train_;
    KnnConfig cfg_;
    std::vector<double> training_scores_;
};

// ---------------------------------------------------------------- One-class SVM

struct OcsvmConfig {
    /// RBF width; 0 selects 1 / input_dim.
    double gamma = 0.0;
    double nu = 0.5;
    double tol = 1e-3;
    std::size_t max_iter = 10000000;
    /// Memory budget for cached kernel rows, in bytes.
    std::size_t cache_bytes = std::size_t{128} << 20;
};

namespace detail {

/// Kernel rows computed on demand and kept in a least-recently-used cache.
class RbfRowCache {
public:
    RbfRowCache(const Windows& x, double gamma, std::size_t budget) : x_(x), gamma_(gamma) {
        const std::size_t row_bytes = std::max<std::size_t>(1, x.size() * sizeof(double));
        capacity_ = std::max<std::size_t>(2, budget / row_bytes);
    }

    const std::vector<double>& row(std::size_t i) {
        auto it = rows_.find(i);
        if (it != rows_.end()) {
            order_.splice(order_.begin(), order_, it->second.second);
            return it->second.first;
        }
        if (rows_.size() >= capacity_) {
            rows_.erase(order_.back());
            order_.pop_back();
        }
        std::vector<double> r(x_.size());
        for (std::size_t j = 0; j < x_.size(); ++j) r[j] = kernel(x_[i], x_[j]);
        order_.push_front(i);
        auto res = rows_.emplace(i, std::make_pair(std::move(r), order_.begin()));
        return res.first->second.first;
    }

    double kernel(const std::vector<double>& a, const std::vector<double>& b) const {
        double s = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) {
            const double d = a[j] - b[j];
            s += d * d;
        }
        return std::exp(-gamma_ * s);
    }

private:
    const Windows& x_;
    double gamma_;
    std::size_t capacity_;
    std::list<std::size_t> order_;
    std::unordered_map<std::size_t, std::pair<std::vector<double>, std::list<std::size_t>::iterator>> rows_;
};

}  // namespace detail

struct OcsvmSolution {
    /// Dual coefficients scaled so that sum(alpha) = 1 and 0 <= alpha_i <= 1/(nu n).
    std::vector<double> alpha;
    double rho = 0.0;
    /// Final maximal KKT violation in the solver's unscaled units.
    double kkt_violation = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

/// SMO on the nu one-class dual
///   min 0.5 a'Ka  s.t.  0 <= a_i <= 1, sum a = nu n
/// with second-order working-set selection. The result is rescaled by 1/(nu n).
inline OcsvmSolution solve_ocsvm_dual(const Windows& x, double gamma, const OcsvmConfig& cfg) {
    const std::size_t n = x.size();
    detail::RbfRowCache Q(x, gamma, cfg.cache_bytes);
    std::vector<double> a(n, 0.0), G(n, 0.0);
    const double total = cfg.nu * static_cast<double>(n);
    const auto whole = static_cast<std::size_t>(total);
    for (std::size_t i = 0; i < whole && i < n; ++i) a[i] = 1.0;
    if (whole < n) a[whole] = total - static_cast<double>(whole);
    for (std::size_t i = 0; i < n; ++i)
        if (a[i] != 0.0) {
            const auto& Qi = Q.row(i);
            for (std::size_t j = 0; j < n; ++j) G[j] += a[i] * Qi[j];
        }

    constexpr double tau = 1e-12;
    OcsvmSolution sol;
    std::size_t iter = 0;
    for (;;) {
        // i: most violating index that can grow; j: best partner that can shrink.
        double gmax = -INFINITY, gmax2 = -INFINITY;
        std::size_t i = n, j = n;
        for (std::size_t t = 0; t < n; ++t)
            if (a[t] < 1.0 && -G[t] >= gmax) {
                gmax = -G[t];
                i = t;
            }
        double best_obj = INFINITY;
        const std::vector<double>* Qi = i < n ? &Q.row(i) : nullptr;
        for (std::size_t t = 0; t < n; ++t) {
            if (a[t] <= 0.0) continue;
            gmax2 = std::max(gmax2, G[t]);
            if (!Qi) continue;
            const double diff = gmax + G[t];
            if (diff > 0.0) {
                double quad = 2.0 - 2.0 * (*Qi)[t];
                if (quad <= 0.0) quad = tau;
                const double obj = -(diff * diff) / quad;
                if (obj <= best_obj) {
                    best_obj = obj;
                    j = t;
                }
            }
        }
        sol.kkt_violation = gmax + gmax2;
        if (sol.kkt_violation < cfg.tol || j == n) {
            sol.converged = true;
            break;
        }
        if (iter >= cfg.max_iter) break;
        ++iter;

        const std::vector<double> Qi_row = Q.row(i);
        const auto& Qj = Q.row(j);
        double quad = 2.0 - 2.0 * Qi_row[j];
        if (quad <= 0.0) quad = tau;
        const double old_i = a[i], old_j = a[j];
        const double delta = (G[i] - G[j]) / quad;
        const double sum = a[i] + a[j];
        a[i] -= delta;
        a[j] += delta;
        if (sum > 1.0) {
            if (a[i] > 1.0) {
                a[i] = 1.0;
                a[j] = sum - 1.0;
            }
        } else if (a[j] < 0.0) {
            a[j] = 0.0;
            a[i] = sum;
        }
        if (sum > 1.0) {
            if (a[j] > 1.0) {
                a[j] = 1.0;
                a[i] = sum - 1.0;
            }
        } else if (a[i] < 0.0) {
            a[i] = 0.0;
            a[j] = sum;
        }
        const double di = a[i] - old_i, dj = a[j] - old_j;
        for (std::size_t t = 0; t < n; ++t) G[t] += Qi_row[t] * di + Qj[t] * dj;
    }
    sol.iterations = iter;

    double ub = INFINITY, lb = -INFINITY, sum_free = 0.0;
    std::size_t n_free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        if (a[t] >= 1.0) {
            lb = std::max(lb, G[t]);
        } else if (a[t] <= 0.0) {
            ub = std::min(ub, G[t]);
        } else {
            sum_free += G[t];
            ++n_free;
        }
    }
    const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;
    sol.alpha.resize(n);
    for (std::size_t t = 0; t < n; ++t) sol.alpha[t] = a[t] / total;
    sol.rho = rho / total;
    return sol;
}

class OcsvmDetector final : public Detector {
public:
    OcsvmDetector(const Windows& train, OcsvmConfig cfg) : cfg_(cfg) {
        check_windows(train, "ocsvm");
        if (train.size() < 2) throw PreconditionError("ocsvm needs at least 2 training windows");
        if (!(cfg_.nu > 0.0 && cfg_.nu <= 1.0)) throw PreconditionError("ocsvm needs nu in (0, 1]");
        input_dim_ = train.front().size();
        gamma_ = cfg_.gamma > 0.0 ? cfg_.gamma : 1.0 / static_cast<double>(input_dim_);
        solution_ = solve_ocsvm_dual(train, gamma_, cfg_);
        if (!solution_.converged)
            warn("ocsvm reached max_iter without meeting tol; keeping the last iterate (KKT violation " +
                 format_double(solution_.kkt_violation) + ")");
        for (std::size_t i = 0; i < train.size(); ++i)
            if (solution_.alpha[i] > 0.0) {
                sv_.push_back(train[i]);
                coef_.push_back(solution_.alpha[i]);
            }
        rho_ = solution_.rho;
        threshold_ = calibrate_threshold(scores(train), cfg_.nu >= 1.0 ? 0.5 : cfg_.nu);
    }

    OcsvmDetector(Windows sv, std::vector<double> coef, double rho, double gamma, double threshold, OcsvmConfig cfg)
        : cfg_(cfg), gamma_(gamma), rho_(rho), sv_(std::move(sv)), coef_(std::move(coef)) {
        input_dim_ = sv_.empty() ? 0 : sv_.front().size();
        threshold_ = threshold;
    }

    DetectorKind kind() const override { return DetectorKind::ocsvm; }

    /// rho - sum_i alpha_i K(x_i, x); positive outside the learned region.
    double score(const std::vector<double>& x) const override {
        check_dim(x);
        double s = 0.0;
        for (std::size_t i = 0; i < sv_.size(); ++i) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double d = sv_[i][j] - x[j];
                d2 += d * d;
            }
            s += coef_[i] * std::exp(-gamma_ * d2);
        }
        return rho_ - s;
    }

    const OcsvmSolution& solution() const { return solution_; }
    double gamma() const { return gamma_; }
    double rho() const { return rho_; }

    std::string serialize() const override {
        std::ostringstream out;
        out << "roast-detector 1\nkind ocsvm\nparams " << format_double(gamma_) << ' ' << format_double(rho_) << ' '
            << format_double(cfg_.nu) << ' ' << format_double(cfg_.tol) << "\nthreshold " << format_double(threshold_)
            << "\nsv " << sv_.size() << '\n';
        for (std::size_t i = 0; i < sv_.size(); ++i) out << format_double(coef_[i]) << ' ' << join_doubles(sv_[i]) << '\n';
        return out.str();
    }

private:
    OcsvmConfig cfg_;
    double gamma_ = 0.0;
    double rho_ = 0.0;
    Windows sv_;
    std::vector<double> coef_;
    OcsvmSolution solution_;
};

// ---------------------------------------------------------------- Autoencoder

struct AutoencoderConfig {
    std::size_t epochs = 100;
    double learning_rate = 0.05;
    std::size_t batch_size = 32;
    /// 0 selects max(1, input_dim / 4).
    std::size_t bottleneck = 0;
    double contamination = 0.5;
    std::uint64_t seed = 0;
    /// Hidden activation: tanh, or identity when false.
    bool tanh_hidden = true;
};

/// Reconstruction autoencoder x -> act(W1 x + b1) -> W2 h + b2, trained by seeded
/// minibatch SGD. Score is the mean squared reconstruction error.
class AutoencoderDetector final : public Detector {
public:
    AutoencoderDetector(const Windows& train, AutoencoderConfig cfg) : cfg_(cfg) {
        check_windows(train, "autoencoder");
        if (train.size() < cfg_.batch_size) throw PreconditionError("autoencoder needs at least batch_size training windows");
        if (cfg_.epochs < 1 || cfg_.batch_size < 1) throw PreconditionError("autoencoder needs epochs >= 1 and batch_size >= 1");
        const std::size_t d = input_dim_ = train.front().size();
        const std::size_t h = hidden_ = cfg_.bottleneck ? cfg_.bottleneck : std::max<std::size_t>(1, d / 4);
        if (h >= d) warn("autoencoder bottleneck >= input_dim: no compression");

        Rng rng(cfg_.seed);
        const double r = std::sqrt(6.0 / static_cast<double>(d + h));
        W1_.resize(h * d);
        W2_.resize(d * h);
        for (auto& w : W1_) w = rng.uniform(-r, r);
        for (auto& w : W2_) w = rng.uniform(-r, r);
        b1_.assign(h, 0.0);
        b2_.assign(d, 0.0);

        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::vector<double> gW1(h * d), gW2(d * h), gb1(h), gb2(d), hid(h), out(d), dout(d), dh(h);
        for (std::size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
            for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
                const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
                std::fill(gW1.begin(), gW1.end(), 0.0);
                std::fill(gW2.begin(), gW2.end(), 0.0);
                std::fill(gb1.begin(), gb1.end(), 0.0);
                std::fill(gb2.begin(), gb2.end(), 0.0);
                for (std::size_t b = start; b < end; ++b) {
                    const auto& x = train[order[b]];
                    forward(x, hid, out);
                    for (std::size_t j = 0; j < d; ++j) dout[j] = 2.0 * (out[j] - x[j]) / static_cast<double>(d);
                    std::fill(dh.begin(), dh.end(), 0.0);
                    for (std::size_t j = 0; j < d; ++j) {
                        gb2[j] += dout[j];
                        for (std::size_t k = 0; k < h; ++k) {
                            gW2[j * h + k] += dout[j] * hid[k];
                            dh[k] += dout[j] * W2_[j * h + k];
                        }
                    }
                    for (std::size_t k = 0; k < h; ++k) {
                        const double da = cfg_.tanh_hidden ? dh[k] * (1.0 - hid[k] * hid[k]) : dh[k];
                        gb1[k] += da;
                        for (std::size_t j = 0; j < d; ++j) gW1[k * d + j] += da * x[j];
                    }
                }
                const double step = cfg_.learning_rate / static_cast<double>(end - start);
                for (std::size_t q = 0; q < W1_.size(); ++q) W1_[q] -= step * gW1[q];
                for (std::size_t q = 0; q < W2_.size(); ++q) W2_[q] -= step * gW2[q];
                for (std::size_t q = 0; q < h; ++q) b1_[q] -= step * gb1[q];
                for (std::size_t q = 0; q < d; ++q) b2_[q] -= step * gb2[q];
            }
            if (!std::isfinite(score(train.front())))
                throw DivergenceError("autoencoder training diverged at epoch " + std::to_string(epoch));
        }
        training_scores_ = scores(train);
        for (double s : training_scores_)
            if (!std::isfinite(s)) throw DivergenceError("autoencoder produced a non-finite training score");
        threshold_ = calibrate_threshold(training_scores_, cfg_.contamination);
    }

    AutoencoderDetector(std::size_t d, std::size_t h, bool tanh_hidden, std::vector<double> W1, std::vector<double> b1,
                        std::vector<double> W2, std::vector<double> b2, double threshold)
        : W1_(std::move(W1)), b1_(std::move(b1)), W2_(std::move(W2)), b2_(std::move(b2)), hidden_(h) {
        cfg_.tanh_hidden = tanh_hidden;
        input_dim_ = d;
        threshold_ = threshold;
        if (W1_.size() != h * d || W2_.size() != d * h || b1_.size() != h || b2_.size() != d)
            throw ParseError("autoencoder record: weight shapes do not match dims");
    }

    DetectorKind kind() const override { return DetectorKind::autoencoder; }

    double score(const std::vector<double>& x) const override {
        check_dim(x);
        std::vector<double> hid(hidden_), out(input_dim_);
        forward(x, hid, out);
        double s = 0.0;
        for (std::size_t j = 0; j < input_dim_; ++j) s += (out[j] - x[j]) * (out[j] - x[j]);
        return s / static_cast<double>(input_dim_);
    }

    const std::vector<double>& training_scores() const { return training_scores_; }
    std::size_t bottleneck() const { return hidden_; }
    /// Flat weights [W1, b1, W2, b2].
    std::vector<double> weights() const {
        std::vector<double> w = W1_;
        w.insert(w.end(), b1_.begin(), b1_.end());
        w.insert(w.end(), W2_.begin(), W2_.end());
        w.insert(w.end(), b2_.begin(), b2_.end());
        return w;
    }

    std::string serialize() const override {
        std::ostringstream out;
        out << "roast-detector 1\nkind autoencoder\ndims " << input_dim_ << ' ' << hidden_ << ' ' << (cfg_.tanh_hidden ? 1 : 0)
            << "\nthreshold " << format_double(threshold_) << "\nW1 " << join_doubles(W1_) << "\nb1 " << join_doubles(b1_)
            << "\nW2 " << join_doubles(W2_) << "\nb2 " << join_doubles(b2_) << '\n';
        return out.str();
    }

private:
    void forward(const std::vector<double>& x, std::vector<double>& hid, std::vector<double>& out) const {
        const std::size_t d = input_dim_, h = hidden_;
        for (std::size_t k = 0; k < h; ++k) {
            double a = b1_[k];
            for (std::size_t j = 0; j < d; ++j) a += W1_[k * d + j] * x[j];
            hid[k] = cfg_.tanh_hidden ? std::tanh(a) : a;
        }
        for (std::size_t j = 0; j < d; ++j) {
            double o = b2_[j];
            for (std::size_t k = 0; k < h; ++k) o += W2_[j * h + k] * hid[k];
            out[j] = o;
        }
    }

    AutoencoderConfig cfg_;
    std::vector<double> W1_, b1_, W2_, b2_;
    std::size_t hidden_ = 0;
    std::vector<double> training_scores_;
};

/// Per-coordinate standardization shared by every detector of a run. A constant
/// coordinate keeps unit scale.
struct WindowScaler {
    std::vector<double> mean;
    std::vector<double> scale;

    static WindowScaler fit(const Windows& w) {
        check_windows(w, "window scaler");
        const std::size_t d = w.front().size();
        WindowScaler s;
        s.mean.assign(d, 0.0);
        s.scale.assign(d, 0.0);
        for (const auto& x : w)
            for (std::size_t j = 0; j < d; ++j) s.mean[j] += x[j];
        for (auto& m : s.mean) m /= static_cast<double>(w.size());
        for (const auto& x : w)
            for (std::size_t j = 0; j < d; ++j) s.scale[j] += (x[j] - s.mean[j]) * (x[j] - s.mean[j]);
        for (auto& v : s.scale) {
            v = std::sqrt(v / static_cast<double>(w.size()));
            if (!(v > 0.0)) v = 1.0;
        }
        return s;
    }

    std::vector<double> apply(const std::vector<double>& x) const {
        if (x.size() != mean.size()) throw DimensionError("window scaler dimension mismatch");
        std::vector<double> z(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - mean[j]) / scale[j];
        return z;
    }

    Windows apply(const Windows& xs) const {
        Windows out;
        out.reserve(xs.size());
        for (const auto& x : xs) out.push_back(apply(x));
        return out;
    }
};

struct DetectorConfig {
    KnnConfig knn;
    OcsvmConfig ocsvm;
    AutoencoderConfig autoencoder;
};

inline std::unique_ptr<Detector> fit_detector(DetectorKind kind, const Windows& train, const DetectorConfig& cfg) {
    switch (kind) {
        case DetectorKind::knn: return std::make_unique<KnnDetector>(train, cfg.knn);
        case DetectorKind::ocsvm: return std::make_unique<OcsvmDetector>(train, cfg.ocsvm);
        case DetectorKind::autoencoder: return std::make_unique<AutoencoderDetector>(train, cfg.autoencoder);
    }
    throw PreconditionError("unknown detector kind");
}

inline std::unique_ptr<Detector> deserialize_detector(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    auto next = [&](const char* key) {
        if (!std::getline(in, line)) throw ParseError(std::string("detector record truncated before ") + key);
        auto f = split(line, ' ');
        if (f.empty() || f[0] != key) throw ParseError(std::string("detector record: expected '") + key + "' line");
        return f;
    };
    auto nums = [](const std::vector<std::string>& f, std::size_t from) {
        std::vector<double> v;
        for (std::size_t i = from; i < f.size(); ++i) v.push_back(parse_double(f[i], "detector record"));
        return v;
    };
    if (!std::getline(in, line) || line != "roast-detector 1") throw ParseError("not a version-1 detector record");
    const auto kind = next("kind");
    if (kind.size() != 2) throw ParseError("detector record: bad kind line");
    if (kind[1] == "knn") {
        const auto k = next("k");
        if (k.size() != 4) throw ParseError("detector record: bad k line");
        KnnConfig cfg{static_cast<std::size_t>(parse_int(k[1], "k")), parse_double(k[2], "contamination"), k[3] == "1"};
        const double thr = parse_double(next("threshold").at(1), "threshold");
        const auto count = static_cast<std::size_t>(parse_int(next("windows").at(1), "windows"));
        Windows w;
        for (std::size_t i = 0; i < count; ++i) {
            if (!std::getline(in, line)) throw ParseError("detector record: truncated windows");
            w.push_back(parse_doubles(line, ' ', "detector window"));
        }
        return std::make_unique<KnnDetector>(std::move(w), cfg, thr);
    }
    if (kind[1] == "ocsvm") {
        const auto p = nums(next("params"), 1);
        if (p.size() != 4) throw ParseError("detector record: bad params line");
        OcsvmConfig cfg;
        cfg.gamma = p[0];
        cfg.nu = p[2];
        cfg.tol = p[3];
        const double thr = parse_double(next("threshold").at(1), "threshold");
        const auto count = static_cast<std::size_t>(parse_int(next("sv").at(1), "sv"));
        Windows sv;
        std::vector<double> coef;
        for (std::size_t i = 0; i < count; ++i) {
            if (!std::getline(in, line)) throw ParseError("detector record: truncated support vectors");
            auto v = parse_doubles(line, ' ', "support vector");
            if (v.empty()) throw ParseError("detector record: empty support vector line");
            coef.push_back(v.front());
            sv.emplace_back(v.begin() + 1, v.end());
        }
        return std::make_unique<OcsvmDetector>(std::move(sv), std::move(coef), p[1], p[0], thr, cfg);
    }
    if (kind[1] == "autoencoder") {
        const auto dims = next("dims");
        if (dims.size() != 4) throw ParseError("detector record: bad dims line");
        const double thr = parse_double(next("threshold").at(1), "threshold");
        auto W1 = nums(next("W1"), 1);
        auto b1 = nums(next("b1"), 1);
        auto W2 = nums(next("W2"), 1);
        auto b2 = nums(next("b2"), 1);
        return std::make_unique<AutoencoderDetector>(static_cast<std::size_t>(parse_int(dims[1], "dims")),
                                                     static_cast<std::size_t>(parse_int(dims[2], "dims")), dims[3] == "1",
                                                     std::move(W1), std::move(b1), std::move(W2), std::move(b2), thr);
    }
    throw ParseError("detector record: unknown kind " + kind[1]);
}

}  // namespace roast
