#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace roast {

enum class ModelKind { linear, mlp };

inline const char* to_string(ModelKind k) { return k == ModelKind::linear ? "linear" : "mlp"; }

/// Affine input and target scaling applied around the network. The identity
/// scaler leaves a hand-built model's weights acting on raw values.
struct Standardizer {
    std::vector<double> in_mean, in_scale;
    double out_mean = 0.0, out_scale = 1.0;

    static Standardizer identity(std::size_t d) { return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0), 0.0, 1.0}; }
};

/// One-step forecaster on flattened windows. Linear: u = w.z + b. MLP: u = w2.tanh(W1 z + b1) + b2,
/// with z the scaled input and the prediction out_mean + out_scale * u.
struct ForecastModel {
    ModelKind kind = ModelKind::linear;
    std::size_t input_dim = 0;
    std::size_t hidden = 0;
    std::vector<double> w;   // linear weights
    double b = 0.0;
    std::vector<double> W1;  // hidden x input_dim, row-major
    std::vector<double> b1;
    std::vector<double> w2;
    double b2 = 0.0;
    Standardizer scaler;

    static ForecastModel make_linear(std::size_t d) {
        ForecastModel m;
        m.kind = ModelKind::linear;
        m.input_dim = d;
        m.w.assign(d, 0.0);
        m.scaler = Standardizer::identity(d);
        return m;
    }

    static ForecastModel make_mlp(std::size_t d, std::size_t hidden) {
        if (hidden == 0) throw PreconditionError("mlp needs at least one hidden unit");
        ForecastModel m;
        m.kind = ModelKind::mlp;
        m.input_dim = d;
        m.hidden = hidden;
        m.W1.assign(hidden * d, 0.0);
        m.b1.assign(hidden, 0.0);
        m.w2.assign(hidden, 0.0);
        m.scaler = Standardizer::identity(d);
        return m;
    }

    std::size_t parameter_count() const { return kind == ModelKind::linear ? input_dim + 1 : hidden * input_dim + 2 * hidden + 1; }

    void validate() const {
        auto finite = [](const std::vector<double>& v) {
            for (double x : v)
                if (!std::isfinite(x)) return false;
            return true;
        };
        bool ok = scaler.in_mean.size() == input_dim && scaler.in_scale.size() == input_dim;
        if (kind == ModelKind::linear) {
            ok = ok && w.size() == input_dim && finite(w) && std::isfinite(b);
        } else {
            ok = ok && W1.size() == hidden * input_dim && b1.size() == hidden && w2.size() == hidden && finite(W1) &&
                 finite(b1) && finite(w2) && std::isfinite(b2);
        }
        if (!ok) throw PreconditionError("forecast model has inconsistent shapes or non-finite weights");
    }

    void check_dim(const std::vector<double>& x) const {
        if (x.size() != input_dim)
            throw DimensionError("window length " + std::to_string(x.size()) + " does not match model input_dim " + std::to_string(input_dim));
    }

    std::vector<double> scale_input(const std::vector<double>& x) const {
        std::vector<double> z(input_dim);
        for (std::size_t j = 0; j < input_dim; ++j) z[j] = (x[j] - scaler.in_mean[j]) / scaler.in_scale[j];
        return z;
    }

    /// Network output in scaled units; fills `h` with hidden activations for the MLP.
    double forward_scaled(const std::vector<double>& z, std::vector<double>* h = nullptr) const {
        if (kind == ModelKind::linear) {
            double s = b;
            for (std::size_t j = 0; j < input_dim; ++j) s += w[j] * z[j];
            return s;
        }
        double out = b2;
        if (h) h->assign(hidden, 0.0);
        for (std::size_t k = 0; k < hidden; ++k) {
            double a = b1[k];
            const double* row = &W1[k * input_dim];
            for (std::size_t j = 0; j < input_dim; ++j) a += row[j] * z[j];
            const double t = std::tanh(a);
            if (h) (*h)[k] = t;
            out += w2[k] * t;
        }
        return out;
    }

    /// d(scaled output)/dz.
    std::vector<double> output_gradient_scaled(const std::vector<double>& z) const {
        if (kind == ModelKind::linear) return w;
        std::vector<double> h;
        forward_scaled(z, &h);
        std::vector<double> g(input_dim, 0.0);
        for (std::size_t k = 0; k < hidden; ++k) {
            const double c = w2[k] * (1.0 - h[k] * h[k]);
            const double* row = &W1[k * input_dim];
            for (std::size_t j = 0; j < input_dim; ++j) g[j] += c * row[j];
        }
        return g;
    }

    double predict(const std::vector<double>& window) const {
        check_dim(window);
        return scaler.out_mean + scaler.out_scale * forward_scaled(scale_input(window));
    }

    /// Gradient of (predict(window) - target)^2 with respect to the raw window.
    std::vector<double> input_gradient(const std::vector<double>& window, double target) const {
        check_dim(window);
        const auto z = scale_input(window);
        const double pred = scaler.out_mean + scaler.out_scale * forward_scaled(z);
        auto g = output_gradient_scaled(z);
        const double c = 2.0 * (pred - target) * scaler.out_scale;
        for (std::size_t j = 0; j < input_dim; ++j) g[j] = c * g[j] / scaler.in_scale[j];
        return g;
    }

    /// Flat parameter vector: linear [w, b]; MLP [W1, b1, w2, b2].
    std::vector<double> parameters() const {
        std::vector<double> p;
        if (kind == ModelKind::linear) {
            p = w;
            p.push_back(b);
        } else {
            p = W1;
            p.insert(p.end(), b1.begin(), b1.end());
            p.insert(p.end(), w2.begin(), w2.end());
            p.push_back(b2);
        }
        return p;
    }

    void set_parameters(const std::vector<double>& p) {
        if (p.size() != parameter_count()) throw DimensionError("parameter vector has the wrong length");
        auto it = p.begin();
        if (kind == ModelKind::linear) {
            w.assign(it, it + static_cast<std::ptrdiff_t>(input_dim));
            b = p.back();
            return;
        }
        const auto nh = static_cast<std::ptrdiff_t>(hidden);
        W1.assign(it, it + nh * static_cast<std::ptrdiff_t>(input_dim));
        it += nh * static_cast<std::ptrdiff_t>(input_dim);
        b1.assign(it, it + nh);
        it += nh;
        w2.assign(it, it + nh);
        b2 = p.back();
    }
};

struct TrainConfig {
    double learning_rate = 0.05;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    /// Fit the input/target scaler from the training data before training.
    bool standardize = true;
};

struct FitResult {
    ForecastModel model;
    double final_loss = 0.0;
    /// Mean squared error in raw target units after each epoch.
    std::vector<double> loss_history;
};

inline double mse(const ForecastModel& m, const std::vector<std::vector<double>>& X, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double r = m.predict(X[i]) - y[i];
        s += r * r;
    }
    return s / static_cast<double>(X.size());
}

/// Minibatch SGD on squared error. Weights are drawn from U(-0.1, 0.1) with the
/// configured seed; the shuffle order per epoch comes from the same stream.
inline FitResult fit(ForecastModel model, const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                     const TrainConfig& cfg) {
    if (X.empty() || X.size() != y.size()) throw PreconditionError("fit needs aligned, nonempty inputs and targets");
    if (cfg.epochs < 1) throw PreconditionError("fit needs epochs >= 1");
    if (cfg.batch_size < 1) throw PreconditionError("fit needs batch_size >= 1");
    if (!(cfg.learning_rate > 0.0)) throw PreconditionError("fit needs learning_rate > 0");
    for (const auto& x : X) model.check_dim(x);

    const std::size_t n = X.size(), d = model.input_dim;
    if (cfg.standardize) {
        Standardizer s;
        s.in_mean.assign(d, 0.0);
        s.in_scale.assign(d, 0.0);
        for (const auto& x : X)
            for (std::size_t j = 0; j < d; ++j) s.in_mean[j] += x[j];
        for (auto& m : s.in_mean) m /= static_cast<double>(n);
        for (const auto& x : X)
            for (std::size_t j = 0; j < d; ++j) s.in_scale[j] += (x[j] - s.in_mean[j]) * (x[j] - s.in_mean[j]);
        for (auto& v : s.in_scale) v = v > 0.0 ? std::sqrt(v / static_cast<double>(n)) : 1.0;
        s.out_mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
        double vy = 0.0;
        for (double t : y) vy += (t - s.out_mean) * (t - s.out_mean);
        s.out_scale = vy > 0.0 ? std::sqrt(vy / static_cast<double>(n)) : 1.0;
        model.scaler = s;
    } else {
        model.scaler = Standardizer::identity(d);
    }

    Rng rng(cfg.seed);
    std::vector<double> params(model.parameter_count());
    for (auto& p : params) p = rng.uniform(-0.1, 0.1);
    model.set_parameters(params);

    std::vector<std::vector<double>> Z(n);
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) {
        Z[i] = model.scale_input(X[i]);
        u[i] = (y[i] - model.scaler.out_mean) / model.scaler.out_scale;
    }

    FitResult result;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> grad(params.size());
    std::vector<double> h;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t bi = start; bi < end; ++bi) {
                const auto& z = Z[order[bi]];
                const double r = 2.0 * (model.forward_scaled(z, &h) - u[order[bi]]);
                if (model.kind == ModelKind::linear) {
                    for (std::size_t j = 0; j < d; ++j) grad[j] += r * z[j];
                    grad[d] += r;
                } else {
                    const std::size_t H = model.hidden;
                    for (std::size_t k = 0; k < H; ++k) {
                        const double da = r * model.w2[k] * (1.0 - h[k] * h[k]);
                        double* gW = &grad[k * d];
                        for (std::size_t j = 0; j < d; ++j) gW[j] += da * z[j];
                        grad[H * d + k] += da;
                        grad[H * d + H + k] += r * h[k];
                    }
                    grad[H * d + 2 * H] += r;
                }
            }
            const double step = cfg.learning_rate / static_cast<double>(end - start);
            for (std::size_t p = 0; p < params.size(); ++p) params[p] -= step * grad[p];
            model.set_parameters(params);
        }
        const double loss = mse(model, X, y);
        if (!std::isfinite(loss)) throw DivergenceError("victim training diverged at epoch " + std::to_string(epoch));
        result.loss_history.push_back(loss);
    }
    result.final_loss = result.loss_history.back();
    result.model = std::move(model);
    return result;
}

inline std::string serialize_model(const ForecastModel& m) {
    std::ostringstream out;
    out << "roast-model 1\nkind " << to_string(m.kind) << "\ndims " << m.input_dim << ' ' << m.hidden << '\n';
    out << "in_mean " << join_doubles(m.scaler.in_mean) << '\n';
    out << "in_scale " << join_doubles(m.scaler.in_scale) << '\n';
    out << "out " << format_double(m.scaler.out_mean) << ' ' << format_double(m.scaler.out_scale) << '\n';
    out << "params " << join_doubles(m.parameters()) << '\n';
    return out.str();
}

inline ForecastModel deserialize_model(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    auto fields = [&](const std::string& key) {
        if (!std::getline(in, line)) throw ParseError("model record truncated before " + key);
        auto f = split(line, ' ');
        if (f.empty() || f[0] != key) throw ParseError("model record: expected '" + key + "' line");
        f.erase(f.begin());
        return f;
    };
    if (!std::getline(in, line) || line != "roast-model 1") throw ParseError("not a version-1 model record");
    auto kind = fields("kind");
    auto dims = fields("dims");
    if (kind.size() != 1 || dims.size() != 2) throw ParseError("model record: bad kind/dims");
    const auto d = static_cast<std::size_t>(parse_int(dims[0], "dims"));
    const auto hdn = static_cast<std::size_t>(parse_int(dims[1], "dims"));
    ForecastModel m = kind[0] == "linear" ? ForecastModel::make_linear(d)
                      : kind[0] == "mlp"  ? ForecastModel::make_mlp(d, hdn)
                                          : throw ParseError("model record: unknown kind " + kind[0]);
    auto to_vec = [](const std::vector<std::string>& f) {
        std::vector<double> v;
        for (const auto& s : f) v.push_back(parse_double(s, "model record"));
        return v;
    };
    m.scaler.in_mean = to_vec(fields("in_mean"));
    m.scaler.in_scale = to_vec(fields("in_scale"));
    auto out = to_vec(fields("out"));
    if (out.size() != 2) throw ParseError("model record: bad out line");
    m.scaler.out_mean = out[0];
    m.scaler.out_scale = out[1];
    m.set_parameters(to_vec(fields("params")));
    m.validate();
    return m;
}

}  // namespace roast
