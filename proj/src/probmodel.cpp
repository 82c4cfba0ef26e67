#include "marglik/probmodel.hpp"

#include <cmath>

namespace marglik {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Vector log_softmax(const Vector& f) {
    const double m = f.maxCoeff();
    const double lse = m + std::log((f.array() - m).exp().sum());
    return f.array() - lse;
}
}  // namespace

LikelihoodKind likelihood_from_string(const std::string& s) {
    if (s == "gaussian") return LikelihoodKind::gaussian;
    if (s == "categorical") return LikelihoodKind::categorical;
    throw ConfigError("unknown likelihood '" + s + "'");
}

std::string to_string(LikelihoodKind k) {
    return k == LikelihoodKind::gaussian ? "gaussian" : "categorical";
}

double log_lik(const Likelihood& lik, const Vector& f, const Vector& y) {
    if (lik.kind != LikelihoodKind::gaussian)
        throw BadTarget("vector target requires a gaussian likelihood");
    if (f.size() != y.size()) throw DimMismatch("log_lik: target dim mismatch");
    const double c = static_cast<double>(f.size());
    return -0.5 * ((f - y).squaredNorm() / lik.sigma2 +
                   c * (kLog2Pi + std::log(lik.sigma2)));
}

double log_lik(const Likelihood& lik, const Vector& f, int y) {
    if (lik.kind != LikelihoodKind::categorical)
        throw BadTarget("class-index target requires a categorical likelihood");
    if (y < 0 || y >= f.size())
        throw BadTarget("class index " + std::to_string(y) + " out of range");
    return log_softmax(f)[y];
}

Vector lik_grad(const Likelihood& lik, const Vector& f, const Vector& y) {
    if (lik.kind != LikelihoodKind::gaussian)
        throw BadTarget("vector target requires a gaussian likelihood");
    return (y - f) / lik.sigma2;
}

Vector lik_grad(const Likelihood& lik, const Vector& f, int y) {
    if (lik.kind != LikelihoodKind::categorical)
        throw BadTarget("class-index target requires a categorical likelihood");
    if (y < 0 || y >= f.size())
        throw BadTarget("class index " + std::to_string(y) + " out of range");
    Vector g = -log_softmax(f).array().exp();
    g[y] += 1.0;
    return g;
}

Matrix lik_hessian(const Likelihood& lik, const Vector& f) {
    const int c = static_cast<int>(f.size());
    if (lik.kind == LikelihoodKind::gaussian)
        return Matrix::Identity(c, c) / lik.sigma2;
    const Vector p = log_softmax(f).array().exp();
    Matrix h = -p * p.transpose();
    h.diagonal() += p;
    return h;
}

PriorMode prior_mode_from_string(const std::string& s) {
    if (s == "scalar") return PriorMode::scalar;
    if (s == "layerwise") return PriorMode::layerwise;
    if (s == "per_parameter") return PriorMode::per_parameter;
    throw ConfigError("unknown prior mode '" + s + "'");
}

std::string to_string(PriorMode m) {
    switch (m) {
        case PriorMode::scalar: return "scalar";
        case PriorMode::layerwise: return "layerwise";
        case PriorMode::per_parameter: return "per_parameter";
    }
    return "?";
}

namespace {
void check_prior(const PriorPrecision& prior, const ParamLayout& layout) {
    const long expect = prior.mode == PriorMode::scalar ? 1
                        : prior.mode == PriorMode::layerwise
                            ? static_cast<long>(layout.sizes.size())
                            : layout.total;
    if (prior.log_values.size() != expect)
        throw DimMismatch("prior precision has " + std::to_string(prior.log_values.size()) +
                          " log-values, expected " + std::to_string(expect));
}
}  // namespace

Vector precision_diagonal(const PriorPrecision& prior, const ParamLayout& layout) {
    check_prior(prior, layout);
    Vector diag(layout.total);
    switch (prior.mode) {
        case PriorMode::scalar:
            diag.setConstant(std::exp(prior.log_values[0]));
            break;
        case PriorMode::layerwise:
            for (std::size_t l = 0; l < layout.sizes.size(); ++l)
                diag.segment(layout.offsets[l], layout.sizes[l])
                    .setConstant(std::exp(prior.log_values[static_cast<long>(l)]));
            break;
        case PriorMode::per_parameter:
            diag = prior.log_values.array().exp();
            break;
    }
    return diag;
}

double prior_logdet(const PriorPrecision& prior, const ParamLayout& layout) {
    check_prior(prior, layout);
    switch (prior.mode) {
        case PriorMode::scalar:
            return static_cast<double>(layout.total) * prior.log_values[0];
        case PriorMode::layerwise: {
            double total = 0.0;
            for (std::size_t l = 0; l < layout.sizes.size(); ++l)
                total += layout.sizes[l] * prior.log_values[static_cast<long>(l)];
            return total;
        }
        case PriorMode::per_parameter:
            return prior.log_values.sum();
    }
    return 0.0;
}

double log_prior(const PriorPrecision& prior, const ParamLayout& layout,
                 const Vector& w) {
    if (w.size() != layout.total) throw DimMismatch("log_prior: w length mismatch");
    const Vector diag = precision_diagonal(prior, layout);
    return 0.5 * prior_logdet(prior, layout) -
           0.5 * static_cast<double>(layout.total) * kLog2Pi -
           0.5 * w.cwiseProduct(diag).dot(w);
}

Likelihood resolve_likelihood(LikelihoodKind kind, const Hyperparameters& h) {
    Likelihood lik;
    lik.kind = kind;
    if (kind == LikelihoodKind::gaussian && h.log_sigma2)
        lik.sigma2 = std::exp(*h.log_sigma2);
    return lik;
}

Vector precision_group_sizes(const PriorPrecision& prior, const ParamLayout& layout) {
    switch (prior.mode) {
        case PriorMode::scalar: {
            Vector s(1);
            s[0] = static_cast<double>(layout.total);
            return s;
        }
        case PriorMode::layerwise: {
            Vector s(static_cast<long>(layout.sizes.size()));
            for (std::size_t l = 0; l < layout.sizes.size(); ++l)
                s[static_cast<long>(l)] = static_cast<double>(layout.sizes[l]);
            return s;
        }
        case PriorMode::per_parameter:
            return Vector::Ones(layout.total);
    }
    return Vector();
}

}  // namespace marglik
