#include "marglik/estimators.hpp"

#include "marglik/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace marglik {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

MargLikComponents make_components(double log_lik_v, double log_prior_v,
                                  double logdet_term, int param_count,
                                  std::string tag, std::string meta) {
    MargLikComponents c;
    c.log_lik = log_lik_v;
    c.log_prior = log_prior_v;
    c.logdet_term = logdet_term;
    c.constant = 0.5 * static_cast<double>(param_count) * kLog2Pi;
    c.total = c.log_lik + c.log_prior + c.logdet_term + c.constant;
    c.estimator_tag = std::move(tag);
    c.partition_meta = std::move(meta);
    return c;
}

// Prior bookkeeping shared by every analytic gradient.
struct PriorContext {
    ParamLayout layout;
    Vector prec_diag;          // tau_p
    Vector group_sizes;        // n_g
    std::vector<int> group_of; // p -> g
    double logdet_p0 = 0.0;
};

PriorContext make_prior_context(const PriorPrecision& prior, const ParamLayout& layout) {
    PriorContext ctx;
    ctx.layout = layout;
    ctx.prec_diag = precision_diagonal(prior, layout);
    ctx.group_sizes = precision_group_sizes(prior, layout);
    ctx.logdet_p0 = prior_logdet(prior, layout);
    ctx.group_of.assign(static_cast<std::size_t>(layout.total), 0);
    if (prior.mode == PriorMode::layerwise) {
        for (std::size_t l = 0; l < layout.sizes.size(); ++l)
            for (int p = layout.offsets[l]; p < layout.offsets[l] + layout.sizes[l]; ++p)
                ctx.group_of[static_cast<std::size_t>(p)] = static_cast<int>(l);
    } else if (prior.mode == PriorMode::per_parameter) {
        for (int p = 0; p < layout.total; ++p)
            ctx.group_of[static_cast<std::size_t>(p)] = p;
    }
    return ctx;
}

// Accumulates d(logdet_term)/d(hyper) contributions while a bound is
// assembled. per_param entries are reduced onto prior groups at the end;
// per_group entries are direct (log|P0| counts, KFAC layers).
struct GradAccum {
    bool want_sigma2 = false;
    Vector per_param;
    Vector per_group;
    double d_sigma2 = 0.0;

    GradAccum(const PriorContext& ctx, bool sigma2)
        : want_sigma2(sigma2),
          per_param(Vector::Zero(ctx.layout.total)),
          per_group(Vector::Zero(ctx.group_sizes.size())) {}
};

// Adds coeff * log|P0| to the gradient (value handled by the caller).
void add_p0_count(GradAccum* grad, const PriorContext& ctx, double coeff) {
    if (grad) grad->per_group += coeff * ctx.group_sizes;
}

// Sum_s log|H_s + P0_s| for the partition's blocks of the batch GGN. The GGN
// is the Gram matrix of the batch's Lambda^(1/2) J rows, so subset blocks are
// principal blocks of the full-data GGN and the Fischer ordering applies to
// any batch. Gradient contributions are those of -(wt/2) * sum_s log|...|.
double parametric_blocks_logdet(const JacobianBatch& jb, const ParamPartition& pp,
                                const PriorContext& ctx, double wt, GradAccum* grad) {
    const int p_total = static_cast<int>(jb.rows.cols());
    const Matrix m = lambda_sqrt_rows(jb);
    // Diagonal partition fast path: 1x1 blocks from column norms.
    if (static_cast<int>(pp.ranges.size()) == p_total) {
        double logdet = 0.0;
        for (int p = 0; p < p_total; ++p) {
            const double hp = m.col(p).squaredNorm() + ctx.prec_diag[p];
            if (!(hp > 0.0))
                throw NotPositiveDefinite("diagonal GGN entry non-positive at " +
                                              std::to_string(p),
                                          p);
            logdet += std::log(hp);
            if (grad) {
                grad->per_param[p] += -0.5 * wt * ctx.prec_diag[p] / hp;
                if (grad->want_sigma2)
                    grad->d_sigma2 += 0.5 * wt * (1.0 - ctx.prec_diag[p] / hp);
            }
        }
        return logdet;
    }
    double logdet = 0.0;
    for (const auto& r : pp.ranges) {
        const int len = r.end - r.begin;
        Matrix hs = m.middleCols(r.begin, len).transpose() * m.middleCols(r.begin, len);
        hs = 0.5 * (hs + hs.transpose());
        hs.diagonal() += ctx.prec_diag.segment(r.begin, len);
        const Cholesky chol = cholesky(hs, 0.0);
        logdet += chol.logdet();
        if (grad) {
            const Vector dinv = chol.solve(Matrix::Identity(len, len)).diagonal();
            double tau_d = 0.0;
            for (int k = 0; k < len; ++k) {
                const double td = ctx.prec_diag[r.begin + k] * dinv[k];
                grad->per_param[r.begin + k] += -0.5 * wt * td;
                tau_d += td;
            }
            if (grad->want_sigma2)
                grad->d_sigma2 += 0.5 * wt * (static_cast<double>(len) - tau_d);
        }
    }
    return logdet;
}

// log|K_m + I| for one batch. Gradient contributions are those of the term
// -(wt/2) * log|K_m + I|.
double kernel_block_logdet(const JacobianBatch& jb, const PriorContext& ctx,
                           int max_dim, double wt, GradAccum* grad) {
    const int b = static_cast<int>(jb.rows.rows());
    if (b == 0) return 0.0;
    if (b > max_dim)
        throw MemoryCapExceeded("NTK block dimension " + std::to_string(b) +
                                " exceeds cap " + std::to_string(max_dim));
    const Matrix m = lambda_sqrt_rows(jb);
    Matrix kern = m * ctx.prec_diag.cwiseInverse().asDiagonal() * m.transpose();
    kern = 0.5 * (kern + kern.transpose());
    const Cholesky chol = cholesky(kern, 1.0);  // jitter 1 realizes the +I
    const double logdet = chol.logdet();
    if (grad) {
        const Matrix x = chol.solve(m);
        const Vector q = (m.array() * x.array()).colwise().sum().transpose();
        grad->per_param += (0.5 * wt) * q.cwiseQuotient(ctx.prec_diag);
        if (grad->want_sigma2)
            grad->d_sigma2 += 0.5 * wt * (static_cast<double>(b) - chol.inverse_trace());
    }
    return logdet;
}

// Precision per layer for the KFAC route; requires a within-layer-constant
// prior.
Vector kfac_layer_tau(const PriorPrecision& prior, const ParamLayout& layout) {
    const long num_layers = static_cast<long>(layout.sizes.size());
    Vector tau(num_layers);
    if (prior.mode == PriorMode::scalar)
        tau.setConstant(std::exp(prior.log_values[0]));
    else if (prior.mode == PriorMode::layerwise)
        tau = prior.log_values.array().exp();
    else
        throw MarglikError("KFAC estimators require a scalar or layerwise prior");
    return tau;
}

// Index of the prior group owning layer l (scalar -> 0, layerwise -> l).
int kfac_layer_group(const PriorPrecision& prior, int l) {
    return prior.mode == PriorMode::scalar ? 0 : l;
}

// Sum_l sum_ij log(alpha_i gamma_j + tau_l). Gradient contributions are those
// of the term -(wt/2) * sum_l sum_ij log(...).
double kfac_logdet(const KfacFactors& factors, const PriorPrecision& prior,
                   const ParamLayout& layout, double wt, GradAccum* grad) {
    const Vector tau = kfac_layer_tau(prior, layout);
    double logdet = 0.0;
    for (std::size_t l = 0; l < factors.a.size(); ++l) {
        const Vector alpha = sym_eigenvalues(factors.a[l]);
        const Vector gamma = sym_eigenvalues(factors.g[l]);
        const double tl = tau[static_cast<long>(l)];
        double d_rho = 0.0, d_s2 = 0.0;
        for (int i = 0; i < alpha.size(); ++i) {
            for (int j = 0; j < gamma.size(); ++j) {
                const double ag = std::max(alpha[i] * gamma[j], 0.0);
                logdet += std::log(ag + tl);
                d_rho += tl / (ag + tl);
                d_s2 += ag / (ag + tl);
            }
        }
        if (grad) {
            grad->per_group[kfac_layer_group(prior, static_cast<int>(l))] +=
                -0.5 * wt * d_rho;
            if (grad->want_sigma2) grad->d_sigma2 += 0.5 * wt * d_s2;
        }
    }
    return logdet;
}

struct LogLikEval {
    double value = 0.0;
    double d_sigma2 = 0.0;
};

LogLikEval eval_data_log_lik(const Model& model, const LabeledData& data,
                             const Hyperparameters& h,
                             const std::vector<int>* input_subset, double scale) {
    const Likelihood lik = resolve_likelihood(model.likelihood, h);
    const Predictor pred = make_predictor(model, h);
    LogLikEval out;
    auto accumulate = [&](int n) {
        const Vector f = predict(*model.net, model.mode, pred,
                                 data.x.row(n).transpose(), static_cast<std::uint64_t>(n));
        if (data.classification()) {
            out.value += log_lik(lik, f, data.labels[static_cast<std::size_t>(n)]);
        } else {
            const Vector y = data.y.row(n).transpose();
            out.value += log_lik(lik, f, y);
            out.d_sigma2 += 0.5 * ((f - y).squaredNorm() / lik.sigma2 -
                                   static_cast<double>(f.size()));
        }
    };
    if (input_subset) {
        for (int n : *input_subset) accumulate(n);
    } else {
        for (int n = 0; n < data.size(); ++n) accumulate(n);
    }
    out.value *= scale;
    out.d_sigma2 *= scale;
    return out;
}

std::vector<PairIndex> all_pairs_of(const LabeledData& data, const Model& model) {
    const int n = data.size();
    const int c = model.net->output_dim();
    std::vector<PairIndex> pairs;
    pairs.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(c));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) pairs.push_back({i, j});
    return pairs;
}

std::vector<int> distinct_inputs(const std::vector<PairIndex>& batch) {
    std::set<int> s;
    for (const auto& p : batch) s.insert(p.n);
    return std::vector<int>(s.begin(), s.end());
}

Route resolve_exact_route(const Model& model, int nc, Route requested) {
    const int p = model.net->param_count();
    if (requested == Route::parametric || requested == Route::kernel) return requested;
    const bool param_ok = p <= model.limits.max_full_ggn_dim;
    const bool kernel_ok = nc <= model.limits.max_ntk_dim;
    if (!param_ok && !kernel_ok)
        throw MemoryCapExceeded("exact_la: P = " + std::to_string(p) + " and NC = " +
                                std::to_string(nc) + " both exceed their caps");
    if (param_ok && kernel_ok) return p <= nc ? Route::parametric : Route::kernel;
    return param_ok ? Route::parametric : Route::kernel;
}

// Core assembly with optional gradient accumulation. All public estimator
// entry points and the analytic hyper-gradient run through this.
MargLikComponents evaluate_core(const EstimatorSpec& spec, const Model& model,
                                const LabeledData& data, const Hyperparameters& h,
                                const EstimatorInputs& inputs, GradAccum* grad,
                                const PriorContext& ctx) {
    if (model.net == nullptr) throw MarglikError("estimator: model has no network");
    const Likelihood lik = resolve_likelihood(model.likelihood, h);
    const Predictor pred = make_predictor(model, h);
    const int p_total = model.net->param_count();
    const int nc = data.size() * model.net->output_dim();
    const double lp = log_prior(h.prior, ctx.layout, model.mode);
    const bool kfac_route = spec.curvature == CurvatureKind::kfac;

    auto jb_for = [&](const std::vector<PairIndex>& batch) {
        return jacobian_batch(*model.net, model.mode, data.x, lik, batch, pred);
    };

    switch (spec.kind) {
        case EstimatorKind::exact: {
            const Route route = resolve_exact_route(model, nc, spec.route);
            // fail before the Jacobians are materialized
            if (route == Route::parametric && p_total > model.limits.max_full_ggn_dim)
                throw MemoryCapExceeded("exact_la: P exceeds the full-GGN cap");
            if (route == Route::kernel && nc > model.limits.max_ntk_dim)
                throw MemoryCapExceeded("exact_la: NC exceeds the NTK cap");
            const LogLikEval ll = eval_data_log_lik(model, data, h, nullptr, 1.0);
            if (grad) grad->d_sigma2 += ll.d_sigma2;
            const JacobianBatch jb = jb_for(all_pairs_of(data, model));
            if (route == Route::parametric) {
                const double logdet = parametric_blocks_logdet(
                    jb, full_param_partition(p_total), ctx, 1.0, grad);
                return make_components(ll.value, lp, -0.5 * logdet, p_total,
                                       "exact-parametric", "route=parametric");
            }
            const double logdet =
                kernel_block_logdet(jb, ctx, model.limits.max_ntk_dim, 1.0, grad);
            add_p0_count(grad, ctx, -0.5);
            return make_components(ll.value, lp, -0.5 * ctx.logdet_p0 - 0.5 * logdet,
                                   p_total, "exact-kernel", "route=kernel");
        }

        case EstimatorKind::parametric: {
            const LogLikEval ll = eval_data_log_lik(model, data, h, nullptr, 1.0);
            if (grad) grad->d_sigma2 += ll.d_sigma2;
            if (kfac_route) {
                const KfacFactors factors = kfac(*model.net, model.mode, data.x, lik,
                                                 all_pairs_of(data, model), pred);
                const double logdet = kfac_logdet(factors, h.prior, ctx.layout, 1.0, grad);
                return make_components(ll.value, lp, -0.5 * logdet, p_total,
                                       "parametric-kfac", "curvature=kfac");
            }
            ParamPartition pp;
            if (inputs.pp)
                pp = *inputs.pp;
            else if (spec.curvature == CurvatureKind::ggn_diag)
                pp = diagonal_param_partition(p_total);
            else if (spec.curvature == CurvatureKind::ggn_block)
                pp = layerwise_param_partition(ctx.layout);
            else
                pp = full_param_partition(p_total);
            const JacobianBatch jb = jb_for(all_pairs_of(data, model));
            const double logdet = parametric_blocks_logdet(jb, pp, ctx, 1.0, grad);
            return make_components(ll.value, lp, -0.5 * logdet, p_total,
                                   "parametric-b" + std::to_string(pp.size()),
                                   "blocks=" + std::to_string(pp.size()));
        }

        case EstimatorKind::ntk_subset: {
            if (!inputs.dp) throw MarglikError("ntk_subset: data partition required");
            const LogLikEval ll = eval_data_log_lik(model, data, h, nullptr, 1.0);
            if (grad) grad->d_sigma2 += ll.d_sigma2;
            double logdet = 0.0;
            for (const auto& batch : inputs.dp->batches)
                logdet += kernel_block_logdet(jb_for(batch), ctx,
                                              model.limits.max_ntk_dim, 1.0, grad);
            add_p0_count(grad, ctx, -0.5);
            return make_components(
                ll.value, lp, -0.5 * ctx.logdet_p0 - 0.5 * logdet, p_total,
                "ntk-subset-M" + std::to_string(inputs.dp->size()),
                "M=" + std::to_string(inputs.dp->size()));
        }

        case EstimatorKind::parametric_subset:
        case EstimatorKind::doubly: {
            if (!inputs.dp) throw MarglikError("subset bound: data partition required");
            const LogLikEval ll = eval_data_log_lik(model, data, h, nullptr, 1.0);
            if (grad) grad->d_sigma2 += ll.d_sigma2;
            const int m_count = inputs.dp->size();
            ParamPartition pp = full_param_partition(p_total);
            if (spec.kind == EstimatorKind::doubly && !kfac_route) {
                if (inputs.pp)
                    pp = *inputs.pp;
                else if (spec.curvature == CurvatureKind::ggn_diag)
                    pp = diagonal_param_partition(p_total);
                else if (spec.curvature == CurvatureKind::ggn_block)
                    pp = layerwise_param_partition(ctx.layout);
            }
            double logdet = 0.0;
            for (const auto& batch : inputs.dp->batches) {
                if (spec.kind == EstimatorKind::doubly && kfac_route) {
                    const KfacFactors factors =
                        kfac(*model.net, model.mode, data.x, lik, batch, pred);
                    logdet += kfac_logdet(factors, h.prior, ctx.layout, 1.0, grad);
                } else {
                    logdet += parametric_blocks_logdet(jb_for(batch), pp, ctx, 1.0, grad);
                }
            }
            add_p0_count(grad, ctx, 0.5 * static_cast<double>(m_count - 1));
            const double term =
                0.5 * static_cast<double>(m_count - 1) * ctx.logdet_p0 - 0.5 * logdet;
            const std::string tag =
                spec.kind == EstimatorKind::parametric_subset
                    ? "parametric-subset-M" + std::to_string(m_count)
                    : std::string(kfac_route ? "doubly-kfac-M" : "doubly-M") +
                          std::to_string(m_count);
            return make_components(ll.value, lp, term, p_total, tag,
                                   "M=" + std::to_string(m_count) +
                                       " blocks=" + std::to_string(pp.size()));
        }

        case EstimatorKind::stochastic: {
            if (!inputs.dp || inputs.batch < 0 || inputs.batch >= inputs.dp->size())
                throw MarglikError("stochastic: partition and batch index required");
            const double m_count = static_cast<double>(inputs.dp->size());
            const auto& batch =
                inputs.dp->batches[static_cast<std::size_t>(inputs.batch)];
            const std::vector<int> subset = distinct_inputs(batch);
            const double scale =
                static_cast<double>(data.size()) / static_cast<double>(subset.size());
            const LogLikEval ll = eval_data_log_lik(model, data, h, &subset, scale);
            if (grad) grad->d_sigma2 += ll.d_sigma2;
            const Route route =
                spec.route == Route::parametric ? Route::parametric : Route::kernel;
            double term = 0.0;
            std::string tag;
            if (route == Route::kernel && !kfac_route) {
                const double logdet =
                    kernel_block_logdet(jb_for(batch), ctx, model.limits.max_ntk_dim,
                                        m_count, grad);
                add_p0_count(grad, ctx, -0.5);
                term = -0.5 * ctx.logdet_p0 - 0.5 * m_count * logdet;
                tag = "stoch-ntk";
            } else {
                // -(M/2) log|H_{B_m,P} P0^{-1} + I| via the block identity.
                double logdet = 0.0;
                if (kfac_route) {
                    const KfacFactors factors =
                        kfac(*model.net, model.mode, data.x, lik, batch, pred);
                    logdet = kfac_logdet(factors, h.prior, ctx.layout, m_count, grad);
                    tag = "stoch-kfac";
                } else {
                    ParamPartition pp = full_param_partition(p_total);
                    if (inputs.pp)
                        pp = *inputs.pp;
                    else if (spec.curvature == CurvatureKind::ggn_diag)
                        pp = diagonal_param_partition(p_total);
                    else if (spec.curvature == CurvatureKind::ggn_block)
                        pp = layerwise_param_partition(ctx.layout);
                    logdet = parametric_blocks_logdet(jb_for(batch), pp, ctx, m_count, grad);
                    tag = "stoch-ggn";
                }
                add_p0_count(grad, ctx, -0.5 + 0.5 * m_count);
                term = -0.5 * ctx.logdet_p0 -
                       0.5 * m_count * (logdet - ctx.logdet_p0);
            }
            return make_components(ll.value, lp, term, p_total,
                                   tag + "-m" + std::to_string(inputs.batch) + "/M" +
                                       std::to_string(inputs.dp->size()),
                                   "batch=" + std::to_string(batch.size()) + " pairs");
        }
    }
    throw MarglikError("unknown estimator kind");
}

}  // namespace

Predictor make_predictor(const Model& model, const Hyperparameters& h) {
    Predictor pred;
    pred.transformation.kind = model.transform;
    if (model.transform != TransformKind::none) {
        if (!h.eta)
            throw MarglikError("model has an input transformation but h carries no eta");
        pred.transformation.eta = *h.eta;
    }
    pred.samples = model.transform_samples;
    pred.seed = model.transform_seed;
    return pred;
}

MargLikComponents exact_la(const Model& model, const LabeledData& data,
                           const Hyperparameters& h, Route route) {
    const PriorContext ctx = make_prior_context(h.prior, param_layout(*model.net));
    return evaluate_core({EstimatorKind::exact, route, CurvatureKind::ggn_full}, model,
                         data, h, {}, nullptr, ctx);
}

MargLikComponents parametric_bound(const Model& model, const LabeledData& data,
                                   const Hyperparameters& h, const ParamPartition& pp) {
    const PriorContext ctx = make_prior_context(h.prior, param_layout(*model.net));
    EstimatorInputs in;
    in.pp = &pp;
    return evaluate_core(
        {EstimatorKind::parametric, Route::automatic, CurvatureKind::ggn_block}, model,
        data, h, in, nullptr, ctx);
}

MargLikComponents parametric_bound_kfac(const Model& model, const LabeledData& data,
                                        const Hyperparameters& h) {
    const PriorContext ctx = make_prior_context(h.prior, param_layout(*model.net));
    return evaluate_core(
        {EstimatorKind::parametric, Route::automatic, CurvatureKind::kfac}, model, data,
        h, {}, nullptr, ctx);
}

MargLikComponents ntk_subset_bound(const Model& model, const LabeledData& data,
                                   const Hyperparameters& h, const DataPartition& dp) {
    const PriorContext ctx = make_prior_context(h.prior, param_layout(*model.net));
    EstimatorInputs in;
    in.dp = &dp;
    return evaluate_core({EstimatorKind::ntk_subset, Route::kernel, CurvatureKind::ntk},
                         model, data, h, in, nullptr, ctx);
}

MargLikComponents parametric_subset_bound(const Model& model, const LabeledData& data,
                                          const Hyperparameters& h,
                                          const DataPartition& dp) {
    const PriorContext ctx = make_prior_context(h.prior, param_layout(*model.net));
    EstimatorInputs in;
    in.dp = &dp;
    return evaluate_core(
        {EstimatorKind::parametric_subset, Route::parametric, CurvatureKind::ggn_full},
        model, data, h, in, nullptr, ctx);
}

MargLikComponents doubly_bound(const Model& model, const LabeledData& data,
                               const Hyperparameters& h, const DataPartition& dp,
                               const ParamPartition& pp) {
    const PriorContext ctx = make_prior_context(h.prior, param_layout(*model.net));
    EstimatorInputs in;
    in.dp = &dp;
    in.pp = &pp;
    return evaluate_core(
        {EstimatorKind::doubly, Route::parametric, CurvatureKind::ggn_block}, model,
        data, h, in, nullptr, ctx);
}

MargLikComponents doubly_bound_kfac(const Model& model, const LabeledData& data,
                                    const Hyperparameters& h, const DataPartition& dp) {
    const PriorContext ctx = make_prior_context(h.prior, param_layout(*model.net));
    EstimatorInputs in;
    in.dp = &dp;
    return evaluate_core({EstimatorKind::doubly, Route::parametric, CurvatureKind::kfac},
                         model, data, h, in, nullptr, ctx);
}

MargLikComponents stochastic_estimate(const Model& model, const LabeledData& data,
                                      const Hyperparameters& h, const DataPartition& dp,
                                      int m, const StochasticConfig& sc) {
    const PriorContext ctx = make_prior_context(h.prior, param_layout(*model.net));
    EstimatorInputs in;
    in.dp = &dp;
    in.pp = sc.pp;
    in.batch = m;
    CurvatureKind curv = CurvatureKind::ntk;
    if (sc.route == Route::parametric)
        curv = sc.use_kfac ? CurvatureKind::kfac
                           : (sc.pp ? CurvatureKind::ggn_block : CurvatureKind::ggn_full);
    return evaluate_core({EstimatorKind::stochastic, sc.route, curv}, model, data, h, in,
                         nullptr, ctx);
}

EstimatorKind estimator_kind_from_string(const std::string& s) {
    if (s == "exact") return EstimatorKind::exact;
    if (s == "parametric") return EstimatorKind::parametric;
    if (s == "ntk_subset") return EstimatorKind::ntk_subset;
    if (s == "parametric_subset") return EstimatorKind::parametric_subset;
    if (s == "doubly") return EstimatorKind::doubly;
    if (s == "stochastic") return EstimatorKind::stochastic;
    throw ConfigError("unknown estimator kind '" + s + "'");
}

std::string to_string(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::exact: return "exact";
        case EstimatorKind::parametric: return "parametric";
        case EstimatorKind::ntk_subset: return "ntk_subset";
        case EstimatorKind::parametric_subset: return "parametric_subset";
        case EstimatorKind::doubly: return "doubly";
        case EstimatorKind::stochastic: return "stochastic";
    }
    return "?";
}

MargLikComponents evaluate_estimator(const EstimatorSpec& spec, const Model& model,
                                     const LabeledData& data, const Hyperparameters& h,
                                     const EstimatorInputs& inputs) {
    const PriorContext ctx = make_prior_context(h.prior, param_layout(*model.net));
    return evaluate_core(spec, model, data, h, inputs, nullptr, ctx);
}

HyperGradient hyper_gradient(const EstimatorSpec& spec, const Model& model,
                             const LabeledData& data, const Hyperparameters& h,
                             const EstimatorInputs& inputs, const GradientRequest& req) {
    if (req.sigma2 && model.likelihood != LikelihoodKind::gaussian)
        throw NotDifferentiable("sigma2 gradient requires a gaussian likelihood");
    if (req.sigma2 && !h.log_sigma2)
        throw NotDifferentiable("sigma2 gradient requested but h has no log_sigma2");
    if (req.eta && !h.eta)
        throw NotDifferentiable("eta gradient requested but h has no eta");

    const PriorContext ctx = make_prior_context(h.prior, param_layout(*model.net));
    HyperGradient out;
    out.method_tag =
        req.method == GradMethod::analytic ? "analytic" : "finite_difference";

    auto total_at = [&](const Hyperparameters& hh) {
        return evaluate_core(spec, model, data, hh, inputs, nullptr,
                             make_prior_context(hh.prior, ctx.layout))
            .total;
    };

    if (req.method == GradMethod::analytic && (req.prior || req.sigma2)) {
        GradAccum grad(ctx, req.sigma2);
        evaluate_core(spec, model, data, h, inputs, &grad, ctx);
        if (req.prior) {
            const long groups = ctx.group_sizes.size();
            Vector d = grad.per_group;
            for (int p = 0; p < ctx.layout.total; ++p)
                d[ctx.group_of[static_cast<std::size_t>(p)]] += grad.per_param[p];
            // log-prior term: 1/2 n_g - 1/2 sum tau_p w_p^2
            for (int p = 0; p < ctx.layout.total; ++p)
                d[ctx.group_of[static_cast<std::size_t>(p)]] -=
                    0.5 * ctx.prec_diag[p] * model.mode[p] * model.mode[p];
            d += 0.5 * ctx.group_sizes;
            out.d_log_prior_precision = d.head(groups);
        }
        if (req.sigma2) out.d_log_sigma2 = grad.d_sigma2;
    } else if (req.method == GradMethod::finite_difference &&
               (req.prior || req.sigma2)) {
        if (req.prior) {
            const long groups = h.prior.log_values.size();
            Vector d(groups);
            for (long g = 0; g < groups; ++g) {
                Hyperparameters hp = h, hm = h;
                hp.prior.log_values[g] += req.fd_step_log;
                hm.prior.log_values[g] -= req.fd_step_log;
                d[g] = (total_at(hp) - total_at(hm)) / (2.0 * req.fd_step_log);
            }
            out.d_log_prior_precision = d;
        }
        if (req.sigma2) {
            Hyperparameters hp = h, hm = h;
            *hp.log_sigma2 += req.fd_step_log;
            *hm.log_sigma2 -= req.fd_step_log;
            out.d_log_sigma2 = (total_at(hp) - total_at(hm)) / (2.0 * req.fd_step_log);
        }
    }

    if (req.eta) {
        // Central differences with shared transformation noise: the eps draws
        // are keyed by (seed, index, s) and do not depend on eta.
        const long dim = h.eta->size();
        Vector d(dim);
        for (long i = 0; i < dim; ++i) {
            Hyperparameters hp = h, hm = h;
            (*hp.eta)[i] += req.fd_step_eta;
            (*hm.eta)[i] -= req.fd_step_eta;
            d[i] = (total_at(hp) - total_at(hm)) / (2.0 * req.fd_step_eta);
        }
        out.d_eta = d;
    }
    return out;
}

double data_log_lik(const Model& model, const LabeledData& data,
                    const Hyperparameters& h, const std::vector<int>* input_subset,
                    double scale) {
    return eval_data_log_lik(model, data, h, input_subset, scale).value;
}

}  // namespace marglik
