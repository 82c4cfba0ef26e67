#include "marglik/trainer.hpp"

#include "marglik/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace marglik {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kKeyBatches = 0xB41C;
constexpr std::uint64_t kKeyPartition = 0xDA7A;
constexpr std::uint64_t kKeyTransform = 0xE75;
constexpr std::uint64_t kKeyHyperBatch = 0x5A3;
constexpr std::uint64_t kKeyRecord = 0x3EC;

Model make_model(const TrainProblem& problem, const TrainConfig& cfg, const Vector& w,
                 std::uint64_t transform_seed) {
    Model model;
    model.net = problem.net;
    model.mode = w;
    model.likelihood = problem.likelihood;
    model.transform = problem.transform;
    model.transform_samples = problem.transform_samples;
    model.transform_seed = transform_seed;
    model.limits = cfg.limits;
    return model;
}

void adam_update(AdamState& st, const Vector& grad, const AdamParams& p,
                 const Vector& lr, Vector& x) {
    if (st.m.size() != grad.size()) {
        st.m = Vector::Zero(grad.size());
        st.v = Vector::Zero(grad.size());
        st.t = 0;
    }
    st.t += 1;
    st.m = p.beta1 * st.m + (1.0 - p.beta1) * grad;
    st.v = p.beta2 * st.v + (1.0 - p.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(st.t));
    const Vector mhat = st.m / bc1;
    const Vector vhat = st.v / bc2;
    const Vector denom = vhat.cwiseSqrt() + Vector::Constant(grad.size(), p.eps);
    x += lr.cwiseProduct(mhat.cwiseQuotient(denom));
}

}  // namespace

double lr_at(const LrSchedule& s, int step, int total_steps) {
    if (s.kind == ScheduleKind::constant || total_steps <= 1) return s.start;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return s.end + 0.5 * (s.start - s.end) * (1.0 + std::cos(kPi * std::min(frac, 1.0)));
}

DataPartitionKind data_partition_kind_from_string(const std::string& s) {
    if (s == "random") return DataPartitionKind::random;
    if (s == "output_wise") return DataPartitionKind::output_wise;
    if (s == "class_grouped") return DataPartitionKind::class_grouped;
    if (s == "full") return DataPartitionKind::full;
    throw ConfigError("unknown partition kind '" + s + "'");
}

std::string to_string(DataPartitionKind k) {
    switch (k) {
        case DataPartitionKind::random: return "random";
        case DataPartitionKind::output_wise: return "output_wise";
        case DataPartitionKind::class_grouped: return "class_grouped";
        case DataPartitionKind::full: return "full";
    }
    return "?";
}

DataPartition build_data_partition(const PartitionConfig& cfg, int num_inputs,
                                   int num_outputs, const std::vector<int>& labels,
                                   std::uint64_t seed) {
    switch (cfg.kind) {
        case DataPartitionKind::random:
            return random_data_partition(num_inputs, num_outputs, cfg.batch_size, seed);
        case DataPartitionKind::output_wise:
            return output_wise_partition(num_inputs, num_outputs, cfg.batch_size);
        case DataPartitionKind::class_grouped:
            return class_grouped_partition(num_inputs, num_outputs, labels,
                                           cfg.batch_size, seed);
        case DataPartitionKind::full:
            return single_batch_partition(num_inputs, num_outputs);
    }
    throw ConfigError("unknown partition kind");
}

DataPartition drop_undersized(const DataPartition& dp) {
    std::size_t largest = 0;
    for (const auto& b : dp.batches) largest = std::max(largest, b.size());
    DataPartition out{{}, dp.num_inputs, dp.num_outputs};
    for (const auto& b : dp.batches)
        if (b.size() == largest) out.batches.push_back(b);
    return out;
}

void weight_step(const TrainProblem& problem, const TrainConfig& cfg, Vector& w,
                 WeightOptState& opt, const std::vector<int>& batch,
                 const Hyperparameters& h, double lr, std::uint64_t transform_seed) {
    const Likelihood lik = resolve_likelihood(problem.likelihood, h);
    const ParamLayout layout = param_layout(*problem.net);
    const Vector prec = precision_diagonal(h.prior, layout);
    Transformation t;
    t.kind = problem.transform;
    if (t.kind != TransformKind::none) {
        if (!h.eta) throw MarglikError("weight_step: transformation active but no eta");
        t.eta = *h.eta;
    }
    const double scale = static_cast<double>(problem.train.size()) /
                         static_cast<double>(batch.size());
    double loglik_sum = 0.0;
    Vector grad = Vector::Zero(w.size());
    for (int n : batch) {
        const Vector x = problem.train.x.row(n).transpose();
        const std::uint64_t idx = static_cast<std::uint64_t>(n);
        Vector f;
        if (t.kind == TransformKind::none)
            f = forward(*problem.net, w, x);
        else
            f = invariant_forward(*problem.net, w, t, x, problem.transform_samples,
                                  transform_seed, idx);
        Vector df;
        if (problem.train.classification()) {
            const int y = problem.train.labels[static_cast<std::size_t>(n)];
            loglik_sum += log_lik(lik, f, y);
            df = lik_grad(lik, f, y);
        } else {
            const Vector y = problem.train.y.row(n).transpose();
            loglik_sum += log_lik(lik, f, y);
            df = lik_grad(lik, f, y);
        }
        if (t.kind == TransformKind::none)
            grad += param_gradient(*problem.net, w, x, df);
        else
            grad += invariant_param_gradient(*problem.net, w, t, x,
                                             problem.transform_samples, transform_seed,
                                             idx, df);
    }
    // loss = -[scale * sum loglik + log prior]; its gradient in w:
    Vector loss_grad = -scale * grad + prec.cwiseProduct(w);
    const double loss = -(scale * loglik_sum + log_prior(h.prior, layout, w));
    if (!std::isfinite(loss) || !loss_grad.allFinite())
        throw NonFiniteLoss("weight objective non-finite (batch of " +
                            std::to_string(batch.size()) + " at |w| = " +
                            std::to_string(w.norm()) + ")");
    if (cfg.weight_optimizer == WeightOptKind::adam) {
        Vector neg = -loss_grad;  // ascent on the log joint
        adam_update(opt.adam, neg, cfg.weight_adam, Vector::Constant(w.size(), lr), w);
    } else {
        if (opt.momentum.size() != w.size()) opt.momentum = Vector::Zero(w.size());
        opt.momentum = cfg.sgd_momentum * opt.momentum + loss_grad;
        w -= lr * opt.momentum;
    }
}

namespace {

struct HyperPack {
    long prior_dim = 0;
    bool sigma2 = false;
    long eta_dim = 0;

    long total() const { return prior_dim + (sigma2 ? 1 : 0) + eta_dim; }
};

HyperPack pack_of(const TrainConfig& cfg, const Hyperparameters& h) {
    HyperPack p;
    if (cfg.learn_prior) p.prior_dim = h.prior.log_values.size();
    p.sigma2 = cfg.learn_sigma2 && h.log_sigma2.has_value();
    if (cfg.learn_eta && h.eta) p.eta_dim = h.eta->size();
    return p;
}

}  // namespace

double hyper_step(const TrainProblem& problem, const TrainConfig& cfg, const Vector& w,
                  Hyperparameters& h, HyperOptState& opt, const DataPartition& dp_sample,
                  std::uint64_t step_key, double lr_scale,
                  std::uint64_t transform_seed) {
    const HyperPack pack = pack_of(cfg, h);
    if (pack.total() == 0) return 0.0;
    const Model model = make_model(problem, cfg, w, transform_seed);
    const int m = uniform_index(dp_sample.size(), step_key, kKeyHyperBatch);
    EstimatorInputs inputs;
    inputs.dp = &dp_sample;
    inputs.batch = cfg.estimator.kind == EstimatorKind::stochastic ? m : -1;
    ParamPartition pp;
    if (cfg.estimator.curvature == CurvatureKind::ggn_block) {
        pp = layerwise_param_partition(param_layout(*problem.net));
        inputs.pp = &pp;
    }
    GradientRequest req;
    req.prior = cfg.learn_prior;
    req.sigma2 = pack.sigma2;
    req.eta = pack.eta_dim > 0;
    req.fd_step_eta = cfg.fd_step_eta;

    const auto t0 = std::chrono::steady_clock::now();
    const HyperGradient g = hyper_gradient(cfg.estimator, model, problem.train, h,
                                           inputs, req);
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();

    Vector grad(pack.total());
    Vector lr(pack.total());
    long at = 0;
    if (pack.prior_dim > 0) {
        grad.segment(at, pack.prior_dim) = g.d_log_prior_precision;
        lr.segment(at, pack.prior_dim).setConstant(cfg.hyper_lr_prior * lr_scale);
        at += pack.prior_dim;
    }
    if (pack.sigma2) {
        grad[at] = *g.d_log_sigma2;
        lr[at] = cfg.hyper_lr_sigma2 * lr_scale;
        at += 1;
    }
    if (pack.eta_dim > 0) {
        grad.segment(at, pack.eta_dim) = *g.d_eta;
        lr.segment(at, pack.eta_dim).setConstant(cfg.hyper_lr_eta * lr_scale);
    }
    Vector x = Vector::Zero(pack.total());
    at = 0;
    if (pack.prior_dim > 0) {
        x.segment(at, pack.prior_dim) = h.prior.log_values;
        at += pack.prior_dim;
    }
    if (pack.sigma2) x[at++] = *h.log_sigma2;
    if (pack.eta_dim > 0) x.segment(at, pack.eta_dim) = *h.eta;

    adam_update(opt.adam, grad, cfg.hyper_adam, lr, x);
    if (!x.allFinite())
        throw NonFiniteLoss("hyperparameter update produced a non-finite value");

    at = 0;
    if (pack.prior_dim > 0) {
        h.prior.log_values = x.segment(at, pack.prior_dim);
        at += pack.prior_dim;
    }
    if (pack.sigma2) h.log_sigma2 = x[at++];
    if (pack.eta_dim > 0)
        h.eta = x.segment(at, pack.eta_dim).cwiseMax(0.0);  // amplitudes stay >= 0
    return ms;
}

void test_metrics(const TrainProblem& problem, const Vector& w,
                  const Hyperparameters& h, std::uint64_t transform_seed,
                  double* loglik, double* metric) {
    const Likelihood lik = resolve_likelihood(problem.likelihood, h);
    Transformation t;
    t.kind = problem.transform;
    if (t.kind != TransformKind::none && h.eta) t.eta = *h.eta;
    double ll = 0.0;
    double correct = 0.0;
    double se = 0.0;
    const int n_test = problem.test.size();
    for (int n = 0; n < n_test; ++n) {
        const Vector x = problem.test.x.row(n).transpose();
        Vector f;
        if (t.kind == TransformKind::none)
            f = forward(*problem.net, w, x);
        else
            // test indices keyed past the train range so draws never collide
            f = invariant_forward(*problem.net, w, t, x, problem.transform_samples,
                                  transform_seed,
                                  static_cast<std::uint64_t>(n) + 0x80000000ULL);
        if (problem.test.classification()) {
            const int y = problem.test.labels[static_cast<std::size_t>(n)];
            ll += log_lik(lik, f, y);
            int argmax = 0;
            f.maxCoeff(&argmax);
            if (argmax == y) correct += 1.0;
        } else {
            const Vector y = problem.test.y.row(n).transpose();
            ll += log_lik(lik, f, y);
            se += (f - y).squaredNorm();
        }
    }
    if (n_test > 0) {
        ll /= n_test;
        correct /= n_test;
        se = std::sqrt(se / n_test);
    }
    if (loglik) *loglik = ll;
    if (metric) *metric = problem.test.classification() ? correct : se;
}

TrainResult interleaved_train(const TrainConfig& cfg, const TrainProblem& problem,
                              Vector init_w, Hyperparameters init_h,
                              const std::function<void(const EpochRecord&)>& sink) {
    if (problem.net == nullptr) throw MarglikError("interleaved_train: no network");
    TrainResult result;
    result.state.mode = std::move(init_w);
    result.hyper = std::move(init_h);
    Vector& w = result.state.mode;
    Hyperparameters& h = result.hyper;

    const int n_train = problem.train.size();
    const int n_outputs = problem.net->output_dim();
    const ParamLayout layout = param_layout(*problem.net);

    WeightOptState wopt;
    HyperOptState hopt;
    const int steps_per_epoch =
        n_train == 0 ? 0
                     : (n_train + cfg.weight_batch_size - 1) / cfg.weight_batch_size;
    const int total_weight_steps = std::max(1, cfg.epochs * steps_per_epoch);
    const int total_hyper_updates =
        cfg.hyper_every_k > 0
            ? std::max(1, (cfg.epochs - cfg.burnin_epochs) / cfg.hyper_every_k *
                              std::max(1, cfg.hyper_steps_per_update))
            : 1;
    int weight_step_count = 0;
    int hyper_step_count = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const std::uint64_t transform_seed =
            keyed_hash(cfg.seed, kKeyTransform, static_cast<std::uint64_t>(epoch));
        // weight epoch
        const std::vector<int> order = shuffled_indices(
            n_train, keyed_hash(cfg.seed, kKeyBatches, static_cast<std::uint64_t>(epoch)));
        for (int s = 0; s < steps_per_epoch; ++s) {
            const int begin = s * cfg.weight_batch_size;
            const int end = std::min(n_train, begin + cfg.weight_batch_size);
            const std::vector<int> batch(order.begin() + begin, order.begin() + end);
            const double lr = lr_at(cfg.weight_lr, weight_step_count, total_weight_steps);
            weight_step(problem, cfg, w, wopt, batch, h, lr, transform_seed);
            ++weight_step_count;
        }

        // partition resampled every epoch
        DataPartition dp = build_data_partition(
            cfg.partition, n_train, n_outputs, problem.train.labels,
            keyed_hash(cfg.seed, kKeyPartition, static_cast<std::uint64_t>(epoch)));
        DataPartition dp_sample = cfg.partition.drop_last ? drop_undersized(dp) : dp;

        double hyper_ms = 0.0;
        int hyper_evals = 0;
        const bool hyper_now = cfg.hyper_every_k > 0 && epoch > cfg.burnin_epochs &&
                               (epoch - cfg.burnin_epochs) % cfg.hyper_every_k == 0 &&
                               dp_sample.size() > 0;
        if (hyper_now) {
            for (int u = 0; u < cfg.hyper_steps_per_update; ++u) {
                double lr_scale = 1.0;
                if (cfg.hyper_schedule == ScheduleKind::cosine) {
                    const LrSchedule sched{ScheduleKind::cosine, 1.0,
                                           cfg.hyper_lr_end_factor};
                    lr_scale = lr_at(sched, hyper_step_count, total_hyper_updates);
                }
                hyper_ms += hyper_step(
                    problem, cfg, w, h, hopt, dp_sample,
                    keyed_hash(cfg.seed, static_cast<std::uint64_t>(epoch),
                               static_cast<std::uint64_t>(u)),
                    lr_scale, transform_seed);
                ++hyper_step_count;
                ++hyper_evals;
            }
        }

        // epoch record
        EpochRecord rec;
        rec.epoch = epoch;
        const Model model = make_model(problem, cfg, w, transform_seed);
        rec.train_logjoint = data_log_lik(model, problem.train, h, nullptr, 1.0) +
                             log_prior(h.prior, layout, w);
        EstimatorInputs rec_inputs;
        rec_inputs.dp = &dp_sample;
        ParamPartition rec_pp;
        if (cfg.estimator.curvature == CurvatureKind::ggn_block) {
            rec_pp = layerwise_param_partition(layout);
            rec_inputs.pp = &rec_pp;
        }
        EstimatorSpec rec_spec = cfg.estimator;
        if (dp_sample.size() == 0) {
            // degenerate empty training set: record the exact value instead
            rec_spec = {EstimatorKind::exact, Route::automatic, CurvatureKind::ggn_full};
            rec_inputs.dp = nullptr;
        } else if (cfg.estimator.kind == EstimatorKind::stochastic) {
            rec_inputs.batch = uniform_index(
                dp_sample.size(),
                keyed_hash(cfg.seed, kKeyRecord, static_cast<std::uint64_t>(epoch)), 0);
        }
        rec.marglik = evaluate_estimator(rec_spec, model, problem.train, h, rec_inputs);
        rec.hyper = h;
        rec.hypergrad_ms = hyper_evals > 0 ? hyper_ms / hyper_evals : 0.0;
        test_metrics(problem, w, h, transform_seed, &rec.test_loglik, &rec.test_metric);
        result.trajectory.records.push_back(rec);
        if (sink) sink(rec);
        result.state.epoch = epoch;
    }
    return result;
}

}  // namespace marglik
