#include "marglik/commands.hpp"

#include "marglik/rng.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

namespace marglik {

namespace {

struct CheckRun {
    std::ostream& log;
    int failures = 0;

    void report(const std::string& name, int passed, int total,
                const std::string& extra = "") {
        const bool ok = passed == total;
        if (!ok) ++failures;
        log << (ok ? "[PASS] " : "[FAIL] ") << name << " (" << passed << "/" << total
            << ")";
        if (!extra.empty()) log << " " << extra;
        log << "\n";
    }
    void info(const std::string& name, const std::string& text) {
        log << "[INFO] " << name << " " << text << "\n";
    }
};

Matrix random_spd(int n, std::uint64_t seed) {
    Matrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            a(i, j) = gauss(seed, static_cast<std::uint64_t>(i),
                            static_cast<std::uint64_t>(j));
    Matrix m = a.transpose() * a + 0.5 * Matrix::Identity(n, n);
    return 0.5 * (m + m.transpose());
}

Matrix principal_submatrix(const Matrix& m, const std::vector<int>& idx) {
    Matrix out(static_cast<long>(idx.size()), static_cast<long>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < idx.size(); ++j)
            out(static_cast<long>(i), static_cast<long>(j)) = m(idx[i], idx[j]);
    return out;
}

// Small random net/data/hyper instance for the theorem checks.
struct Instance {
    Network net;
    Model model;
    LabeledData data;
    Hyperparameters h;
};

Instance make_instance(std::uint64_t seed, bool classification) {
    const int d = 2 + static_cast<int>(keyed_hash(seed, 1) % 2);        // 2..3
    const int hidden = 4 + static_cast<int>(keyed_hash(seed, 2) % 2);   // 4..5
    const int c = classification ? 2 + static_cast<int>(keyed_hash(seed, 3) % 2) : 1;
    const int n = 4 + static_cast<int>(keyed_hash(seed, 4) % 6);        // 4..9
    Instance inst{Network(d, {hidden}, c, Activation::tanh), {}, {}, {}};
    Vector w = init_params(inst.net, keyed_hash(seed, 5));
    for (long i = 0; i < w.size(); ++i)
        w[i] += 0.3 * gauss(seed, 6, static_cast<std::uint64_t>(i));
    inst.model.net = &inst.net;
    inst.model.mode = w;
    inst.model.likelihood =
        classification ? LikelihoodKind::categorical : LikelihoodKind::gaussian;
    inst.data.x.resize(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            inst.data.x(i, j) = gauss(seed, 7, static_cast<std::uint64_t>(i),
                                      static_cast<std::uint64_t>(j));
    if (classification) {
        for (int i = 0; i < n; ++i)
            inst.data.labels.push_back(
                static_cast<int>(keyed_hash(seed, 8, static_cast<std::uint64_t>(i)) %
                                 static_cast<std::uint64_t>(c)));
    } else {
        inst.data.y.resize(n, c);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
                inst.data.y(i, j) = gauss(seed, 9, static_cast<std::uint64_t>(i),
                                          static_cast<std::uint64_t>(j));
    }
    inst.h.prior.mode = PriorMode::layerwise;
    inst.h.prior.log_values.resize(inst.net.num_layers());
    for (int l = 0; l < inst.net.num_layers(); ++l)
        inst.h.prior.log_values[l] =
            -1.0 + 2.0 * uniform01(seed, 10, static_cast<std::uint64_t>(l));
    if (!classification)
        inst.h.log_sigma2 = -1.0 + uniform01(seed, 11);
    return inst;
}

DataPartition split_batches(const DataPartition& dp, std::uint64_t seed) {
    DataPartition fine{{}, dp.num_inputs, dp.num_outputs};
    std::uint64_t k = 0;
    for (const auto& batch : dp.batches) {
        if (batch.size() < 2) {
            fine.batches.push_back(batch);
            continue;
        }
        const std::vector<int> order =
            shuffled_indices(static_cast<int>(batch.size()), keyed_hash(seed, k++));
        const std::size_t half = batch.size() / 2;
        std::vector<PairIndex> a, b;
        for (std::size_t i = 0; i < batch.size(); ++i)
            (i < half ? a : b).push_back(batch[static_cast<std::size_t>(order[i])]);
        fine.batches.push_back(std::move(a));
        fine.batches.push_back(std::move(b));
    }
    return fine;
}

}  // namespace

int cmd_check(std::ostream& log) {
    CheckRun run{log};

    {  // direct-sum additivity of the log-determinant
        int pass = 0;
        const int total = 50;
        for (int t = 0; t < total; ++t) {
            const std::uint64_t s = keyed_hash(1000, static_cast<std::uint64_t>(t));
            std::vector<Matrix> blocks{random_spd(2 + t % 3, s),
                                       random_spd(3 + t % 2, keyed_hash(s, 1))};
            const double sum = blockdiag_logdet(blocks, 0.0);
            const double whole = cholesky_logdet(direct_sum(blocks), 0.0);
            if (std::abs(sum - whole) <= 1e-10) ++pass;
        }
        run.report("logdet-direct-sum-additivity", pass, total);
    }

    {  // Fischer's inequality on random 2-way splits
        int pass = 0;
        const int total = 200;
        for (int t = 0; t < total; ++t) {
            const std::uint64_t s = keyed_hash(2000, static_cast<std::uint64_t>(t));
            const int n = 4 + static_cast<int>(keyed_hash(s, 0) % 6);
            const Matrix m = random_spd(n, s);
            std::vector<int> a, b;
            for (int i = 0; i < n; ++i)
                (uniform01(s, 50, static_cast<std::uint64_t>(i)) < 0.5 ? a : b)
                    .push_back(i);
            if (a.empty() || b.empty()) {
                ++pass;
                continue;
            }
            const double whole = cholesky_logdet(m, 0.0);
            const double split = cholesky_logdet(principal_submatrix(m, a), 0.0) +
                                 cholesky_logdet(principal_submatrix(m, b), 0.0);
            if (whole <= split + 1e-10) ++pass;
        }
        run.report("fischer-inequality", pass, total);
    }

    {  // refining a partition only increases the blockwise logdet sum
        int pass = 0;
        const int total = 100;
        for (int t = 0; t < total; ++t) {
            const std::uint64_t s = keyed_hash(3000, static_cast<std::uint64_t>(t));
            const int n = 6 + static_cast<int>(keyed_hash(s, 0) % 4);
            const Matrix m = random_spd(n, s);
            // coarse: two contiguous halves; fine: four quarters
            const int h = n / 2;
            auto logdet_ranges = [&](const std::vector<std::pair<int, int>>& rs) {
                double sum = 0.0;
                for (auto [b, e] : rs) {
                    if (e <= b) continue;
                    std::vector<int> idx;
                    for (int i = b; i < e; ++i) idx.push_back(i);
                    sum += cholesky_logdet(principal_submatrix(m, idx), 0.0);
                }
                return sum;
            };
            const double coarse = logdet_ranges({{0, h}, {h, n}});
            const double fine =
                logdet_ranges({{0, h / 2}, {h / 2, h}, {h, h + (n - h) / 2},
                               {h + (n - h) / 2, n}});
            const double whole = cholesky_logdet(m, 0.0);
            if (whole <= coarse + 1e-10 && coarse <= fine + 1e-10) ++pass;
        }
        run.report("blockwise-logdet-refinement", pass, total);
    }

    {  // Kronecker-factor log-det vs dense assembly
        int pass = 0;
        const int total = 50;
        for (int t = 0; t < total; ++t) {
            const std::uint64_t s = keyed_hash(4000, static_cast<std::uint64_t>(t));
            const int na = 2 + static_cast<int>(keyed_hash(s, 0) % 4);
            const int ng = 2 + static_cast<int>(keyed_hash(s, 1) % 4);
            const Matrix a = random_spd(na, s);
            const Matrix g = random_spd(ng, keyed_hash(s, 2));
            const double tau = 0.5 + uniform01(s, 3);
            Matrix dense(na * ng, na * ng);
            for (int i = 0; i < na; ++i)
                for (int j = 0; j < na; ++j)
                    dense.block(i * ng, j * ng, ng, ng) = a(i, j) * g;
            const double direct = cholesky_logdet(
                dense + tau * Matrix::Identity(na * ng, na * ng), 0.0);
            if (std::abs(kron_factor_logdet(a, g, tau) - direct) <= 1e-9) ++pass;
        }
        run.report("kron-factor-logdet-vs-dense", pass, total);
    }

    {  // per-sample jacobian vs central finite differences
        int pass = 0;
        const int total = 50;
        for (int t = 0; t < total; ++t) {
            const Instance inst =
                make_instance(keyed_hash(5000, static_cast<std::uint64_t>(t)), t % 2);
            const Vector x = inst.data.x.row(0).transpose();
            const Matrix jac = per_sample_jacobian(inst.net, inst.model.mode, x);
            const double step = 1e-5;
            Matrix fd(jac.rows(), jac.cols());
            for (long p = 0; p < inst.model.mode.size(); ++p) {
                Vector wp = inst.model.mode, wm = inst.model.mode;
                wp[p] += step;
                wm[p] -= step;
                fd.col(p) = (forward(inst.net, wp, x) - forward(inst.net, wm, x)) /
                            (2.0 * step);
            }
            const double scale = std::max(1.0, jac.cwiseAbs().maxCoeff());
            if (((jac - fd).cwiseAbs().maxCoeff() / scale) < 1e-5) ++pass;
        }
        run.report("jacobian-vs-finite-differences", pass, total);
    }

    {  // likelihood Hessian is PSD; categorical rows sum to zero
        int psd = 0, rows = 0;
        const int total = 100;
        for (int t = 0; t < total; ++t) {
            const std::uint64_t s = keyed_hash(6000, static_cast<std::uint64_t>(t));
            const int c = 2 + static_cast<int>(keyed_hash(s, 0) % 5);
            Vector f(c);
            for (int i = 0; i < c; ++i)
                f[i] = 3.0 * gauss(s, 1, static_cast<std::uint64_t>(i));
            const Matrix lam = lik_hessian({LikelihoodKind::categorical, 1.0}, f);
            if (sym_eigenvalues(lam).minCoeff() >= -1e-12) ++psd;
            if (lam.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12) ++rows;
        }
        run.report("categorical-hessian-psd", psd, total);
        run.report("categorical-hessian-row-sums", rows, total);
    }

    {  // log-prior component bookkeeping
        int pass = 0;
        const int total = 50;
        for (int t = 0; t < total; ++t) {
            const Instance inst =
                make_instance(keyed_hash(7000, static_cast<std::uint64_t>(t)), false);
            const ParamLayout layout = param_layout(inst.net);
            const Vector diag = precision_diagonal(inst.h.prior, layout);
            const double lp = log_prior(inst.h.prior, layout, inst.model.mode);
            const double resid =
                lp + 0.5 * inst.model.mode.cwiseProduct(diag).dot(inst.model.mode) -
                0.5 * prior_logdet(inst.h.prior, layout) +
                0.5 * layout.total * std::log(2.0 * 3.14159265358979323846);
            if (std::abs(resid) < 1e-12 * std::max(1.0, std::abs(lp))) ++pass;
        }
        run.report("log-prior-bookkeeping", pass, total);
    }

    {  // the parametric and kernel determinant routes agree
        int pass = 0;
        const int total = 100;
        for (int t = 0; t < total; ++t) {
            const Instance inst =
                make_instance(keyed_hash(8000, static_cast<std::uint64_t>(t)), t % 2);
            const MargLikComponents a =
                exact_la(inst.model, inst.data, inst.h, Route::parametric);
            const MargLikComponents b =
                exact_la(inst.model, inst.data, inst.h, Route::kernel);
            if (std::abs(a.total - b.total) <= 1e-8 * (1.0 + std::abs(a.total))) ++pass;
        }
        run.report("route-duality", pass, total);
    }

    {  // parametric bound ordering: exact >= layerwise >= diagonal
        int pass = 0;
        const int total = 100;
        for (int t = 0; t < total; ++t) {
            const Instance inst =
                make_instance(keyed_hash(9000, static_cast<std::uint64_t>(t)), t % 2);
            const ParamLayout layout = param_layout(inst.net);
            const double ex =
                exact_la(inst.model, inst.data, inst.h, Route::parametric).total;
            const double layer =
                parametric_bound(inst.model, inst.data, inst.h,
                                 layerwise_param_partition(layout))
                    .total;
            const double diag =
                parametric_bound(inst.model, inst.data, inst.h,
                                 diagonal_param_partition(layout.total))
                    .total;
            if (ex >= layer - 1e-10 && layer >= diag - 1e-10) ++pass;
        }
        run.report("parametric-bound-ordering", pass, total);
    }

    {  // data-subset kernel bound ordering under nested refinements
        int pass = 0;
        const int total = 100;
        for (int t = 0; t < total; ++t) {
            const std::uint64_t s = keyed_hash(10000, static_cast<std::uint64_t>(t));
            const Instance inst = make_instance(s, t % 2);
            const int n = inst.data.size();
            const int c = inst.net.output_dim();
            const DataPartition m2 =
                random_data_partition(n, c, std::max(1, n * c / 2), s);
            const DataPartition m4 = split_batches(m2, keyed_hash(s, 77));
            const DataPartition single = singleton_partition(n, c);
            const double ex = exact_la(inst.model, inst.data, inst.h, Route::kernel).total;
            const double b2 = ntk_subset_bound(inst.model, inst.data, inst.h, m2).total;
            const double b4 = ntk_subset_bound(inst.model, inst.data, inst.h, m4).total;
            const double bs =
                ntk_subset_bound(inst.model, inst.data, inst.h, single).total;
            if (is_refinement(m4, m2) && ex >= b2 - 1e-10 && b2 >= b4 - 1e-10 &&
                b4 >= bs - 1e-10)
                ++pass;
        }
        run.report("ntk-subset-ordering", pass, total);
    }

    {  // kernel and parametric subset bounds coincide
        int pass = 0;
        const int total = 100;
        for (int t = 0; t < total; ++t) {
            const std::uint64_t s = keyed_hash(11000, static_cast<std::uint64_t>(t));
            const Instance inst = make_instance(s, t % 2);
            const DataPartition dp = random_data_partition(
                inst.data.size(), inst.net.output_dim(), 3, s);
            const double a = ntk_subset_bound(inst.model, inst.data, inst.h, dp).total;
            const double b =
                parametric_subset_bound(inst.model, inst.data, inst.h, dp).total;
            if (std::abs(a - b) <= 1e-8 * (1.0 + std::abs(a))) ++pass;
        }
        run.report("subset-bound-identity", pass, total);
    }

    {  // doubly bound sits under both deterministic bounds
        int pass = 0;
        int kfac_violations = 0;
        const int total = 100;
        for (int t = 0; t < total; ++t) {
            const std::uint64_t s = keyed_hash(12000, static_cast<std::uint64_t>(t));
            const Instance inst = make_instance(s, t % 2);
            const ParamLayout layout = param_layout(inst.net);
            const DataPartition dp = random_data_partition(
                inst.data.size(), inst.net.output_dim(), 4, s);
            const ParamPartition pp = layerwise_param_partition(layout);
            const double doubly =
                doubly_bound(inst.model, inst.data, inst.h, dp, pp).total;
            const double psub =
                parametric_subset_bound(inst.model, inst.data, inst.h, dp).total;
            const double player =
                parametric_bound(inst.model, inst.data, inst.h, pp).total;
            if (doubly <= psub + 1e-10 && doubly <= player + 1e-10) ++pass;
            const double kf = doubly_bound_kfac(inst.model, inst.data, inst.h, dp).total;
            if (kf > psub + 1e-10) ++kfac_violations;
        }
        run.report("doubly-bound-ordering", pass, total);
        run.info("kfac-bound-violations",
                 std::to_string(kfac_violations) + "/" + std::to_string(total) +
                     " (recorded only; no theoretical guarantee)");
    }

    {  // stochastic logdet unbiasedness by full enumeration (equal batches)
        int pass = 0;
        const int total = 30;
        for (int t = 0; t < total; ++t) {
            const std::uint64_t s = keyed_hash(13000, static_cast<std::uint64_t>(t));
            Instance inst = make_instance(s, t % 2);
            const int c = inst.net.output_dim();
            // truncate to 4 inputs so the 4*c pairs split into 4 equal batches
            LabeledData data = inst.data;
            data.x.conservativeResize(4, Eigen::NoChange);
            if (data.classification())
                data.labels.resize(4);
            else
                data.y.conservativeResize(4, Eigen::NoChange);
            const int pairs = 4 * c;
            const DataPartition dp = random_data_partition(4, c, pairs / 4, s);
            const double det =
                ntk_subset_bound(inst.model, data, inst.h, dp).logdet_term;
            double mean = 0.0;
            for (int m = 0; m < dp.size(); ++m)
                mean += stochastic_estimate(inst.model, data, inst.h, dp, m).logdet_term;
            mean /= dp.size();
            if (std::abs(mean - det) <= 1e-10 * std::max(1.0, std::abs(det))) ++pass;
        }
        run.report("stochastic-logdet-unbiasedness", pass, total);
    }

    {  // component bookkeeping across every estimator
        int pass = 0;
        const int total = 25;
        for (int t = 0; t < total; ++t) {
            const std::uint64_t s = keyed_hash(14000, static_cast<std::uint64_t>(t));
            const Instance inst = make_instance(s, t % 2);
            const ParamLayout layout = param_layout(inst.net);
            const DataPartition dp =
                random_data_partition(inst.data.size(), inst.net.output_dim(), 3, s);
            std::vector<MargLikComponents> comps{
                exact_la(inst.model, inst.data, inst.h),
                parametric_bound(inst.model, inst.data, inst.h,
                                 layerwise_param_partition(layout)),
                ntk_subset_bound(inst.model, inst.data, inst.h, dp),
                parametric_subset_bound(inst.model, inst.data, inst.h, dp),
                doubly_bound(inst.model, inst.data, inst.h, dp,
                             layerwise_param_partition(layout)),
                stochastic_estimate(inst.model, inst.data, inst.h, dp, 0)};
            bool ok = true;
            for (const auto& cmp : comps)
                ok = ok && std::abs(cmp.total - (cmp.log_lik + cmp.log_prior +
                                                 cmp.logdet_term + cmp.constant)) <=
                               1e-12 * std::max(1.0, std::abs(cmp.total));
            if (ok) ++pass;
        }
        run.report("component-bookkeeping", pass, total);
    }

    if (run.failures == 0)
        log << "all checks passed\n";
    else
        log << run.failures << " check(s) failed\n";
    return run.failures == 0 ? 0 : 1;
}

}  // namespace marglik
