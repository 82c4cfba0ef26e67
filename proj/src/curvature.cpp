#include "marglik/curvature.hpp"

#include <map>
#include <string>

namespace marglik {

Vector predict(const Network& net, const Vector& w, const Predictor& pred,
               const Vector& x, std::uint64_t index) {
    if (pred.transformation.kind == TransformKind::none) return forward(net, w, x);
    return invariant_forward(net, w, pred.transformation, x, pred.samples, pred.seed,
                             index);
}

namespace {

struct InputGroup {
    int n = 0;
    std::vector<int> positions;  // row positions within the batch
    std::vector<int> outputs;    // the c of each position
};

std::vector<InputGroup> group_by_input(const std::vector<PairIndex>& batch) {
    std::map<int, InputGroup> groups;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto& g = groups[batch[i].n];
        g.n = batch[i].n;
        g.positions.push_back(static_cast<int>(i));
        g.outputs.push_back(batch[i].c);
    }
    std::vector<InputGroup> out;
    out.reserve(groups.size());
    for (auto& [n, g] : groups) out.push_back(std::move(g));
    return out;
}

}  // namespace

JacobianBatch jacobian_batch(const Network& net, const Vector& w, const Matrix& inputs,
                             const Likelihood& lik, const std::vector<PairIndex>& batch,
                             const Predictor& pred) {
    const int b = static_cast<int>(batch.size());
    const int c_total = net.output_dim();
    JacobianBatch jb;
    jb.rows.resize(b, net.param_count());
    jb.scaled_rows.resize(b, net.param_count());
    jb.row_index = batch;
    jb.lambda = Matrix::Zero(b, b);
    for (const InputGroup& g : group_by_input(batch)) {
        if (g.n < 0 || g.n >= inputs.rows())
            throw DimMismatch("jacobian_batch: input index out of range");
        const Vector x = inputs.row(g.n).transpose();
        const std::uint64_t idx = static_cast<std::uint64_t>(g.n);
        const Vector f = predict(net, w, pred, x, idx);
        const Matrix lam = lik_hessian(lik, f);
        const bool covers_all = static_cast<int>(g.outputs.size()) == c_total;
        const double offdiag =
            (lam - Matrix(lam.diagonal().asDiagonal())).cwiseAbs().maxCoeff();
        auto rows_for = [&](const std::vector<int>& cs) {
            return pred.transformation.kind == TransformKind::none
                       ? jacobian_rows(net, w, x, cs)
                       : invariant_jacobian_rows(net, w, pred.transformation, x,
                                                 pred.samples, pred.seed, idx, cs);
        };
        if (covers_all || offdiag > 0.0) {
            // need every output row of this input for the Lambda^(1/2) mix
            std::vector<int> all(static_cast<std::size_t>(c_total));
            for (int c = 0; c < c_total; ++c) all[static_cast<std::size_t>(c)] = c;
            const Matrix rows_all = rows_for(all);
            const Matrix scaled_all = sym_sqrt(lam) * rows_all;
            for (std::size_t i = 0; i < g.positions.size(); ++i) {
                jb.rows.row(g.positions[i]) = rows_all.row(g.outputs[i]);
                jb.scaled_rows.row(g.positions[i]) = scaled_all.row(g.outputs[i]);
            }
        } else {
            // diagonal lambda: each pair only needs its own row
            const Matrix rows = rows_for(g.outputs);
            for (std::size_t i = 0; i < g.positions.size(); ++i) {
                jb.rows.row(g.positions[i]) = rows.row(static_cast<int>(i));
                jb.scaled_rows.row(g.positions[i]) =
                    std::sqrt(std::max(lam(g.outputs[i], g.outputs[i]), 0.0)) *
                    rows.row(static_cast<int>(i));
            }
        }
        for (std::size_t i = 0; i < g.positions.size(); ++i)
            for (std::size_t j = 0; j < g.positions.size(); ++j)
                jb.lambda(g.positions[i], g.positions[j]) =
                    lam(g.outputs[i], g.outputs[j]);
    }
    return jb;
}

Matrix ggn(const JacobianBatch& jb, int max_dim) {
    const int p = static_cast<int>(jb.rows.cols());
    if (p > max_dim)
        throw MemoryCapExceeded("full GGN dimension " + std::to_string(p) +
                                " exceeds cap " + std::to_string(max_dim));
    Matrix h = jb.rows.transpose() * jb.lambda * jb.rows;
    return 0.5 * (h + h.transpose());
}

std::vector<Matrix> ggn_blocks(const JacobianBatch& jb, const ParamPartition& pp) {
    std::vector<Matrix> blocks;
    blocks.reserve(pp.ranges.size());
    const Matrix lj = jb.lambda * jb.rows;
    for (const auto& r : pp.ranges) {
        const int len = r.end - r.begin;
        Matrix h = jb.rows.middleCols(r.begin, len).transpose() * lj.middleCols(r.begin, len);
        blocks.push_back(0.5 * (h + h.transpose()));
    }
    return blocks;
}

Vector ggn_diag(const JacobianBatch& jb) {
    const Matrix lj = jb.lambda * jb.rows;
    return (jb.rows.array() * lj.array()).colwise().sum().transpose();
}

KfacFactors kfac(const Network& net, const Vector& w, const Matrix& inputs,
                 const Likelihood& lik, const std::vector<PairIndex>& batch,
                 const Predictor& pred) {
    const int num_layers = net.num_layers();
    KfacFactors f;
    for (int l = 0; l < num_layers; ++l) {
        f.a.push_back(Matrix::Zero(net.layer(l).in + 1, net.layer(l).in + 1));
        f.g.push_back(Matrix::Zero(net.layer(l).out, net.layer(l).out));
    }
    const std::vector<InputGroup> groups = group_by_input(batch);
    if (groups.empty()) return f;
    const bool plain = pred.transformation.kind == TransformKind::none;
    const int samples = plain ? 1 : pred.samples;
    const double n_count = static_cast<double>(groups.size());
    for (const InputGroup& g : groups) {
        const Vector x = inputs.row(g.n).transpose();
        const std::uint64_t idx = static_cast<std::uint64_t>(g.n);
        // Seeds are columns of the full Lambda^(1/2) at the batch's outputs,
        // the same square-rooted split the bound estimators use.
        const Vector fhat = predict(net, w, pred, x, idx);
        const Matrix lam_full = lik_hessian(lik, fhat);
        const Matrix lam_half = sym_sqrt(lam_full);
        const int k = static_cast<int>(g.outputs.size());
        for (int s = 0; s < samples; ++s) {
            const Vector xs =
                plain ? x
                      : transform(pred.transformation, x,
                                  draw_transform_eps(pred.transformation, pred.seed, idx, s));
            const ForwardTrace trace = forward_trace(net, w, xs);
            for (int l = 0; l < num_layers; ++l) {
                const Vector& al = trace.layer_inputs[static_cast<std::size_t>(l)];
                Vector abar(al.size() + 1);
                abar << al, 1.0;
                f.a[static_cast<std::size_t>(l)] +=
                    (abar * abar.transpose()) / (n_count * samples);
            }
            for (int col = 0; col < k; ++col) {
                const Vector seed_vec =
                    lam_half.col(g.outputs[static_cast<std::size_t>(col)]);
                const std::vector<Vector> dz =
                    backprop_preact_grads(net, w, trace, seed_vec);
                for (int l = 0; l < num_layers; ++l)
                    f.g[static_cast<std::size_t>(l)] +=
                        (dz[static_cast<std::size_t>(l)] *
                         dz[static_cast<std::size_t>(l)].transpose()) /
                        static_cast<double>(samples);
            }
        }
    }
    return f;
}

Matrix lambda_sqrt_rows(const JacobianBatch& jb) {
    if (jb.scaled_rows.rows() == jb.rows.rows() &&
        jb.scaled_rows.cols() == jb.rows.cols())
        return jb.scaled_rows;
    // hand-assembled batch without scaled rows: root the batch's own lambda
    const int b = static_cast<int>(jb.rows.rows());
    Matrix lam_half = Matrix::Zero(b, b);
    for (const InputGroup& g : group_by_input(jb.row_index)) {
        const int k = static_cast<int>(g.positions.size());
        Matrix sub(k, k);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                sub(i, j) = jb.lambda(g.positions[static_cast<std::size_t>(i)],
                                      g.positions[static_cast<std::size_t>(j)]);
        const Matrix sub_half = sym_sqrt(sub);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                lam_half(g.positions[static_cast<std::size_t>(i)],
                         g.positions[static_cast<std::size_t>(j)]) = sub_half(i, j);
    }
    return lam_half * jb.rows;
}

Matrix ntk_block(const JacobianBatch& jb, const Vector& precision_diag, int max_dim) {
    const int b = static_cast<int>(jb.rows.rows());
    if (b > max_dim)
        throw MemoryCapExceeded("NTK block dimension " + std::to_string(b) +
                                " exceeds cap " + std::to_string(max_dim));
    if (precision_diag.size() != jb.rows.cols())
        throw DimMismatch("ntk_block: precision diagonal length mismatch");
    const Matrix m = lambda_sqrt_rows(jb);
    Matrix kern = m * precision_diag.cwiseInverse().asDiagonal() * m.transpose();
    return 0.5 * (kern + kern.transpose());
}

CurvatureEstimate build_curvature(CurvatureKind kind, const Network& net,
                                  const Vector& w, const Matrix& inputs,
                                  const Likelihood& lik, const Predictor& pred,
                                  const Vector& precision_diag,
                                  const ParamPartition* pp, const DataPartition* dp,
                                  const Limits& limits) {
    const int n = static_cast<int>(inputs.rows());
    const int c = net.output_dim();
    std::vector<PairIndex> all;
    all.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(c));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) all.push_back({i, j});
    switch (kind) {
        case CurvatureKind::ggn_full:
            return FullGGN{ggn(jacobian_batch(net, w, inputs, lik, all, pred),
                              limits.max_full_ggn_dim)};
        case CurvatureKind::ggn_block: {
            const ParamPartition part =
                pp ? *pp : layerwise_param_partition(param_layout(net));
            return BlockGGN{
                ggn_blocks(jacobian_batch(net, w, inputs, lik, all, pred), part)};
        }
        case CurvatureKind::ggn_diag:
            return DiagGGN{ggn_diag(jacobian_batch(net, w, inputs, lik, all, pred))};
        case CurvatureKind::kfac:
            return kfac(net, w, inputs, lik, all, pred);
        case CurvatureKind::ntk: {
            NtkBlocks blocks;
            const DataPartition single = single_batch_partition(n, c);
            const DataPartition& part = dp ? *dp : single;
            for (const auto& batch : part.batches)
                blocks.blocks.push_back(
                    ntk_block(jacobian_batch(net, w, inputs, lik, batch, pred),
                              precision_diag, limits.max_ntk_dim));
            return blocks;
        }
    }
    throw MarglikError("unknown curvature kind");
}

CurvatureKind curvature_kind_from_string(const std::string& s) {
    if (s == "ggn_full") return CurvatureKind::ggn_full;
    if (s == "ggn_block") return CurvatureKind::ggn_block;
    if (s == "ggn_diag") return CurvatureKind::ggn_diag;
    if (s == "kfac") return CurvatureKind::kfac;
    if (s == "ntk") return CurvatureKind::ntk;
    throw ConfigError("unknown curvature kind '" + s + "'");
}

std::string to_string(CurvatureKind k) {
    switch (k) {
        case CurvatureKind::ggn_full: return "ggn_full";
        case CurvatureKind::ggn_block: return "ggn_block";
        case CurvatureKind::ggn_diag: return "ggn_diag";
        case CurvatureKind::kfac: return "kfac";
        case CurvatureKind::ntk: return "ntk";
    }
    return "?";
}

}  // namespace marglik
