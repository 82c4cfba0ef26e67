#pragma once

#include "marglik/linalg.hpp"
#include "marglik/nn.hpp"
#include "marglik/partition.hpp"
#include "marglik/probmodel.hpp"

#include <cstdint>
#include <variant>
#include <vector>

namespace marglik {

// Memory caps for the dense representations; exceeding one is a hard error,
// never a silent truncation.
struct Limits {
    int max_full_ggn_dim = 4000;
    int max_ntk_dim = 4000;
};

// The (possibly invariant) predictor the curvature is taken of. kind=none
// with any sample count is the plain network.
struct Predictor {
    Transformation transformation;
    int samples = 1;
    std::uint64_t seed = 0;
};

Vector predict(const Network& net, const Vector& w, const Predictor& pred,
               const Vector& x, std::uint64_t index);

// Jacobian rows and likelihood-Hessian sub-blocks for one batch of
// input-output pairs, rows in batch order. lambda couples only rows that
// share the same input index.
//
// scaled_rows holds the batch's rows of the full Lambda^(1/2) J. When a batch
// holds every output of its inputs this equals sym_sqrt(lambda) * rows; when
// it splits an input's outputs it is the sound block of the symmetrized
// kernel (the one the Fischer argument bounds), which a sub-block root is not.
struct JacobianBatch {
    Matrix rows;                      // |B| x P
    std::vector<PairIndex> row_index; // = the batch
    Matrix lambda;                    // |B| x |B|, PSD
    Matrix scaled_rows;               // |B| x P
};

JacobianBatch jacobian_batch(const Network& net, const Vector& w, const Matrix& inputs,
                             const Likelihood& lik, const std::vector<PairIndex>& batch,
                             const Predictor& pred);

// J^T Lambda J, full P x P.
Matrix ggn(const JacobianBatch& jb, int max_dim);

// Per-range sub-blocks J[:,Ps]^T Lambda J[:,Ps].
std::vector<Matrix> ggn_blocks(const JacobianBatch& jb, const ParamPartition& pp);

// Diagonal of the full GGN without forming it.
Vector ggn_diag(const JacobianBatch& jb);

// Per-layer Kronecker factors: a averages the augmented-input outer products
// over data points, g sums the Lambda^(1/2)-backpropagated output-gradient
// outer products.
struct KfacFactors {
    std::vector<Matrix> a;
    std::vector<Matrix> g;
};

KfacFactors kfac(const Network& net, const Vector& w, const Matrix& inputs,
                 const Likelihood& lik, const std::vector<PairIndex>& batch,
                 const Predictor& pred);

// Lambda^(1/2) J, computed groupwise per input (lambda has no cross-input
// coupling). Feeds the kernel and its precision gradients.
Matrix lambda_sqrt_rows(const JacobianBatch& jb);

// Symmetrized scaled kernel Lambda^(1/2) J P0^(-1) J^T Lambda^(1/2); shares
// its determinant spectrum with J P0^(-1) J^T Lambda and admits a Cholesky.
Matrix ntk_block(const JacobianBatch& jb, const Vector& precision_diag, int max_dim);

struct FullGGN { Matrix h; };
struct BlockGGN { std::vector<Matrix> blocks; };
struct DiagGGN { Vector diag; };
struct NtkBlocks { std::vector<Matrix> blocks; };

using CurvatureEstimate = std::variant<FullGGN, BlockGGN, DiagGGN, KfacFactors, NtkBlocks>;

enum class CurvatureKind { ggn_full, ggn_block, ggn_diag, kfac, ntk };

// Builds the requested representation at w over the full index set (or over
// dp's batches for NTK blocks). pp shapes ggn_block; precision_diag scales
// the NTK.
CurvatureEstimate build_curvature(CurvatureKind kind, const Network& net,
                                  const Vector& w, const Matrix& inputs,
                                  const Likelihood& lik, const Predictor& pred,
                                  const Vector& precision_diag,
                                  const ParamPartition* pp, const DataPartition* dp,
                                  const Limits& limits);

CurvatureKind curvature_kind_from_string(const std::string& s);
std::string to_string(CurvatureKind k);

}  // namespace marglik
