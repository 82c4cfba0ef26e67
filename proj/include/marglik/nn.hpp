#pragma once

#include "marglik/common.hpp"

#include <cstdint>
#include <vector>

namespace marglik {

enum class Activation { tanh, relu, identity };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

struct LayerSpec {
    int in = 0;
    int out = 0;
    Activation act = Activation::identity;
};

// Fully-connected network. Parameters live in a flat vector with a contiguous
// per-layer layout: weights row-major (out x in), then bias, layers in order.
// That layout defines the parameter index set used by partitions and priors.
// The output layer activation is always identity (linear head).
class Network {
public:
    Network(int input_dim, const std::vector<int>& hidden, int output_dim,
            Activation hidden_act);

    int input_dim() const { return layers_.front().in; }
    int output_dim() const { return layers_.back().out; }
    int param_count() const { return param_count_; }
    int num_layers() const { return static_cast<int>(layers_.size()); }
    const LayerSpec& layer(int l) const { return layers_[static_cast<std::size_t>(l)]; }
    int layer_param_count(int l) const;
    int layer_param_offset(int l) const { return offsets_[static_cast<std::size_t>(l)]; }
    std::vector<int> hidden_dims() const;

private:
    std::vector<LayerSpec> layers_;
    std::vector<int> offsets_;
    int param_count_ = 0;
};

// Per-layer flat-parameter block sizes; shared with priors and partitions.
struct ParamLayout {
    std::vector<int> sizes;
    std::vector<int> offsets;
    int total = 0;
};

ParamLayout param_layout(const Network& net);

struct TrainedState {
    Vector mode;  // flat parameter vector w~
    int epoch = 0;
};

// Glorot-uniform weights, zero biases; deterministic in the seed.
Vector init_params(const Network& net, std::uint64_t seed);

// Flat-layout accessors (copies) and their inverse.
Matrix layer_weight(const Network& net, const Vector& w, int l);
Vector layer_bias(const Network& net, const Vector& w, int l);
Vector flatten(const Network& net, const std::vector<Matrix>& weights,
               const std::vector<Vector>& biases);

struct ForwardTrace {
    std::vector<Vector> layer_inputs;  // a_0 .. a_{L-1}
    std::vector<Vector> preacts;       // z_0 .. z_{L-1}
    Vector output;
};

ForwardTrace forward_trace(const Network& net, const Vector& w, const Vector& x);
Vector forward(const Network& net, const Vector& w, const Vector& x);

// Pre-activation gradients dz_l for an output-space seed vector.
std::vector<Vector> backprop_preact_grads(const Network& net, const Vector& w,
                                          const ForwardTrace& trace,
                                          const Vector& out_grad);

// Assembles the flat J^T v from pre-activation gradients and the trace.
Vector assemble_param_gradient(const Network& net, const ForwardTrace& trace,
                               const std::vector<Vector>& preact_grads);

// J^T out_grad in one reverse sweep.
Vector param_gradient(const Network& net, const Vector& w, const Vector& x,
                      const Vector& out_grad);

// Selected rows of the C x P Jacobian at w; one reverse sweep per row.
Matrix jacobian_rows(const Network& net, const Vector& w, const Vector& x,
                     const std::vector<int>& outputs);

// Entry (c, p) = d f_c / d w_p; column order follows the flat layout.
Matrix per_sample_jacobian(const Network& net, const Vector& w, const Vector& x);

enum class TransformKind { none, rotation2d, rotation_image, affine_image };

TransformKind transform_kind_from_string(const std::string& s);
std::string to_string(TransformKind k);

// Learnable input-transformation distribution: eta holds non-negative
// amplitudes of uniform distributions over generator coefficients.
struct Transformation {
    TransformKind kind = TransformKind::none;
    Vector eta;
};

// Dimension of eta (and of the noise vector) for a kind.
int transform_dim(TransformKind k);

// Applies the transformation with noise eps in [-1,1]^dim:
//   rotation2d      rotates the 2-vector by theta = eta_0 * eps_0 * pi
//   rotation_image  rotates the square raster by the same theta about its
//                   center, bilinear interpolation, zero fill
//   affine_image    matrix exponential of the coefficient-weighted affine
//                   generators [x-shift, y-shift, rotation, x-scale, y-scale,
//                   shear] acting on normalized [-1,1]^2 coordinates, with
//                   coefficients eta_i * eps_i
Vector transform(const Transformation& t, const Vector& x, const Vector& eps);

// Noise draw for sample s of data point `index`: i.i.d. uniform on [-1,1],
// keyed by (seed, index, s) so identical seeds reproduce identical draws.
Vector draw_transform_eps(const Transformation& t, std::uint64_t seed,
                          std::uint64_t index, int s);

// (1/S) sum_s f(g(x, eps_s; eta); w) -- the Monte-Carlo invariant predictor.
Vector invariant_forward(const Network& net, const Vector& w, const Transformation& t,
                         const Vector& x, int samples, std::uint64_t seed,
                         std::uint64_t index);

// Jacobian rows of the invariant predictor: the mean of per-sample Jacobian
// rows at the transformed inputs, sharing the eps draws of invariant_forward.
Matrix invariant_jacobian_rows(const Network& net, const Vector& w,
                               const Transformation& t, const Vector& x, int samples,
                               std::uint64_t seed, std::uint64_t index,
                               const std::vector<int>& outputs);

// J^T out_grad of the invariant predictor (mean of per-sample pullbacks).
Vector invariant_param_gradient(const Network& net, const Vector& w,
                                const Transformation& t, const Vector& x, int samples,
                                std::uint64_t seed, std::uint64_t index,
                                const Vector& out_grad);

}  // namespace marglik
