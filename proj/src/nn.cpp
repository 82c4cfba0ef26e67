#include "marglik/nn.hpp"

#include "marglik/rng.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <string>

namespace marglik {

namespace {
constexpr double kPi = 3.14159265358979323846;

Vector apply_activation(Activation a, const Vector& z) {
    switch (a) {
        case Activation::tanh: return z.array().tanh();
        case Activation::relu: return z.cwiseMax(0.0);
        case Activation::identity: return z;
    }
    throw MarglikError("unknown activation");
}

// Derivative evaluated from pre-activation z and activated value a.
Vector activation_grad(Activation act, const Vector& z, const Vector& a) {
    switch (act) {
        case Activation::tanh: return 1.0 - a.array().square();
        case Activation::relu: return (z.array() > 0.0).cast<double>();
        case Activation::identity: return Vector::Ones(z.size());
    }
    throw MarglikError("unknown activation");
}
}  // namespace

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
        case Activation::identity: return "identity";
    }
    return "?";
}

Network::Network(int input_dim, const std::vector<int>& hidden, int output_dim,
                 Activation hidden_act) {
    if (input_dim < 1 || output_dim < 1)
        throw BadShape("network dims must be positive");
    int prev = input_dim;
    for (int h : hidden) {
        if (h < 1) throw BadShape("hidden width must be positive");
        layers_.push_back({prev, h, hidden_act});
        prev = h;
    }
    layers_.push_back({prev, output_dim, Activation::identity});  // linear head
    offsets_.resize(layers_.size());
    int off = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        offsets_[l] = off;
        off += layers_[l].out * layers_[l].in + layers_[l].out;
    }
    param_count_ = off;
}

int Network::layer_param_count(int l) const {
    const auto& s = layers_[static_cast<std::size_t>(l)];
    return s.out * s.in + s.out;
}

std::vector<int> Network::hidden_dims() const {
    std::vector<int> h;
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) h.push_back(layers_[l].out);
    return h;
}

ParamLayout param_layout(const Network& net) {
    ParamLayout layout;
    for (int l = 0; l < net.num_layers(); ++l) {
        layout.sizes.push_back(net.layer_param_count(l));
        layout.offsets.push_back(net.layer_param_offset(l));
    }
    layout.total = net.param_count();
    return layout;
}

Vector init_params(const Network& net, std::uint64_t seed) {
    Vector w = Vector::Zero(net.param_count());
    for (int l = 0; l < net.num_layers(); ++l) {
        const auto& spec = net.layer(l);
        const double scale = std::sqrt(6.0 / static_cast<double>(spec.in + spec.out));
        const int off = net.layer_param_offset(l);
        const int nw = spec.out * spec.in;
        for (int k = 0; k < nw; ++k)
            w[off + k] = scale * uniform_sym(seed, static_cast<std::uint64_t>(l),
                                             static_cast<std::uint64_t>(k));
        // biases stay zero
    }
    return w;
}

namespace {
// Row-major weight map into the flat vector.
using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

RowMajorMap weight_map(const Network& net, const Vector& w, int l) {
    const auto& s = net.layer(l);
    return RowMajorMap(w.data() + net.layer_param_offset(l), s.out, s.in);
}

Eigen::Map<const Vector> bias_map(const Network& net, const Vector& w, int l) {
    const auto& s = net.layer(l);
    return Eigen::Map<const Vector>(
        w.data() + net.layer_param_offset(l) + s.out * s.in, s.out);
}
}  // namespace

Matrix layer_weight(const Network& net, const Vector& w, int l) {
    return weight_map(net, w, l);
}

Vector layer_bias(const Network& net, const Vector& w, int l) {
    return bias_map(net, w, l);
}

Vector flatten(const Network& net, const std::vector<Matrix>& weights,
               const std::vector<Vector>& biases) {
    if (static_cast<int>(weights.size()) != net.num_layers() ||
        static_cast<int>(biases.size()) != net.num_layers())
        throw DimMismatch("flatten: layer count mismatch");
    Vector w(net.param_count());
    for (int l = 0; l < net.num_layers(); ++l) {
        const auto& s = net.layer(l);
        const auto& wl = weights[static_cast<std::size_t>(l)];
        const auto& bl = biases[static_cast<std::size_t>(l)];
        if (wl.rows() != s.out || wl.cols() != s.in || bl.size() != s.out)
            throw DimMismatch("flatten: layer " + std::to_string(l) + " shape mismatch");
        int k = net.layer_param_offset(l);
        for (int i = 0; i < s.out; ++i)
            for (int j = 0; j < s.in; ++j) w[k++] = wl(i, j);
        for (int i = 0; i < s.out; ++i) w[k++] = bl[i];
    }
    return w;
}

ForwardTrace forward_trace(const Network& net, const Vector& w, const Vector& x) {
    if (x.size() != net.input_dim())
        throw DimMismatch("forward: input has " + std::to_string(x.size()) +
                          " dims, network expects " + std::to_string(net.input_dim()));
    if (w.size() != net.param_count())
        throw DimMismatch("forward: parameter vector has wrong length");
    ForwardTrace trace;
    Vector a = x;
    for (int l = 0; l < net.num_layers(); ++l) {
        trace.layer_inputs.push_back(a);
        Vector z = weight_map(net, w, l) * a + bias_map(net, w, l);
        trace.preacts.push_back(z);
        a = apply_activation(net.layer(l).act, z);
    }
    trace.output = a;
    return trace;
}

Vector forward(const Network& net, const Vector& w, const Vector& x) {
    if (x.size() != net.input_dim())
        throw DimMismatch("forward: input has " + std::to_string(x.size()) +
                          " dims, network expects " + std::to_string(net.input_dim()));
    if (w.size() != net.param_count())
        throw DimMismatch("forward: parameter vector has wrong length");
    Vector a = x;
    for (int l = 0; l < net.num_layers(); ++l)
        a = apply_activation(net.layer(l).act,
                             weight_map(net, w, l) * a + bias_map(net, w, l));
    return a;
}

std::vector<Vector> backprop_preact_grads(const Network& net, const Vector& w,
                                          const ForwardTrace& trace,
                                          const Vector& out_grad) {
    const int L = net.num_layers();
    if (out_grad.size() != net.output_dim())
        throw DimMismatch("backprop: output gradient dim mismatch");
    std::vector<Vector> dz(static_cast<std::size_t>(L));
    // Output head is identity, so dz_{L-1} = out_grad.
    dz[static_cast<std::size_t>(L - 1)] = out_grad;
    for (int l = L - 1; l > 0; --l) {
        Vector da = weight_map(net, w, l).transpose() * dz[static_cast<std::size_t>(l)];
        const Vector& z = trace.preacts[static_cast<std::size_t>(l - 1)];
        const Vector& a = trace.layer_inputs[static_cast<std::size_t>(l)];
        dz[static_cast<std::size_t>(l - 1)] =
            da.cwiseProduct(activation_grad(net.layer(l - 1).act, z, a));
    }
    return dz;
}

Vector assemble_param_gradient(const Network& net, const ForwardTrace& trace,
                               const std::vector<Vector>& preact_grads) {
    Vector g = Vector::Zero(net.param_count());
    for (int l = 0; l < net.num_layers(); ++l) {
        const auto& s = net.layer(l);
        const Vector& dzl = preact_grads[static_cast<std::size_t>(l)];
        const Vector& al = trace.layer_inputs[static_cast<std::size_t>(l)];
        int k = net.layer_param_offset(l);
        for (int i = 0; i < s.out; ++i, k += s.in)
            g.segment(k, s.in) = dzl[i] * al;
        g.segment(k, s.out) = dzl;
    }
    return g;
}

Vector param_gradient(const Network& net, const Vector& w, const Vector& x,
                      const Vector& out_grad) {
    const ForwardTrace trace = forward_trace(net, w, x);
    return assemble_param_gradient(net, trace, backprop_preact_grads(net, w, trace, out_grad));
}

Matrix jacobian_rows(const Network& net, const Vector& w, const Vector& x,
                     const std::vector<int>& outputs) {
    const ForwardTrace trace = forward_trace(net, w, x);
    Matrix rows(static_cast<int>(outputs.size()), net.param_count());
    Vector seed = Vector::Zero(net.output_dim());
    for (std::size_t r = 0; r < outputs.size(); ++r) {
        const int c = outputs[r];
        if (c < 0 || c >= net.output_dim())
            throw DimMismatch("jacobian_rows: output index out of range");
        seed[c] = 1.0;
        rows.row(static_cast<int>(r)) =
            assemble_param_gradient(net, trace, backprop_preact_grads(net, w, trace, seed))
                .transpose();
        seed[c] = 0.0;
    }
    return rows;
}

Matrix per_sample_jacobian(const Network& net, const Vector& w, const Vector& x) {
    std::vector<int> all(static_cast<std::size_t>(net.output_dim()));
    for (int c = 0; c < net.output_dim(); ++c) all[static_cast<std::size_t>(c)] = c;
    return jacobian_rows(net, w, x, all);
}

TransformKind transform_kind_from_string(const std::string& s) {
    if (s == "none") return TransformKind::none;
    if (s == "rotation2d") return TransformKind::rotation2d;
    if (s == "rotation_image") return TransformKind::rotation_image;
    if (s == "affine_image") return TransformKind::affine_image;
    throw ConfigError("unknown transformation kind '" + s + "'");
}

std::string to_string(TransformKind k) {
    switch (k) {
        case TransformKind::none: return "none";
        case TransformKind::rotation2d: return "rotation2d";
        case TransformKind::rotation_image: return "rotation_image";
        case TransformKind::affine_image: return "affine_image";
    }
    return "?";
}

int transform_dim(TransformKind k) {
    switch (k) {
        case TransformKind::none: return 0;
        case TransformKind::rotation2d: return 1;
        case TransformKind::rotation_image: return 1;
        case TransformKind::affine_image: return 6;
    }
    return 0;
}

namespace {

int raster_side(const Vector& x) {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(x.size()))));
    if (side * side != x.size())
        throw BadShape("image transform requires a square raster, got length " +
                       std::to_string(x.size()));
    return side;
}

// Samples input(row, col) bilinearly at fractional pixel coordinates,
// zero outside the raster.
double bilinear(const Vector& img, int side, double r, double c) {
    const int r0 = static_cast<int>(std::floor(r));
    const int c0 = static_cast<int>(std::floor(c));
    const double fr = r - r0;
    const double fc = c - c0;
    auto at = [&](int ri, int ci) -> double {
        if (ri < 0 || ri >= side || ci < 0 || ci >= side) return 0.0;
        return img[ri * side + ci];
    };
    return (1 - fr) * (1 - fc) * at(r0, c0) + (1 - fr) * fc * at(r0, c0 + 1) +
           fr * (1 - fc) * at(r0 + 1, c0) + fr * fc * at(r0 + 1, c0 + 1);
}

// Resamples the raster through a homogeneous source-coordinate map: the
// output pixel at normalized coords u takes the input value at A*u.
// Normalized frame: x right, y up, span [-1,1] across the raster.
Vector warp_image(const Vector& img, const Eigen::Matrix3d& a) {
    const int side = raster_side(img);
    if (side == 1) return img;
    const double center = 0.5 * (side - 1);
    const double scale = center;
    Vector out(img.size());
    for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
            const double xn = (c - center) / scale;
            const double yn = (center - r) / scale;
            const double xs = a(0, 0) * xn + a(0, 1) * yn + a(0, 2);
            const double ys = a(1, 0) * xn + a(1, 1) * yn + a(1, 2);
            out[r * side + c] = bilinear(img, side, center - ys * scale,
                                         xs * scale + center);
        }
    }
    return out;
}

// Affine generators on homogeneous normalized coordinates, in the order
// x-translation, y-translation, rotation, x-scale, y-scale, shear.
Eigen::Matrix3d affine_generator(int i) {
    Eigen::Matrix3d g = Eigen::Matrix3d::Zero();
    switch (i) {
        case 0: g(0, 2) = 1.0; break;
        case 1: g(1, 2) = 1.0; break;
        case 2: g(0, 1) = -1.0; g(1, 0) = 1.0; break;
        case 3: g(0, 0) = 1.0; break;
        case 4: g(1, 1) = 1.0; break;
        case 5: g(0, 1) = 1.0; g(1, 0) = 1.0; break;
        default: throw BadShape("affine generator index out of range");
    }
    return g;
}

}  // namespace

Vector transform(const Transformation& t, const Vector& x, const Vector& eps) {
    const int dim = transform_dim(t.kind);
    if (t.kind != TransformKind::none &&
        (t.eta.size() != dim || eps.size() != dim))
        throw BadShape("transform: eta/eps must have dim " + std::to_string(dim));
    switch (t.kind) {
        case TransformKind::none:
            return x;
        case TransformKind::rotation2d: {
            if (x.size() != 2) throw BadShape("rotation2d expects a 2-vector");
            const double theta = t.eta[0] * eps[0] * kPi;
            const double cs = std::cos(theta), sn = std::sin(theta);
            Vector out(2);
            out[0] = cs * x[0] - sn * x[1];
            out[1] = sn * x[0] + cs * x[1];
            return out;
        }
        case TransformKind::rotation_image: {
            const double theta = t.eta[0] * eps[0] * kPi;
            // Content rotates by theta; source coords rotate by -theta.
            Eigen::Matrix3d a = Eigen::Matrix3d::Identity();
            a(0, 0) = std::cos(theta);
            a(0, 1) = std::sin(theta);
            a(1, 0) = -std::sin(theta);
            a(1, 1) = std::cos(theta);
            return warp_image(x, a);
        }
        case TransformKind::affine_image: {
            // Content moves by exp(sum c_i G_i); sampling uses the inverse map,
            // exp(-sum), keeping the rotation generator consistent with
            // rotation_image.
            Eigen::Matrix3d gen = Eigen::Matrix3d::Zero();
            for (int i = 0; i < 6; ++i) gen -= (t.eta[i] * eps[i]) * affine_generator(i);
            const Eigen::Matrix3d a = gen.exp();
            return warp_image(x, a);
        }
    }
    throw MarglikError("unknown transform kind");
}

Vector draw_transform_eps(const Transformation& t, std::uint64_t seed,
                          std::uint64_t index, int s) {
    const int dim = transform_dim(t.kind);
    Vector eps(dim);
    for (int k = 0; k < dim; ++k)
        eps[k] = uniform_sym(seed, index, static_cast<std::uint64_t>(s),
                             static_cast<std::uint64_t>(k));
    return eps;
}

Vector invariant_forward(const Network& net, const Vector& w, const Transformation& t,
                         const Vector& x, int samples, std::uint64_t seed,
                         std::uint64_t index) {
    if (samples < 1) throw BadShape("invariant_forward: samples must be >= 1");
    if (t.kind == TransformKind::none) return forward(net, w, x);
    Vector mean = Vector::Zero(net.output_dim());
    for (int s = 0; s < samples; ++s)
        mean += forward(net, w, transform(t, x, draw_transform_eps(t, seed, index, s)));
    return mean / static_cast<double>(samples);
}

Matrix invariant_jacobian_rows(const Network& net, const Vector& w,
                               const Transformation& t, const Vector& x, int samples,
                               std::uint64_t seed, std::uint64_t index,
                               const std::vector<int>& outputs) {
    if (t.kind == TransformKind::none) return jacobian_rows(net, w, x, outputs);
    if (samples < 1) throw BadShape("invariant_jacobian_rows: samples must be >= 1");
    Matrix mean = Matrix::Zero(static_cast<int>(outputs.size()), net.param_count());
    for (int s = 0; s < samples; ++s)
        mean += jacobian_rows(net, w, transform(t, x, draw_transform_eps(t, seed, index, s)),
                              outputs);
    return mean / static_cast<double>(samples);
}

Vector invariant_param_gradient(const Network& net, const Vector& w,
                                const Transformation& t, const Vector& x, int samples,
                                std::uint64_t seed, std::uint64_t index,
                                const Vector& out_grad) {
    if (t.kind == TransformKind::none) return param_gradient(net, w, x, out_grad);
    if (samples < 1) throw BadShape("invariant_param_gradient: samples must be >= 1");
    Vector mean = Vector::Zero(net.param_count());
    for (int s = 0; s < samples; ++s)
        mean += param_gradient(net, w, transform(t, x, draw_transform_eps(t, seed, index, s)),
                               out_grad);
    return mean / static_cast<double>(samples);
}

}  // namespace marglik
