#include "marglik/nn.hpp"

#include "marglik/rng.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace marglik;

namespace {

// Independent straight-line reimplementation of a 2-layer tanh forward pass.
Vector straight_line_forward(const Matrix& w1, const Vector& b1, const Matrix& w2,
                             const Vector& b2, const Vector& x) {
    Vector h(w1.rows());
    for (long i = 0; i < w1.rows(); ++i) {
        double z = b1[i];
        for (long j = 0; j < w1.cols(); ++j) z += w1(i, j) * x[j];
        h[i] = std::tanh(z);
    }
    Vector out(w2.rows());
    for (long i = 0; i < w2.rows(); ++i) {
        double z = b2[i];
        for (long j = 0; j < w2.cols(); ++j) z += w2(i, j) * h[j];
        out[i] = z;
    }
    return out;
}

Vector random_vec(long n, std::uint64_t seed) {
    Vector v(n);
    for (long i = 0; i < n; ++i) v[i] = gauss(seed, static_cast<std::uint64_t>(i));
    return v;
}

}  // namespace

TEST_CASE("forward through an identity layer") {
    Network net(3, {}, 3, Activation::tanh);
    const Vector w = flatten(net, {Matrix::Identity(3, 3)}, {Vector::Zero(3)});
    const Vector x = random_vec(3, 11);
    CHECK((forward(net, w, x) - x).norm() == doctest::Approx(0.0));
    CHECK((forward(net, Vector::Zero(net.param_count()), x)).norm() ==
          doctest::Approx(0.0));
}

TEST_CASE("forward matches a straight-line reimplementation") {
    Network net(3, {4}, 2, Activation::tanh);
    const Vector w = init_params(net, 5);
    const Vector x = random_vec(3, 21);
    const Vector expect = straight_line_forward(layer_weight(net, w, 0),
                                                layer_bias(net, w, 0),
                                                layer_weight(net, w, 1),
                                                layer_bias(net, w, 1), x);
    CHECK((forward(net, w, x) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward rejects dimension mismatches") {
    Network net(3, {4}, 2, Activation::tanh);
    CHECK_THROWS_AS(forward(net, init_params(net, 0), random_vec(2, 1)), DimMismatch);
    CHECK_THROWS_AS(forward(net, Vector::Zero(3), random_vec(3, 1)), DimMismatch);
}

TEST_CASE("linear-model jacobian row is the design row") {
    Network net(3, {}, 1, Activation::tanh);
    const Vector w = random_vec(net.param_count(), 31);
    const Vector x = random_vec(3, 32);
    const Matrix jac = per_sample_jacobian(net, w, x);
    REQUIRE(jac.rows() == 1);
    for (int j = 0; j < 3; ++j) CHECK(jac(0, j) == doctest::Approx(x[j]));
    CHECK(jac(0, 3) == doctest::Approx(1.0));
}

TEST_CASE("zero input zeroes the weight block of the jacobian") {
    Network net(3, {}, 2, Activation::tanh);
    const Vector w = random_vec(net.param_count(), 41);
    const Matrix jac = per_sample_jacobian(net, w, Vector::Zero(3));
    CHECK(jac.leftCols(6).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("jacobian matches central finite differences on 50 random nets") {
    for (int t = 0; t < 50; ++t) {
        const std::uint64_t s = keyed_hash(50, static_cast<std::uint64_t>(t));
        Network net(2 + t % 2, {3 + t % 3}, 1 + t % 3, Activation::tanh);
        Vector w = init_params(net, s);
        for (long i = 0; i < w.size(); ++i)
            w[i] += 0.5 * gauss(s, 1, static_cast<std::uint64_t>(i));
        const Vector x = random_vec(net.input_dim(), keyed_hash(s, 2));
        const Matrix jac = per_sample_jacobian(net, w, x);
        const Matrix fd = oracles::fd_jacobian(net, w, x, 1e-5);
        const double scale = std::max(1.0, jac.cwiseAbs().maxCoeff());
        CHECK((jac - fd).cwiseAbs().maxCoeff() / scale < 1e-5);
    }
}

TEST_CASE("flat layout round trip is exact") {
    Network net(4, {5, 3}, 2, Activation::relu);
    const Vector w = init_params(net, 77);
    std::vector<Matrix> ws;
    std::vector<Vector> bs;
    for (int l = 0; l < net.num_layers(); ++l) {
        ws.push_back(layer_weight(net, w, l));
        bs.push_back(layer_bias(net, w, l));
    }
    CHECK((flatten(net, ws, bs) - w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("transform: none and zero-angle rotations are identity") {
    const Vector x = random_vec(2, 90);
    Transformation none{TransformKind::none, Vector()};
    CHECK((transform(none, x, Vector()) - x).norm() == 0.0);
    Transformation rot{TransformKind::rotation2d, Vector::Ones(1)};
    Vector eps = Vector::Zero(1);
    CHECK((transform(rot, x, eps) - x).norm() == doctest::Approx(0.0));
}

TEST_CASE("rotation2d quarter turn") {
    Transformation rot{TransformKind::rotation2d, Vector::Constant(1, 0.5)};
    Vector x(2);
    x << 1.0, 0.0;
    Vector eps = Vector::Ones(1);
    const Vector y = transform(rot, x, eps);
    CHECK(std::abs(y[0] - 0.0) < 1e-12);
    CHECK(std::abs(y[1] - 1.0) < 1e-12);
}

TEST_CASE("rotation_image: quarter turn moves pixels as expected") {
    // 3x3 raster with a single bright pixel right of center
    Vector img = Vector::Zero(9);
    img[1 * 3 + 2] = 1.0;  // row 1, col 2
    Transformation rot{TransformKind::rotation_image, Vector::Constant(1, 0.5)};
    Vector eps = Vector::Ones(1);  // theta = pi/2 counterclockwise
    const Vector out = transform(rot, img, eps);
    CHECK(out[0 * 3 + 1] == doctest::Approx(1.0).epsilon(1e-9));  // moved above center
    CHECK(out.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("rotation_image: out-of-range raster shapes are rejected") {
    Transformation rot{TransformKind::rotation_image, Vector::Constant(1, 0.5)};
    CHECK_THROWS_AS(transform(rot, random_vec(8, 3), Vector::Ones(1)), BadShape);
}

TEST_CASE("affine_image: zero coefficients give the identity warp") {
    const int side = 5;
    Vector img = random_vec(side * side, 91).cwiseAbs();
    Transformation aff{TransformKind::affine_image, Vector::Zero(6)};
    const Vector out = transform(aff, img, Vector::Zero(6));
    CHECK((out - img).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("affine_image: pure rotation generator matches rotation_image") {
    const int side = 7;
    Vector img = random_vec(side * side, 92).cwiseAbs();
    Transformation aff{TransformKind::affine_image, Vector::Zero(6)};
    aff.eta[2] = 0.3;  // rotation generator; coefficient 0.3*eps
    Vector eps6 = Vector::Zero(6);
    eps6[2] = 1.0;
    Transformation rot{TransformKind::rotation_image, Vector::Constant(1, 0.3 / 3.14159265358979323846)};
    Vector eps1 = Vector::Ones(1);
    const Vector a = transform(aff, img, eps6);
    const Vector b = transform(rot, img, eps1);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("invariant_forward: none kind and S=1 reductions") {
    Network net(2, {4}, 2, Activation::tanh);
    const Vector w = init_params(net, 7);
    const Vector x = random_vec(2, 93);
    Transformation none{TransformKind::none, Vector()};
    CHECK((invariant_forward(net, w, none, x, 5, 9, 0) - forward(net, w, x)).norm() ==
          0.0);
    Transformation rot{TransformKind::rotation2d, Vector::Constant(1, 0.4)};
    const Vector eps = draw_transform_eps(rot, 9, 3, 0);
    const Vector expect = forward(net, w, transform(rot, x, eps));
    CHECK((invariant_forward(net, w, rot, x, 1, 9, 3) - expect).norm() == 0.0);
}

TEST_CASE("invariant_forward is bitwise deterministic in the seed") {
    Network net(2, {4}, 1, Activation::tanh);
    const Vector w = init_params(net, 8);
    const Vector x = random_vec(2, 94);
    Transformation rot{TransformKind::rotation2d, Vector::Constant(1, 0.8)};
    const Vector a = invariant_forward(net, w, rot, x, 16, 1234, 0);
    const Vector b = invariant_forward(net, w, rot, x, 16, 1234, 0);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    const Vector c = invariant_forward(net, w, rot, x, 16, 1235, 0);
    CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("rotation-symmetric predictor is independent of eta") {
    // Predictor h(x) = net1d(||x||): rotations leave it invariant, so the
    // MC-averaged invariant output cannot depend on the amplitude.
    Network net(1, {3}, 1, Activation::tanh);
    const Vector w = init_params(net, 12);
    const Vector x = random_vec(2, 95);
    auto averaged = [&](double eta) -> Vector {
        Transformation rot{TransformKind::rotation2d, Vector::Constant(1, eta)};
        Vector mean = Vector::Zero(1);
        for (int s = 0; s < 8; ++s) {
            const Vector xs = transform(rot, x, draw_transform_eps(rot, 5, 0, s));
            mean += forward(net, w, Vector::Constant(1, xs.norm()));
        }
        return mean / 8.0;
    };
    CHECK(std::abs(averaged(0.1)[0] - averaged(0.9)[0]) < 1e-10);
}

TEST_CASE("jacobian of the invariant predictor matches finite differences") {
    Network net(2, {4}, 2, Activation::tanh);
    Vector w = init_params(net, 3);
    const Vector x = random_vec(2, 96);
    Transformation rot{TransformKind::rotation2d, Vector::Constant(1, 0.6)};
    const int samples = 4;
    const std::uint64_t seed = 77;
    std::vector<int> outs{0, 1};
    const Matrix jac = invariant_jacobian_rows(net, w, rot, x, samples, seed, 2, outs);
    Matrix fd(2, net.param_count());
    const double step = 1e-5;
    for (long p = 0; p < w.size(); ++p) {
        Vector wp = w, wm = w;
        wp[p] += step;
        wm[p] -= step;
        fd.col(p) = (invariant_forward(net, wp, rot, x, samples, seed, 2) -
                     invariant_forward(net, wm, rot, x, samples, seed, 2)) /
                    (2.0 * step);
    }
    const double scale = std::max(1.0, jac.cwiseAbs().maxCoeff());
    CHECK((jac - fd).cwiseAbs().maxCoeff() / scale < 1e-5);
}
