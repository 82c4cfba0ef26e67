#include "marglik/linalg.hpp"

#include "marglik/rng.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace marglik;

TEST_CASE("cholesky_logdet identity and diagonal") {
    CHECK(cholesky_logdet(Matrix::Identity(4, 4), 0.0) == doctest::Approx(0.0));
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 2.0;
    d(1, 1) = 8.0;
    CHECK(cholesky_logdet(d, 0.0) == doctest::Approx(std::log(16.0)).epsilon(1e-12));
}

TEST_CASE("cholesky_logdet matches eigenvalue-sum oracle") {
    for (int t = 0; t < 20; ++t) {
        Matrix a(5, 5);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                a(i, j) = gauss(40 + static_cast<std::uint64_t>(t),
                                static_cast<std::uint64_t>(i),
                                static_cast<std::uint64_t>(j));
        const Matrix m = a.transpose() * a + Matrix::Identity(5, 5);
        CHECK(std::abs(cholesky_logdet(m, 0.0) - oracles::eigen_logdet(m, 0.0)) < 1e-9);
    }
}

TEST_CASE("cholesky_logdet applies the jitter term") {
    const Matrix z = Matrix::Zero(3, 3);
    CHECK(cholesky_logdet(z, 1.0) == doctest::Approx(0.0));
    CHECK(cholesky_logdet(z, 2.0) == doctest::Approx(3.0 * std::log(2.0)));
}

TEST_CASE("cholesky_logdet rejects asymmetric and indefinite inputs") {
    Matrix bad(2, 2);
    bad << 1.0, 0.5, -0.5, 1.0;
    CHECK_THROWS_AS(cholesky_logdet(bad, 0.0), NotSymmetric);

    Matrix indef = Matrix::Identity(3, 3);
    indef(1, 1) = -5.0;
    try {
        cholesky_logdet(indef, 0.0);
        FAIL("expected NotPositiveDefinite");
    } catch (const NotPositiveDefinite& e) {
        CHECK(e.pivot == 1);
    }
}

TEST_CASE("jitter escalation rescues a borderline matrix once") {
    // trace 3e6 -> escalated jitter 1e-10 * 1e6 = 1e-4 clears the -1e-6 pivot
    Matrix m = Matrix::Identity(3, 3) * 1.5e6;
    m(2, 2) = -1e-6;
    CHECK_NOTHROW(cholesky_logdet(m, 0.0));
    Matrix hopeless = Matrix::Identity(2, 2);
    hopeless(1, 1) = -1.0;
    CHECK_THROWS_AS(cholesky_logdet(hopeless, 0.0), NotPositiveDefinite);
}

TEST_CASE("blockdiag_logdet trivial blocks") {
    BlockDiag b;
    b.blocks = {Matrix::Identity(2, 2), Matrix::Identity(3, 3)};
    CHECK(blockdiag_logdet(b, 0.0) == doctest::Approx(0.0));
    BlockDiag d;
    d.blocks = {Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 8.0)};
    CHECK(blockdiag_logdet(d, 0.0) == doctest::Approx(std::log(16.0)));
    CHECK(b.dim() == 5);
}

TEST_CASE("blockdiag_logdet equals the assembled direct sum") {
    for (int t = 0; t < 20; ++t) {
        std::vector<Matrix> blocks{
            oracles::random_spd(2 + t % 3, 90 + static_cast<std::uint64_t>(t)),
            oracles::random_spd(3, 300 + static_cast<std::uint64_t>(t)),
            oracles::random_spd(1 + t % 2, 600 + static_cast<std::uint64_t>(t))};
        CHECK(std::abs(blockdiag_logdet(blocks, 0.0) -
                       cholesky_logdet(direct_sum(blocks), 0.0)) < 1e-10);
    }
}

TEST_CASE("blockdiag_logdet names the failing block") {
    std::vector<Matrix> blocks{Matrix::Identity(2, 2), -Matrix::Identity(2, 2)};
    try {
        blockdiag_logdet(blocks, 0.0);
        FAIL("expected NotPositiveDefinite");
    } catch (const NotPositiveDefinite& e) {
        CHECK(std::string(e.what()).find("block 1") != std::string::npos);
    }
}

TEST_CASE("kron_factor_logdet closed forms") {
    CHECK(kron_factor_logdet(Matrix::Identity(2, 2), Matrix::Identity(3, 3), 1.0) ==
          doctest::Approx(6.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(kron_factor_logdet(Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 3.0),
                             4.0) == doctest::Approx(std::log(10.0)));
}

TEST_CASE("kron_factor_logdet matches the explicit Kronecker product") {
    for (int t = 0; t < 25; ++t) {
        const int na = 2 + t % 5;  // factor dims <= 6
        const int ng = 2 + (t / 5) % 5;
        const Matrix a = oracles::random_spd(na, 7000 + static_cast<std::uint64_t>(t));
        const Matrix g = oracles::random_spd(ng, 8000 + static_cast<std::uint64_t>(t));
        const double tau = 0.25 + 0.5 * uniform01(9000, static_cast<std::uint64_t>(t));
        Matrix dense = oracles::kron_dense(a, g);
        dense.diagonal().array() += tau;
        CHECK(std::abs(kron_factor_logdet(a, g, tau) - cholesky_logdet(dense, 0.0)) <
              1e-9);
    }
}

TEST_CASE("solve_psd basics and residual") {
    Matrix rhs(2, 1);
    rhs << 2.0, 4.0;
    CHECK((solve_psd(Matrix::Identity(2, 2), rhs) - rhs).norm() == doctest::Approx(0.0));
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 2.0;
    d(1, 1) = 4.0;
    const Matrix x = solve_psd(d, rhs);
    CHECK(x(0, 0) == doctest::Approx(1.0));
    CHECK(x(1, 0) == doctest::Approx(1.0));
    for (int t = 0; t < 10; ++t) {
        const Matrix m = oracles::random_spd(8, 500 + static_cast<std::uint64_t>(t));
        Matrix b(8, 3);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 3; ++j)
                b(i, j) = gauss(700 + static_cast<std::uint64_t>(t),
                                static_cast<std::uint64_t>(i),
                                static_cast<std::uint64_t>(j));
        const Matrix sol = solve_psd(m, b);
        CHECK((m * sol - b).norm() <= 1e-8 * b.norm());
    }
}

TEST_CASE("sym_sqrt squares back to the input") {
    const Matrix m = oracles::random_spd(6, 4242);
    const Matrix r = sym_sqrt(m);
    CHECK((r * r - m).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("Fischer's inequality on random splits") {
    int violations = 0;
    for (int t = 0; t < 200; ++t) {
        const std::uint64_t s = keyed_hash(1234, static_cast<std::uint64_t>(t));
        const int n = 4 + static_cast<int>(keyed_hash(s, 0) % 6);
        const Matrix m = oracles::random_spd(n, s);
        std::vector<int> a, b;
        for (int i = 0; i < n; ++i)
            (uniform01(s, 1, static_cast<std::uint64_t>(i)) < 0.5 ? a : b).push_back(i);
        if (a.empty() || b.empty()) continue;
        Matrix ma(static_cast<long>(a.size()), static_cast<long>(a.size()));
        Matrix mb(static_cast<long>(b.size()), static_cast<long>(b.size()));
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < a.size(); ++j)
                ma(static_cast<long>(i), static_cast<long>(j)) = m(a[i], a[j]);
        for (std::size_t i = 0; i < b.size(); ++i)
            for (std::size_t j = 0; j < b.size(); ++j)
                mb(static_cast<long>(i), static_cast<long>(j)) = m(b[i], b[j]);
        if (cholesky_logdet(m, 0.0) >
            cholesky_logdet(ma, 0.0) + cholesky_logdet(mb, 0.0) + 1e-10)
            ++violations;
    }
    CHECK(violations == 0);
}

TEST_CASE("refining a partition only increases the block logdet sum") {
    int violations = 0;
    for (int t = 0; t < 100; ++t) {
        const std::uint64_t s = keyed_hash(777, static_cast<std::uint64_t>(t));
        const int n = 8;
        const Matrix m = oracles::random_spd(n, s);
        auto block_logdet = [&](int begin, int end) {
            return cholesky_logdet(m.block(begin, begin, end - begin, end - begin), 0.0);
        };
        const double whole = cholesky_logdet(m, 0.0);
        const double coarse = block_logdet(0, 4) + block_logdet(4, 8);
        const double fine = block_logdet(0, 2) + block_logdet(2, 4) +
                            block_logdet(4, 6) + block_logdet(6, 8);
        if (whole > coarse + 1e-10 || coarse > fine + 1e-10) ++violations;
    }
    CHECK(violations == 0);
}
