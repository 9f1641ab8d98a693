#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "tune/reduce.hpp"
#include "tune/rng.hpp"

using namespace tune;

namespace {

Eigen::MatrixXd random_history(Rng& rng, Eigen::Index n, Eigen::Index d) {
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.uniform();
    return X;
}

PointU point_of(const Eigen::VectorXd& v) {
    PointU p;
    p.coords.assign(v.data(), v.data() + v.size());
    return p;
}

} // namespace

TEST_CASE("PCA of two points is the line through them") {
    Eigen::MatrixXd X(2, 5);
    X.row(0) << 0.1, 0.2, 0.3, 0.4, 0.5;
    X.row(1) << 0.9, 0.1, 0.6, 0.4, 0.2;
    Embedding emb = fit_pca(X, 3, 0);
    CHECK(emb.rank_deficient);
    REQUIRE(emb.basis.rows() == 1); // rank 1

    Eigen::VectorXd diff = (X.row(1) - X.row(0)).transpose().normalized();
    double cosine = std::abs(emb.basis.row(0).dot(diff.transpose()));
    CHECK(cosine >= 1.0 - 1e-8);
}

TEST_CASE("constant coordinates have zero loadings") {
    Rng rng(3);
    Eigen::MatrixXd X = random_history(rng, 12, 6);
    X.col(2).setConstant(0.7);
    X.col(5).setConstant(0.1);
    Embedding emb = fit_pca(X, 3, 0);
    for (Eigen::Index r = 0; r < emb.basis.rows(); ++r) {
        CHECK(std::abs(emb.basis(r, 2)) < 1e-9);
        CHECK(std::abs(emb.basis(r, 5)) < 1e-9);
    }
}

TEST_CASE("PCA axes and explained variance match a dense eigensolver") {
    Rng rng(17);
    for (auto [n, d] : {std::pair<Eigen::Index, Eigen::Index>{15, 8}, {20, 20}, {9, 4}}) {
        Eigen::MatrixXd X = random_history(rng, n, d);
        std::size_t m = 3;
        Embedding emb = fit_pca(X, m, 0);
        REQUIRE(emb.basis.rows() == static_cast<Eigen::Index>(m));

        // orthonormality
        Eigen::MatrixXd G = emb.basis * emb.basis.transpose();
        CHECK((G - Eigen::MatrixXd::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff() < 1e-8);

        Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
        Eigen::MatrixXd C = Xc.transpose() * Xc;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
        Eigen::VectorXd ev = eig.eigenvalues(); // ascending

        for (std::size_t k = 0; k < m; ++k) {
            double explained = (Xc * emb.basis.row(k).transpose()).squaredNorm();
            double oracle = ev[ev.size() - 1 - static_cast<Eigen::Index>(k)];
            CHECK(std::abs(explained - oracle) < 1e-8 * std::max(1.0, oracle));
            // axis parallel to the oracle eigenvector
            Eigen::VectorXd v = eig.eigenvectors().col(ev.size() - 1 - static_cast<Eigen::Index>(k));
            CHECK(std::abs(emb.basis.row(k).dot(v.transpose())) >= 1.0 - 1e-8);
        }
    }
}

TEST_CASE("PCA sign convention: largest loading positive") {
    Rng rng(23);
    Eigen::MatrixXd X = random_history(rng, 10, 5);
    Embedding emb = fit_pca(X, 2, 0);
    for (Eigen::Index r = 0; r < emb.basis.rows(); ++r) {
        Eigen::Index imax;
        emb.basis.row(r).cwiseAbs().maxCoeff(&imax);
        CHECK(emb.basis(r, imax) > 0.0);
    }
}

TEST_CASE("to_full always lands in the unit cube") {
    Rng rng(29);
    const std::size_t d = 40, m = 5;

    Eigen::MatrixXd X = random_history(rng, 25, static_cast<Eigen::Index>(d));
    Embedding pca = fit_pca(X, m, 1);
    Embedding rembo = make_rembo(d, m, 2);
    std::vector<int> idx{3, 7, 11, 19, 33};
    PointU anchor = point_of(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), 0.25));
    Embedding subset = make_subset(DrKind::Sa, idx, d, anchor);

    for (const Embedding* emb : {&pca, &rembo, &subset}) {
        for (int t = 0; t < 3500; ++t) {
            // sample inside the box and well outside it
            Eigen::VectorXd z = emb->active_box.sample(rng);
            if (t % 3 == 0) z *= 5.0;
            PointU x = to_full(*emb, z);
            REQUIRE(x.dim() == d);
            for (double c : x.coords) {
                REQUIRE(c >= 0.0);
                REQUIRE(c <= 1.0);
            }
        }
    }
}

TEST_CASE("REMBO center map and saturation") {
    const std::size_t d = 317, m = 20;
    Embedding emb = make_rembo(d, m, 5);
    PointU x = to_full(emb, Eigen::VectorXd::Zero(m));
    for (double c : x.coords) CHECK(c == 0.5);

    PointU sat = to_full(emb, Eigen::VectorXd::Constant(m, 1e6));
    for (double c : sat.coords) CHECK((c == 0.0 || c == 1.0));
}

TEST_CASE("REMBO is linear before clipping") {
    const std::size_t d = 30, m = 4;
    Embedding emb = make_rembo(d, m, 7);
    Rng rng(8);
    for (int t = 0; t < 50; ++t) {
        Eigen::VectorXd z1(m), z2(m);
        for (std::size_t k = 0; k < m; ++k) {
            z1[static_cast<Eigen::Index>(k)] = 0.05 * rng.normal();
            z2[static_cast<Eigen::Index>(k)] = 0.05 * rng.normal();
        }
        PointU a = to_full(emb, z1);
        PointU b = to_full(emb, z2);
        PointU zero = to_full(emb, Eigen::VectorXd::Zero(m));
        PointU sum = to_full(emb, (z1 + z2).eval());
        bool clipped = false;
        for (double c : sum.coords) clipped |= (c == 0.0 || c == 1.0);
        if (clipped) continue;
        for (std::size_t i = 0; i < d; ++i)
            CHECK(a.coords[i] + b.coords[i] - zero.coords[i] ==
                  doctest::Approx(sum.coords[i]).epsilon(1e-10));
    }
}

TEST_CASE("REMBO to_active inverts to_full inside the box") {
    const std::size_t d = 50, m = 6;
    Embedding emb = make_rembo(d, m, 9);
    Rng rng(10);
    for (int t = 0; t < 50; ++t) {
        Eigen::VectorXd z(m);
        for (std::size_t k = 0; k < m; ++k) z[static_cast<Eigen::Index>(k)] = 0.1 * rng.normal();
        PointU x = to_full(emb, z);
        bool clipped = false;
        for (double c : x.coords) clipped |= (c == 0.0 || c == 1.0);
        if (clipped) continue;
        Eigen::VectorXd back = to_active(emb, x);
        CHECK((back - z).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("subset embeddings touch only subset coordinates") {
    const std::size_t d = 12;
    std::vector<int> idx{2, 5, 9};
    PointU anchor = point_of(Eigen::VectorXd::LinSpaced(12, 0.05, 0.95));
    Embedding emb = make_subset(DrKind::Shap, idx, d, anchor);

    Eigen::VectorXd z(3);
    z << 0.11, 0.22, 0.33;
    PointU x = to_full(emb, z);
    for (std::size_t i = 0; i < d; ++i) {
        bool in_subset = std::find(idx.begin(), idx.end(), static_cast<int>(i)) != idx.end();
        if (!in_subset) CHECK(x.coords[i] == anchor.coords[i]);
    }
    CHECK(x.coords[2] == 0.11);
    CHECK(x.coords[5] == 0.22);
    CHECK(x.coords[9] == 0.33);

    Eigen::VectorXd back = to_active(emb, x);
    CHECK(back == z);
}

TEST_CASE("unit box transforms round-trip") {
    Rng rng(12);
    Eigen::MatrixXd X = random_history(rng, 20, 10);
    Embedding emb = fit_pca(X, 4, 0);
    for (int t = 0; t < 100; ++t) {
        Eigen::VectorXd z = emb.active_box.sample(rng);
        Eigen::VectorXd u = unit_from_active(emb, z);
        CHECK((u.array() >= 0.0).all());
        CHECK((u.array() <= 1.0).all());
        Eigen::VectorXd back = active_from_unit(emb, u);
        CHECK((back - z).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("sensitivity ranking finds the relevant coordinate") {
    const Eigen::Index n = 40, d = 8;
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Eigen::MatrixXd X = random_history(rng, n, d);
        Eigen::VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) y[i] = X(i, 0) + 1e-3 * rng.normal();
        auto ranked = rank_sensitivity(X, y, 3);
        REQUIRE(ranked.size() == 3);
        hits += ranked[0] == 0;
    }
    CHECK(hits >= 19);
}

TEST_CASE("sensitivity: constant targets rank in index order") {
    Rng rng(4);
    Eigen::MatrixXd X = random_history(rng, 20, 5);
    Eigen::VectorXd y = Eigen::VectorXd::Constant(20, 3.0);
    auto ranked = rank_sensitivity(X, y, 5);
    CHECK(ranked == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("sensitivity: a duplicated column shares the top") {
    Rng rng(6);
    Eigen::MatrixXd X = random_history(rng, 30, 6);
    X.col(1) = X.col(0);
    Eigen::VectorXd y = X.col(0);
    auto ranked = rank_sensitivity(X, y, 2);
    REQUIRE(ranked.size() == 2);
    CHECK(((ranked[0] == 0 && ranked[1] == 1) || (ranked[0] == 1 && ranked[1] == 0)));
}

TEST_CASE("sensitivity requires 10 observations") {
    Rng rng(2);
    Eigen::MatrixXd X = random_history(rng, 9, 3);
    Eigen::VectorXd y = X.col(0);
    CHECK_THROWS_AS(rank_sensitivity(X, y, 2), TuneError);
    CHECK_THROWS_AS(rank_attribution(X, y, 2, 0), TuneError);
}

TEST_CASE("attribution ranking finds the relevant coordinate") {
    const Eigen::Index n = 30, d = 6;
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 100);
        Eigen::MatrixXd X = random_history(rng, n, d);
        Eigen::VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) y[i] = X(i, 0) + 1e-3 * rng.normal();
        auto ranked = rank_attribution(X, y, 3, seed);
        hits += ranked[0] == 0;
    }
    CHECK(hits >= 19);
}

TEST_CASE("attribution: constant column has exactly zero importance") {
    // d = 2: column 0 carries the signal, column 1 is constant. Permuting a
    // constant column cannot change predictions, so it must rank last.
    Rng rng(44);
    Eigen::MatrixXd X(25, 2);
    for (Eigen::Index i = 0; i < 25; ++i) {
        X(i, 0) = rng.uniform();
        X(i, 1) = 0.5;
    }
    Eigen::VectorXd y = X.col(0);
    auto ranked = rank_attribution(X, y, 2, 7);
    CHECK(ranked == std::vector<int>{0, 1});
}

TEST_CASE("attribution top choice is stable across permutation seeds") {
    Rng rng(55);
    Eigen::MatrixXd X = random_history(rng, 30, 5);
    Eigen::VectorXd y = 2.0 * X.col(2);
    auto a = rank_attribution(X, y, 2, 1);
    auto b = rank_attribution(X, y, 2, 2);
    CHECK(a[0] == b[0]);
    CHECK(a[0] == 2);
}

TEST_CASE("refits are deterministic given history and seed") {
    Rng rng(66);
    Eigen::MatrixXd X = random_history(rng, 18, 12);
    Embedding a = fit_pca(X, 4, 9);
    Embedding b = fit_pca(X, 4, 9);
    CHECK(a.basis == b.basis);
    CHECK(a.center == b.center);
    CHECK(a.active_box.lo == b.active_box.lo);

    Embedding ra = make_rembo(25, 5, 123);
    Embedding rb = make_rembo(25, 5, 123);
    CHECK(ra.basis == rb.basis);

    Eigen::VectorXd y = X.col(3);
    CHECK(rank_sensitivity(X, y, 4) == rank_sensitivity(X, y, 4));
    CHECK(rank_attribution(X, y, 4, 5) == rank_attribution(X, y, 4, 5));
}
