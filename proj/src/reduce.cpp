#include "tune/reduce.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/SVD>

#include "tune/surrogate.hpp"

namespace tune {

namespace {

constexpr double kSqrt5 = 2.2360679774997896964091736687747;

void canonicalize_sign(Eigen::MatrixXd& basis) {
    for (Eigen::Index r = 0; r < basis.rows(); ++r) {
        Eigen::Index imax = 0;
        basis.row(r).cwiseAbs().maxCoeff(&imax);
        if (basis(r, imax) < 0) basis.row(r) = -basis.row(r);
    }
}

Box box_from_projections(const Eigen::MatrixXd& Z) {
    Eigen::VectorXd zmin = Z.colwise().minCoeff();
    Eigen::VectorXd zmax = Z.colwise().maxCoeff();
    Eigen::VectorXd c = 0.5 * (zmin + zmax);
    Eigen::VectorXd h = (0.5 * (zmax - zmin) * 1.2).cwiseMax(1e-9);
    return Box{c - h, c + h};
}

std::vector<int> top_m_by_score(const Eigen::VectorXd& score, std::size_t m) {
    std::vector<int> idx(static_cast<std::size_t>(score.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return score[a] > score[b]; });
    idx.resize(std::min(m, idx.size()));
    return idx;
}

Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
    const Eigen::Index n = v.size();
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
    Eigen::VectorXd r(n);
    Eigen::Index i = 0;
    while (i < n) {
        Eigen::Index j = i;
        while (j + 1 < n && v[idx[static_cast<std::size_t>(j + 1)]] == v[idx[static_cast<std::size_t>(i)]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j); // average position of the tie block
        for (Eigen::Index k = i; k <= j; ++k) r[idx[static_cast<std::size_t>(k)]] = avg;
        i = j + 1;
    }
    return r;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    Eigen::VectorXd ac = a.array() - a.mean();
    Eigen::VectorXd bc = b.array() - b.mean();
    double na = ac.norm(), nb = bc.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return ac.dot(bc) / (na * nb);
}

} // namespace

const char* dr_kind_name(DrKind kind) {
    switch (kind) {
        case DrKind::Pca: return "PCA";
        case DrKind::Rembo: return "REMBO";
        case DrKind::Sa: return "SA";
        case DrKind::Shap: return "SHAP";
        case DrKind::None: return "NONE";
    }
    return "?";
}

DrKind dr_kind_from_name(const std::string& name) {
    if (name == "PCA") return DrKind::Pca;
    if (name == "REMBO") return DrKind::Rembo;
    if (name == "SA") return DrKind::Sa;
    if (name == "SHAP") return DrKind::Shap;
    if (name == "NONE") return DrKind::None;
    raise(Errc::ParseError, "unknown DR kind '" + name + "'");
}

Embedding fit_pca(const Eigen::MatrixXd& X, std::size_t m, std::uint64_t /*seed*/) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    if (n < 2) raise(Errc::InvalidArgument, "fit_pca: need at least 2 points");
    if (m < 1) raise(Errc::InvalidArgument, "fit_pca: m must be >= 1");

    Embedding emb;
    emb.kind = DrKind::Pca;
    emb.full_dim = static_cast<std::size_t>(d);
    emb.center = X.colwise().mean();
    Eigen::MatrixXd Xc = X.rowwise() - emb.center.transpose();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    double tol = static_cast<double>(std::max(n, d)) * 1e-12 * (sv.size() > 0 ? sv[0] : 0.0);
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > tol) ++rank;

    Eigen::Index keep = std::min<Eigen::Index>(static_cast<Eigen::Index>(m), rank);
    if (keep < 1) keep = 1; // constant history: keep one arbitrary axis
    emb.rank_deficient = keep < static_cast<Eigen::Index>(m);
    emb.basis = svd.matrixV().leftCols(keep).transpose(); // keep x d, rows orthonormal
    canonicalize_sign(emb.basis);

    Eigen::MatrixXd Z = Xc * emb.basis.transpose(); // n x keep
    emb.active_box = box_from_projections(Z);
    return emb;
}

Embedding make_rembo(std::size_t d, std::size_t m, std::uint64_t seed) {
    if (m < 1 || d < 1) raise(Errc::InvalidArgument, "make_rembo: bad dims");
    Embedding emb;
    emb.kind = DrKind::Rembo;
    emb.full_dim = d;
    emb.basis.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    Rng rng(seed);
    for (Eigen::Index r = 0; r < emb.basis.rows(); ++r)
        for (Eigen::Index c = 0; c < emb.basis.cols(); ++c) emb.basis(r, c) = rng.normal();
    // Least-squares preimage of (x - 0.5): z = sqrt(d) (A A^T)^-1 A (x - 0.5).
    Eigen::MatrixXd AAt = emb.basis * emb.basis.transpose();
    emb.pinv = AAt.ldlt().solve(emb.basis);
    emb.active_box = Box::symmetric(static_cast<Eigen::Index>(m), std::sqrt(static_cast<double>(m)));
    return emb;
}

Embedding make_subset(DrKind kind, std::vector<int> subset, std::size_t d, PointU anchor) {
    if (subset.empty()) raise(Errc::InvalidArgument, "make_subset: empty subset");
    for (int i : subset)
        if (i < 0 || static_cast<std::size_t>(i) >= d)
            raise(Errc::InvalidArgument, "make_subset: index out of range");
    Embedding emb;
    emb.kind = kind;
    emb.full_dim = d;
    emb.subset = std::move(subset);
    emb.anchor = std::move(anchor);
    emb.active_box = Box::unit(static_cast<Eigen::Index>(emb.subset.size()));
    return emb;
}

Embedding identity_embedding(std::size_t d) {
    Embedding emb;
    emb.kind = DrKind::None;
    emb.full_dim = d;
    emb.active_box = Box::unit(static_cast<Eigen::Index>(d));
    return emb;
}

PointU to_full(const Embedding& emb, const Eigen::VectorXd& z) {
    if (z.size() != emb.active_box.dim())
        raise(Errc::DimensionMismatch, "to_full: active point dim != embedding dim");
    const auto d = static_cast<Eigen::Index>(emb.full_dim);
    Eigen::VectorXd x;
    switch (emb.kind) {
        case DrKind::Pca:
            x = emb.center + emb.basis.transpose() * z;
            break;
        case DrKind::Rembo:
            x = Eigen::VectorXd::Constant(d, 0.5) +
                emb.basis.transpose() * z / std::sqrt(static_cast<double>(d));
            break;
        case DrKind::Sa:
        case DrKind::Shap: {
            if (emb.anchor.dim() != emb.full_dim)
                raise(Errc::DimensionMismatch, "to_full: anchor dim != full dim");
            x = Eigen::Map<const Eigen::VectorXd>(emb.anchor.coords.data(), d);
            for (std::size_t i = 0; i < emb.subset.size(); ++i)
                x[emb.subset[i]] = z[static_cast<Eigen::Index>(i)];
            break;
        }
        case DrKind::None:
            x = z;
            break;
    }
    PointU p;
    p.coords.resize(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < d; ++i) p.coords[static_cast<std::size_t>(i)] = std::clamp(x[i], 0.0, 1.0);
    return p;
}

Eigen::VectorXd to_active(const Embedding& emb, const PointU& x) {
    if (x.dim() != emb.full_dim) raise(Errc::DimensionMismatch, "to_active: point dim != full dim");
    Eigen::Map<const Eigen::VectorXd> xv(x.coords.data(), static_cast<Eigen::Index>(x.dim()));
    switch (emb.kind) {
        case DrKind::Pca:
            return emb.basis * (xv - emb.center);
        case DrKind::Rembo:
            return std::sqrt(static_cast<double>(emb.full_dim)) *
                   (emb.pinv * (xv.array() - 0.5).matrix());
        case DrKind::Sa:
        case DrKind::Shap: {
            Eigen::VectorXd z(static_cast<Eigen::Index>(emb.subset.size()));
            for (std::size_t i = 0; i < emb.subset.size(); ++i)
                z[static_cast<Eigen::Index>(i)] = xv[emb.subset[i]];
            return z;
        }
        case DrKind::None:
            return xv;
    }
    raise(Errc::InvalidArgument, "bad embedding kind");
}

Eigen::VectorXd unit_from_active(const Embedding& emb, const Eigen::VectorXd& z) {
    Eigen::VectorXd u = (z - emb.active_box.lo).array() /
                        (emb.active_box.hi - emb.active_box.lo).array();
    return u.cwiseMax(0.0).cwiseMin(1.0);
}

Eigen::VectorXd active_from_unit(const Embedding& emb, const Eigen::VectorXd& u) {
    return emb.active_box.lo.array() +
           u.array() * (emb.active_box.hi - emb.active_box.lo).array();
}

std::vector<int> rank_sensitivity(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  std::size_t m) {
    const Eigen::Index n = X.rows();
    if (n < 10) raise(Errc::TooFewObservations, "rank_sensitivity: need >= 10 observations");

    Eigen::VectorXd ry = average_ranks(y);
    Eigen::VectorXd score(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        Eigen::VectorXd col = X.col(j);
        double spearman = std::abs(pearson(average_ranks(col), ry));

        // Split-mean gap around the median of the column.
        std::vector<double> sorted(col.data(), col.data() + n);
        std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
        double med = sorted[static_cast<std::size_t>(n / 2)];
        double lo_sum = 0, hi_sum = 0;
        int lo_n = 0, hi_n = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (col[i] < med) {
                lo_sum += y[i];
                ++lo_n;
            } else {
                hi_sum += y[i];
                ++hi_n;
            }
        }
        double gap = (lo_n > 0 && hi_n > 0)
                         ? std::abs(lo_sum / lo_n - hi_sum / hi_n)
                         : 0.0;
        score[j] = spearman + gap;
    }
    return top_m_by_score(score, m);
}

std::vector<int> rank_attribution(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  std::size_t m, std::uint64_t seed) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    if (n < 10) raise(Errc::TooFewObservations, "rank_attribution: need >= 10 observations");

    GpModel model = fit(X, y, derive_seed(seed, 0x6A7));

    const Eigen::VectorXd& ls = model.hyper.lengthscales;
    const double sv = model.hyper.signal_variance;

    // Base scaled squared distances between all pairs; per-column updates
    // below swap out one dimension's contribution, so each permutation costs
    // O(n^2) instead of O(n^2 d).
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index k = 0; k < d; ++k) {
        Eigen::ArrayXd c = X.col(k).array() / ls[k];
        S += ((c.matrix() * Eigen::RowVectorXd::Ones(n) -
               Eigen::VectorXd::Ones(n) * c.matrix().transpose())
                  .array()
                  .square())
                 .matrix();
    }
    auto matern_mu = [&](const Eigen::MatrixXd& Ssub) -> Eigen::ArrayXd {
        Eigen::ArrayXXd r = Ssub.array().max(0.0).sqrt();
        Eigen::MatrixXd K =
            (sv * (1.0 + kSqrt5 * r + (5.0 / 3.0) * Ssub.array().max(0.0)) * (-kSqrt5 * r).exp())
                .matrix();
        return (K * model.alpha).array() + model.hyper.mean_const;
    };

    Eigen::ArrayXd mu_base = matern_mu(S);
    double mse_base = (mu_base - y.array()).square().mean();

    constexpr int kPerms = 10;
    Eigen::VectorXd importance(d);
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < d; ++j) {
        Eigen::ArrayXd cj = X.col(j).array() / ls[j];
        Eigen::MatrixXd Dj = ((cj.matrix() * Eigen::RowVectorXd::Ones(n) -
                               Eigen::VectorXd::Ones(n) * cj.matrix().transpose())
                                  .array()
                                  .square())
                                 .matrix();
        double total = 0.0;
        for (int rep = 0; rep < kPerms; ++rep) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(rep)));
            std::iota(perm.begin(), perm.end(), 0);
            for (std::size_t i = perm.size() - 1; i > 0; --i)
                std::swap(perm[i], perm[rng.uniform_index(i + 1)]);

            Eigen::ArrayXd cp(n);
            for (Eigen::Index i = 0; i < n; ++i) cp[i] = cj[perm[static_cast<std::size_t>(i)]];
            // Queries are X with column j permuted; training rows unchanged.
            Eigen::MatrixXd Dperm = ((cp.matrix() * Eigen::RowVectorXd::Ones(n) -
                                      Eigen::VectorXd::Ones(n) * cj.matrix().transpose())
                                         .array()
                                         .square())
                                        .matrix();
            Eigen::ArrayXd mu = matern_mu(S - Dj + Dperm);
            total += (mu - y.array()).square().mean() - mse_base;
        }
        importance[j] = total / kPerms;
    }
    return top_m_by_score(importance, m);
}

} // namespace tune
