#include "tune/surrogate.hpp"

#include <algorithm>
#include <cmath>

#include "tune/rng.hpp"

namespace tune {

namespace {

constexpr double kSqrt5 = 2.2360679774997896964091736687747;
constexpr double kTwoPi = 6.2831853071795864769252867665590;

// Scaled squared distances S_ij = sum_k ((a_ik - b_jk) / l_k)^2, computed
// as |a|^2 + |b|^2 - 2 a.b so the bulk of the work is a single GEMM.
Eigen::MatrixXd scaled_sqdist(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                              const Eigen::VectorXd& ls) {
    Eigen::MatrixXd As = A * ls.cwiseInverse().asDiagonal();
    Eigen::MatrixXd Bs = B * ls.cwiseInverse().asDiagonal();
    Eigen::VectorXd an = As.rowwise().squaredNorm();
    Eigen::VectorXd bn = Bs.rowwise().squaredNorm();
    Eigen::MatrixXd S = -2.0 * As * Bs.transpose();
    S.colwise() += an;
    S.rowwise() += bn.transpose();
    return S;
}

Eigen::MatrixXd matern52_from_sqdist(const Eigen::MatrixXd& S, double signal_variance) {
    Eigen::ArrayXXd r = S.array().max(0.0).sqrt();
    return (signal_variance * (1.0 + kSqrt5 * r + (5.0 / 3.0) * S.array()) * (-kSqrt5 * r).exp())
        .matrix();
}

struct LmlBounds {
    double ls_lo = 1e-2, ls_hi = 10.0;
    double sv_lo, sv_hi;
    double nv_lo, nv_hi;
};

// One LML (and optional gradient) evaluation at fixed hyperparameters.
// Returns false when the kernel cannot be factorized even with jitter.
bool eval_lml(const Eigen::MatrixXd& X, const Eigen::VectorXd& yc, const Eigen::VectorXd& ls,
              double sv, double nv, double& lml, Eigen::VectorXd* grad) {
    const Eigen::Index n = X.rows();
    const Eigen::Index m = X.cols();

    Eigen::MatrixXd S = scaled_sqdist(X, X, ls);
    Eigen::MatrixXd Kf = matern52_from_sqdist(S, sv);

    Eigen::LLT<Eigen::MatrixXd> llt;
    double jitter = 0.0;
    for (;;) {
        Eigen::MatrixXd K = Kf;
        K.diagonal().array() += nv + jitter;
        llt.compute(K);
        if (llt.info() == Eigen::Success) break;
        jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
        if (jitter > 1e-4) return false;
    }

    Eigen::VectorXd alpha = llt.solve(yc);
    double half_logdet = llt.matrixLLT().diagonal().array().log().sum();
    lml = -0.5 * yc.dot(alpha) - half_logdet -
          0.5 * static_cast<double>(n) * std::log(kTwoPi);

    if (grad) {
        Eigen::MatrixXd Kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
        Eigen::MatrixXd A = alpha * alpha.transpose() - Kinv;

        grad->resize(m + 2);
        // dK/d l_k = sv * (5/3) (1 + sqrt5 r) exp(-sqrt5 r) * D_k / l_k^3
        Eigen::ArrayXXd r = S.array().max(0.0).sqrt();
        Eigen::ArrayXXd P = sv * (5.0 / 3.0) * (1.0 + kSqrt5 * r) * (-kSqrt5 * r).exp();
        for (Eigen::Index k = 0; k < m; ++k) {
            Eigen::ArrayXXd dk = (X.col(k) * Eigen::RowVectorXd::Ones(n) -
                                  Eigen::VectorXd::Ones(n) * X.col(k).transpose())
                                     .array()
                                     .square();
            (*grad)[k] = 0.5 * (A.array() * P * dk).sum() / (ls[k] * ls[k] * ls[k]);
        }
        (*grad)[m] = 0.5 * (A.array() * (Kf.array() / sv)).sum();
        (*grad)[m + 1] = 0.5 * A.trace();
    }
    return true;
}

} // namespace

Eigen::MatrixXd kernel_matrix(const GpHyperparams& hyper, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B) {
    return matern52_from_sqdist(scaled_sqdist(A, B, hyper.lengthscales), hyper.signal_variance);
}

GpModel make_model(const GpHyperparams& hyper, Eigen::MatrixXd X, Eigen::VectorXd y) {
    if (X.rows() != y.size()) raise(Errc::DimensionMismatch, "make_model: |X| != |y|");
    if (hyper.lengthscales.size() != X.cols())
        raise(Errc::DimensionMismatch, "make_model: lengthscale count != input dim");

    GpModel model;
    model.hyper = hyper;
    model.X = std::move(X);
    model.y = std::move(y);

    Eigen::MatrixXd Kf = kernel_matrix(hyper, model.X, model.X);
    Eigen::LLT<Eigen::MatrixXd> llt;
    double jitter = 0.0;
    for (;;) {
        Eigen::MatrixXd K = Kf;
        K.diagonal().array() += hyper.noise_variance + jitter;
        llt.compute(K);
        if (llt.info() == Eigen::Success) break;
        jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
        if (jitter > 1e-4)
            raise(Errc::SingularKernel,
                  "kernel not positive definite after jitter escalation to 1e-4");
    }
    model.jitter = jitter;
    model.chol = llt.matrixL();
    Eigen::VectorXd yc = model.y.array() - hyper.mean_const;
    model.alpha = llt.solve(yc);
    return model;
}

void predict(const GpModel& model, const Eigen::MatrixXd& Xq, Eigen::VectorXd& mu,
             Eigen::VectorXd& var) {
    if (Xq.cols() != model.input_dim())
        raise(Errc::DimensionMismatch, "predict: query dim != model dim");

    Eigen::MatrixXd Ks = kernel_matrix(model.hyper, model.X, Xq); // n x q
    mu = (Ks.transpose() * model.alpha).array() + model.hyper.mean_const;

    Eigen::MatrixXd V =
        model.chol.triangularView<Eigen::Lower>().solve(Ks); // L^-1 Ks, n x q
    var = (model.hyper.signal_variance - V.colwise().squaredNorm().transpose().array())
              .max(0.0)
              .matrix();
}

double log_marginal_likelihood(const GpModel& model) {
    Eigen::VectorXd yc = model.y.array() - model.hyper.mean_const;
    double half_logdet = model.chol.diagonal().array().log().sum();
    return -0.5 * yc.dot(model.alpha) - half_logdet -
           0.5 * static_cast<double>(model.n()) * std::log(kTwoPi);
}

Eigen::VectorXd lml_gradient(const GpModel& model) {
    Eigen::VectorXd yc = model.y.array() - model.hyper.mean_const;
    double lml = 0.0;
    Eigen::VectorXd grad;
    if (!eval_lml(model.X, yc, model.hyper.lengthscales, model.hyper.signal_variance,
                  model.hyper.noise_variance + model.jitter, lml, &grad))
        raise(Errc::SingularKernel, "lml_gradient: factorization failed");
    return grad;
}

GpModel fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::uint64_t seed,
            FitReport* report) {
    const Eigen::Index n = X.rows();
    const Eigen::Index m = X.cols();
    if (n < 2) raise(Errc::InvalidArgument, "fit: need at least 2 observations");
    if (!y.allFinite()) raise(Errc::InvalidArgument, "fit: non-finite targets");

    const double mean_y = y.mean();
    Eigen::VectorXd yc = y.array() - mean_y;

    if (y.maxCoeff() == y.minCoeff()) {
        // Mean-only model: zero centered targets make alpha vanish, so the
        // posterior mean is y everywhere.
        GpHyperparams hyper;
        hyper.lengthscales = Eigen::VectorXd::Ones(m);
        hyper.signal_variance = 1e-4;
        hyper.noise_variance = 1e-6;
        hyper.mean_const = mean_y;
        GpModel model = make_model(hyper, X, y);
        model.degenerate = true;
        if (report) {
            report->start_lml.clear();
            report->final_lml = log_marginal_likelihood(model);
        }
        return model;
    }

    const double var_y = yc.squaredNorm() / static_cast<double>(n);
    LmlBounds b;
    b.sv_lo = 1e-4;
    b.sv_hi = 100.0 * var_y + 1e-4;
    b.nv_lo = 1e-6;
    b.nv_hi = var_y + 1e-6;

    const Eigen::Index np = m + 2; // log lengthscales, log sv, log nv
    Eigen::VectorXd lo(np), hi(np);
    lo.head(m).setConstant(std::log(b.ls_lo));
    hi.head(m).setConstant(std::log(b.ls_hi));
    lo[m] = std::log(b.sv_lo);
    hi[m] = std::log(b.sv_hi);
    lo[m + 1] = std::log(b.nv_lo);
    hi[m + 1] = std::log(b.nv_hi);
    auto project = [&](Eigen::VectorXd t) {
        return t.cwiseMax(lo).cwiseMin(hi).eval();
    };

    auto lml_at = [&](const Eigen::VectorXd& t, Eigen::VectorXd* g) {
        Eigen::VectorXd ls = t.head(m).array().exp();
        double sv = std::exp(t[m]);
        double nv = std::exp(t[m + 1]);
        double f = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd gnat;
        if (!eval_lml(X, yc, ls, sv, nv, f, g ? &gnat : nullptr))
            return -std::numeric_limits<double>::infinity();
        if (g) { // chain rule: d/d log(theta) = theta * d/d theta
            g->resize(np);
            g->head(m) = gnat.head(m).array() * ls.array();
            (*g)[m] = gnat[m] * sv;
            (*g)[m + 1] = gnat[m + 1] * nv;
        }
        return f;
    };

    // Projected gradient ascent with doubling/halving step control.
    auto ascend = [&](Eigen::VectorXd t, double& f, int max_iters) {
        Eigen::VectorXd g;
        f = lml_at(t, &g);
        if (!std::isfinite(f)) return t;
        double step = 0.5;
        for (int it = 0; it < max_iters; ++it) {
            double gn = g.norm();
            if (gn < 1e-10) break;
            Eigen::VectorXd dir = g / gn;
            bool accepted = false;
            while (step >= 1e-5) {
                Eigen::VectorXd cand = project(t + step * dir);
                double fc = lml_at(cand, nullptr);
                if (fc > f + 1e-12 * (1.0 + std::abs(f))) {
                    t = cand;
                    f = fc;
                    accepted = true;
                    step = std::min(step * 2.0, 1.0);
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break;
            lml_at(t, &g);
        }
        return t;
    };

    const int restarts = 8;
    Rng rng(seed);
    std::vector<Eigen::VectorXd> starts;
    starts.reserve(restarts);
    {
        Eigen::VectorXd t0(np);
        t0.head(m).setConstant(std::log(0.5));
        t0[m] = std::log(std::clamp(var_y, b.sv_lo, b.sv_hi));
        t0[m + 1] = std::log(std::clamp(0.01 * var_y + 1e-6, b.nv_lo, b.nv_hi));
        starts.push_back(project(std::move(t0)));
    }
    for (int r = 1; r < restarts; ++r) {
        Eigen::VectorXd t(np);
        for (Eigen::Index i = 0; i < np; ++i) t[i] = lo[i] + rng.uniform() * (hi[i] - lo[i]);
        starts.push_back(std::move(t));
    }

    if (report) report->start_lml.clear();
    double best_f = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_t = starts[0];
    // Short ascent from every start, long ascent from the best prefix; the
    // returned optimum dominates every starting point either way.
    std::vector<std::pair<double, Eigen::VectorXd>> phase_a;
    for (const auto& s : starts) {
        if (report) report->start_lml.push_back(lml_at(s, nullptr));
        double f = 0.0;
        Eigen::VectorXd t = ascend(s, f, 6);
        phase_a.emplace_back(f, std::move(t));
        if (f > best_f) {
            best_f = f;
            best_t = phase_a.back().second;
        }
    }
    {
        double f = 0.0;
        Eigen::VectorXd t = ascend(best_t, f, 24);
        if (f > best_f) {
            best_f = f;
            best_t = std::move(t);
        }
    }

    GpHyperparams hyper;
    hyper.lengthscales = best_t.head(m).array().exp();
    hyper.signal_variance = std::exp(best_t[m]);
    hyper.noise_variance = std::exp(best_t[m + 1]);
    hyper.mean_const = mean_y;
    GpModel model = make_model(hyper, X, y);
    if (report) report->final_lml = log_marginal_likelihood(model);
    return model;
}

} // namespace tune
