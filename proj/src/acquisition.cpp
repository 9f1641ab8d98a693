#include "tune/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace tune {

AcqSpec default_acq(AcqKind kind, std::size_t active_dim) {
    AcqSpec spec;
    spec.kind = kind;
    spec.xi = 0.01;
    spec.kappa = 2.0;
    double m = static_cast<double>(active_dim);
    spec.dycors.p_init = std::min(1.0, 20.0 / m);
    spec.dycors.sigma_init = 0.2;
    spec.dycors.sigma_min = 0.005;
    spec.dycors.n_cand = static_cast<int>(100 * std::min<std::size_t>(active_dim, 10));
    spec.dycors.fail_tol = std::min(30, std::max(5, static_cast<int>(active_dim / 10)));
    spec.dycors.success_tol = 3;
    return spec;
}

const char* acq_kind_name(AcqKind kind) {
    switch (kind) {
        case AcqKind::Ei: return "EI";
        case AcqKind::Mpi: return "MPI";
        case AcqKind::Ucb: return "UCB";
        case AcqKind::Dycors: return "DYCORS";
    }
    return "?";
}

AcqKind acq_kind_from_name(const std::string& name) {
    if (name == "EI") return AcqKind::Ei;
    if (name == "MPI") return AcqKind::Mpi;
    if (name == "UCB") return AcqKind::Ucb;
    if (name == "DYCORS") return AcqKind::Dycors;
    raise(Errc::ParseError, "unknown acquisition kind '" + name + "'");
}

double norm_pdf(double z) {
    return std::exp(-0.5 * z * z) * 0.39894228040143267793994605993438;
}

double norm_cdf(double z) {
    return 0.5 * std::erfc(-z * 0.70710678118654752440084436210485);
}

double ei(double mu, double var, double best_y, double xi) {
    double gain = mu - best_y - xi;
    if (var <= 0.0) return std::max(gain, 0.0);
    double s = std::sqrt(var);
    double z = gain / s;
    return gain * norm_cdf(z) + s * norm_pdf(z);
}

double mpi(double mu, double var, double best_y, double xi) {
    double gain = mu - best_y - xi;
    if (var <= 0.0) return gain > 0.0 ? 1.0 : 0.0;
    return norm_cdf(gain / std::sqrt(var));
}

double ucb(double mu, double var, double kappa) {
    return mu + kappa * std::sqrt(std::max(var, 0.0));
}

namespace {

Eigen::VectorXd score_batch(const GpModel& model, const AcqSpec& acq, const Eigen::MatrixXd& Xq) {
    Eigen::VectorXd mu, var;
    predict(model, Xq, mu, var);
    double best = model.best_y();
    Eigen::VectorXd s(Xq.rows());
    switch (acq.kind) {
        case AcqKind::Ei:
            for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = ei(mu[i], var[i], best, acq.xi);
            break;
        case AcqKind::Mpi:
            for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = mpi(mu[i], var[i], best, acq.xi);
            break;
        case AcqKind::Ucb:
            for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = ucb(mu[i], var[i], acq.kappa);
            break;
        case AcqKind::Dycors:
            raise(Errc::InvalidArgument, "DYCORS has no pointwise acquisition value");
    }
    return s;
}

Eigen::Index argmax_by_index(const Eigen::VectorXd& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

} // namespace

Eigen::VectorXd propose_surrogate(const GpModel& model, const AcqSpec& acq, const Box& box,
                                  Rng& rng) {
    if (model.n() < 1) raise(Errc::ModelUnavailable, "propose_surrogate: empty model");
    const Eigen::Index m = model.input_dim();
    if (box.dim() != m) raise(Errc::DimensionMismatch, "propose_surrogate: box dim != model dim");

    constexpr int kRaw = 2048;
    constexpr int kLocal = 10;
    constexpr double kLocalSigma = 0.1;
    constexpr int kPatternSteps = 50;
    constexpr double kPatternStep0 = 0.05;

    Eigen::Index inc = argmax_by_index(model.y);
    Eigen::VectorXd incumbent = model.X.row(inc).transpose();

    Eigen::MatrixXd cand(kRaw + kLocal, m);
    for (int i = 0; i < kRaw; ++i) cand.row(i) = box.sample(rng).transpose();
    for (int i = 0; i < kLocal; ++i) {
        Eigen::VectorXd p = incumbent;
        for (Eigen::Index j = 0; j < m; ++j) p[j] += kLocalSigma * rng.normal();
        cand.row(kRaw + i) = box.clip(p).transpose();
    }

    Eigen::VectorXd scores = score_batch(model, acq, cand);
    Eigen::Index best = argmax_by_index(scores);
    Eigen::VectorXd x = cand.row(best).transpose();
    double fx = scores[best];

    // Pattern-search refinement: probe +-step along every coordinate from
    // the current base, take the best improving probe, halve the step when
    // none improves.
    double step = kPatternStep0;
    Eigen::MatrixXd probes(2 * m, m);
    for (int it = 0; it < kPatternSteps && step >= 1e-4; ++it) {
        for (Eigen::Index j = 0; j < m; ++j) {
            Eigen::VectorXd up = x, dn = x;
            up[j] += step;
            dn[j] -= step;
            probes.row(2 * j) = box.clip(up).transpose();
            probes.row(2 * j + 1) = box.clip(dn).transpose();
        }
        Eigen::VectorXd ps = score_batch(model, acq, probes);
        Eigen::Index pb = argmax_by_index(ps);
        if (ps[pb] > fx) {
            x = probes.row(pb).transpose();
            fx = ps[pb];
        } else {
            step *= 0.5;
        }
    }
    return box.clip(x);
}

double dycors_perturb_prob(const DycorsParams& params, std::size_t iteration, std::size_t budget,
                           std::size_t m) {
    double p = params.p_init *
               (1.0 - std::log(static_cast<double>(iteration) + 1.0) /
                          std::log(static_cast<double>(budget) + 1.0));
    return std::max(p, 1.0 / static_cast<double>(m));
}

Eigen::MatrixXd dycors_candidates(const Eigen::VectorXd& incumbent, const Box& box, double p,
                                  double sigma, int n_cand, Rng& rng) {
    const Eigen::Index m = incumbent.size();
    Eigen::MatrixXd cand(n_cand, m);
    for (int i = 0; i < n_cand; ++i) {
        Eigen::VectorXd x = incumbent;
        bool any = false;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (rng.uniform() < p) {
                x[j] += sigma * rng.normal();
                any = true;
            }
        }
        if (!any) {
            Eigen::Index j = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(m)));
            x[j] += sigma * rng.normal();
        }
        cand.row(i) = box.clip(x).transpose();
    }
    return cand;
}

Eigen::VectorXd propose_dycors(const GpModel& model, const DycorsParams& params,
                               const Eigen::VectorXd& incumbent, const Box& box, Rng& rng,
                               std::size_t iteration, std::size_t budget, double sigma) {
    const Eigen::Index m = incumbent.size();
    if (m == 0) raise(Errc::NoIncumbent, "propose_dycors: no incumbent");
    if (model.input_dim() != m) raise(Errc::DimensionMismatch, "propose_dycors: dim mismatch");

    const double p = dycors_perturb_prob(params, iteration, budget, static_cast<std::size_t>(m));
    const int n_cand = std::max(1, params.n_cand);
    Eigen::MatrixXd cand = dycors_candidates(incumbent, box, p, sigma, n_cand, rng);

    // Merit: weighted rank of predicted mean (exploit) and of distance to
    // the training data (explore); the weight cycles every iteration.
    Eigen::MatrixXd Ks = kernel_matrix(model.hyper, model.X, cand);
    Eigen::VectorXd mu = (Ks.transpose() * model.alpha).array() + model.hyper.mean_const;

    Eigen::VectorXd min_dist(n_cand);
    for (int i = 0; i < n_cand; ++i) {
        min_dist[i] =
            (model.X.rowwise() - cand.row(i)).rowwise().squaredNorm().minCoeff();
    }

    auto ranks_desc = [](const Eigen::VectorXd& v) {
        std::vector<int> idx(static_cast<std::size_t>(v.size()));
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] > v[b]; });
        std::vector<double> rank(idx.size());
        for (std::size_t pos = 0; pos < idx.size(); ++pos) rank[static_cast<std::size_t>(idx[pos])] = static_cast<double>(pos);
        return rank;
    };
    std::vector<double> rank_mu = ranks_desc(mu);
    std::vector<double> rank_dist = ranks_desc(min_dist);

    static constexpr double kWeights[4] = {0.3, 0.5, 0.8, 0.95};
    const double w = kWeights[iteration % 4];

    int best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n_cand; ++i) {
        double score = w * rank_mu[static_cast<std::size_t>(i)] +
                       (1.0 - w) * rank_dist[static_cast<std::size_t>(i)];
        if (score < best_score) {
            best_score = score;
            best = i;
        }
    }
    return cand.row(best).transpose();
}

void dycors_update(DycorsState& state, bool improved, const DycorsParams& params) {
    if (improved) {
        state.success_streak += 1;
        state.fail_streak = 0;
        if (state.success_streak >= params.success_tol) {
            state.sigma = std::min(state.sigma * 2.0, params.sigma_init);
            state.success_streak = 0;
        }
    } else {
        state.fail_streak += 1;
        state.success_streak = 0;
        if (state.fail_streak >= params.fail_tol) {
            state.sigma = std::max(state.sigma * 0.5, params.sigma_min);
            state.fail_streak = 0;
        }
    }
}

} // namespace tune
