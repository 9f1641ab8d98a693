#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "tune/error.hpp"

namespace tune {

struct GpHyperparams {
    Eigen::VectorXd lengthscales; // ARD, one per input dimension
    double signal_variance = 1.0;
    double noise_variance = 1e-4;
    double mean_const = 0.0;
};

/// Matern-5/2 ARD Gaussian process conditioned on (X, y). Immutable after
/// construction; predictions reuse the cached Cholesky factor.
struct GpModel {
    GpHyperparams hyper;
    Eigen::MatrixXd X; // n x m inputs
    Eigen::VectorXd y; // n targets
    Eigen::MatrixXd chol;  // lower L with L L^T = K + (noise + jitter) I
    Eigen::VectorXd alpha; // (K + noise I)^-1 (y - mean_const)
    double jitter = 0.0;   // diagonal added to reach a successful factorization
    bool degenerate = false;

    Eigen::Index n() const { return X.rows(); }
    Eigen::Index input_dim() const { return X.cols(); }
    double best_y() const { return y.maxCoeff(); }
};

struct FitReport {
    std::vector<double> start_lml; // LML at each restart's starting point
    double final_lml = 0.0;
};

/// Condition a GP with fixed hyperparameters on (X, y). Escalates diagonal
/// jitter through 1e-10..1e-4 if the factorization fails; SingularKernel
/// after that.
GpModel make_model(const GpHyperparams& hyper, Eigen::MatrixXd X, Eigen::VectorXd y);

/// Maximize the log marginal likelihood by multi-start projected gradient
/// ascent in log-hyperparameter space (8 restarts). All-identical targets
/// take the flagged mean-only path.
GpModel fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::uint64_t seed,
            FitReport* report = nullptr);

/// Posterior mean and (latent, noise-free) variance at query rows.
void predict(const GpModel& model, const Eigen::MatrixXd& Xq, Eigen::VectorXd& mu,
             Eigen::VectorXd& var);

double log_marginal_likelihood(const GpModel& model);

/// d LML / d [lengthscales..., signal_variance, noise_variance], natural
/// (non-log) parameterization.
Eigen::VectorXd lml_gradient(const GpModel& model);

/// Kernel matrix under the model's hyperparameters (exposed for reuse by
/// attribution scoring and tests).
Eigen::MatrixXd kernel_matrix(const GpHyperparams& hyper, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B);

} // namespace tune
