#pragma once

#include <cstdint>
#include <string>

#include "tune/box.hpp"
#include "tune/rng.hpp"
#include "tune/surrogate.hpp"

namespace tune {

enum class AcqKind { Ei, Mpi, Ucb, Dycors };

struct DycorsParams {
    double p_init = 1.0;     // initial coordinate-perturbation probability
    double sigma_init = 0.2; // initial step scale
    double sigma_min = 0.005;
    int n_cand = 100;
    int fail_tol = 5;   // consecutive non-improving steps before halving sigma
    int success_tol = 3; // consecutive improving steps before doubling sigma
};

struct AcqSpec {
    AcqKind kind = AcqKind::Ei;
    double xi = 0.01;   // improvement margin (EI/MPI)
    double kappa = 2.0; // UCB exploration weight
    DycorsParams dycors;
};

/// Per-trial DYCORS step-size state, adapted from observation outcomes.
struct DycorsState {
    double sigma = 0.2;
    int fail_streak = 0;
    int success_streak = 0;
};

AcqSpec default_acq(AcqKind kind, std::size_t active_dim);

const char* acq_kind_name(AcqKind kind);
AcqKind acq_kind_from_name(const std::string& name);

double norm_pdf(double z);
double norm_cdf(double z);

// Maximization convention throughout: larger objective values are better.
double ei(double mu, double var, double best_y, double xi);
double mpi(double mu, double var, double best_y, double xi);
double ucb(double mu, double var, double kappa);

/// Argmax of the acquisition over 2048 uniform candidates, 10 local
/// perturbations of the incumbent, then 50 pattern-search refinement steps
/// (step halving from 0.05). Deterministic given the generator state.
Eigen::VectorXd propose_surrogate(const GpModel& model, const AcqSpec& acq, const Box& box,
                                  Rng& rng);

/// Dynamic coordinate search: perturbs a decaying random subset of the
/// incumbent's coordinates and picks the candidate with the best weighted
/// rank of predicted mean and distance to the training data.
Eigen::VectorXd propose_dycors(const GpModel& model, const DycorsParams& params,
                               const Eigen::VectorXd& incumbent, const Box& box, Rng& rng,
                               std::size_t iteration, std::size_t budget, double sigma);

/// Perturbation probability schedule p(t), floored at 1/m.
double dycors_perturb_prob(const DycorsParams& params, std::size_t iteration, std::size_t budget,
                           std::size_t m);

/// Candidate batch for DYCORS: copies of the incumbent with each coordinate
/// perturbed by N(0, sigma^2) with probability p (at least one forced),
/// clipped to the box.
Eigen::MatrixXd dycors_candidates(const Eigen::VectorXd& incumbent, const Box& box, double p,
                                  double sigma, int n_cand, Rng& rng);

/// Step-size adaptation on an observed outcome (failures count as
/// non-improving).
void dycors_update(DycorsState& state, bool improved, const DycorsParams& params);

} // namespace tune
