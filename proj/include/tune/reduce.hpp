#pragma once

#include <cstdint>
#include <vector>

#include "tune/box.hpp"
#include "tune/space.hpp"

namespace tune {

enum class DrKind { Pca, Rembo, Sa, Shap, None };

struct DrSpec {
    DrKind kind = DrKind::None;
    std::size_t m = 20;             // target active dimension
    std::size_t refresh_every = 10; // iterations between refits (PCA/SA/SHAP)
    std::uint64_t seed = 0;
};

/// Map between the active search space and the full unit hypercube.
/// PCA/REMBO are linear maps (plus clipping); SA/SHAP replace a coordinate
/// subset of the anchor (current incumbent).
struct Embedding {
    DrKind kind = DrKind::None;
    std::size_t full_dim = 0;
    Eigen::MatrixXd basis;  // m x d: PCA principal axes / REMBO projection A
    Eigen::VectorXd center; // d: PCA column mean
    Eigen::MatrixXd pinv;   // m x d: REMBO least-squares back-projection
    std::vector<int> subset;
    PointU anchor;
    Box active_box;
    bool rank_deficient = false;

    std::size_t active_dim() const { return static_cast<std::size_t>(active_box.dim()); }
};

const char* dr_kind_name(DrKind kind);
DrKind dr_kind_from_name(const std::string& name);

/// Principal axes of the observed configurations. Returns fewer axes when
/// the history is rank deficient (flagged). Axis signs are canonicalized so
/// the largest-magnitude loading is positive.
Embedding fit_pca(const Eigen::MatrixXd& X, std::size_t m, std::uint64_t seed);

/// Fixed random Gaussian projection, latent box [-sqrt(m), sqrt(m)]^m.
Embedding make_rembo(std::size_t d, std::size_t m, std::uint64_t seed);

Embedding make_subset(DrKind kind, std::vector<int> subset, std::size_t d, PointU anchor);
Embedding identity_embedding(std::size_t d);

/// Active point -> full-space point in [0,1]^d (always valid; clips).
PointU to_full(const Embedding& emb, const Eigen::VectorXd& z);

/// Full-space point -> active representation (projection; REMBO uses the
/// least-squares preimage). Not clipped.
Eigen::VectorXd to_active(const Embedding& emb, const PointU& x);

// Unit-cube view of the active box, for surrogate inputs.
Eigen::VectorXd unit_from_active(const Embedding& emb, const Eigen::VectorXd& z);
Eigen::VectorXd active_from_unit(const Embedding& emb, const Eigen::VectorXd& u);

/// |Spearman correlation| plus the split-mean gap, per dimension; indices of
/// the top-m scores (ties keep the lower index first).
std::vector<int> rank_sensitivity(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  std::size_t m);

/// Permutation importance on a GP fitted to (X, y): mean increase in squared
/// prediction error over 10 seeded permutations of each column.
std::vector<int> rank_attribution(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  std::size_t m, std::uint64_t seed);

} // namespace tune
