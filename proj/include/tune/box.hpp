#pragma once

#include <Eigen/Dense>

#include "tune/rng.hpp"

namespace tune {

/// Axis-aligned bounds of an active search space.
struct Box {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;

    static Box unit(Eigen::Index m) {
        return Box{Eigen::VectorXd::Zero(m), Eigen::VectorXd::Ones(m)};
    }
    static Box symmetric(Eigen::Index m, double half_width) {
        return Box{Eigen::VectorXd::Constant(m, -half_width),
                   Eigen::VectorXd::Constant(m, half_width)};
    }

    Eigen::Index dim() const { return lo.size(); }

    Eigen::VectorXd clip(Eigen::VectorXd v) const { return v.cwiseMax(lo).cwiseMin(hi); }

    Eigen::VectorXd sample(Rng& rng) const {
        Eigen::VectorXd v(dim());
        for (Eigen::Index i = 0; i < dim(); ++i) v[i] = lo[i] + rng.uniform() * (hi[i] - lo[i]);
        return v;
    }

    bool contains(const Eigen::VectorXd& v, double tol = 0.0) const {
        return (v.array() >= lo.array() - tol).all() && (v.array() <= hi.array() + tol).all();
    }
};

} // namespace tune
