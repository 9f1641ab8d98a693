#pragma once

#include <cstdint>
#include <vector>

#include "tune/rng.hpp"
#include "tune/space.hpp"

namespace tune {

struct DesignSpec {
    std::size_t n_init = 30;
    std::size_t d = 1;
    std::uint64_t seed = 0;
};

/// Latin Hypercube design: per dimension, one sample in each of n_init
/// equal strata, stratum order shuffled independently per dimension.
std::vector<PointU> lhs(const DesignSpec& spec);

/// One i.i.d. Uniform[0,1)^d draw, advancing the generator.
PointU uniform_propose(Rng& rng, std::size_t d);

} // namespace tune
