#include "tune/design.hpp"

#include <numeric>

namespace tune {

std::vector<PointU> lhs(const DesignSpec& spec) {
    if (spec.n_init < 1 || spec.d < 1) raise(Errc::InvalidArgument, "lhs: n_init and d must be >= 1");
    const std::size_t n = spec.n_init;
    std::vector<PointU> points(n);
    for (auto& p : points) p.coords.resize(spec.d);

    Rng rng(spec.seed);
    std::vector<std::size_t> perm(n);
    for (std::size_t j = 0; j < spec.d; ++j) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
        for (std::size_t i = 0; i < n; ++i)
            points[i].coords[j] = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(n);
    }
    return points;
}

PointU uniform_propose(Rng& rng, std::size_t d) {
    PointU p;
    p.coords.resize(d);
    for (auto& c : p.coords) c = rng.uniform();
    return p;
}

} // namespace tune
