#ifndef STEERLAB_SYNTHETIC_HPP
#define STEERLAB_SYNTHETIC_HPP

#include <cstdint>
#include <numeric>
#include <vector>

#include "steerlab/concept_space.hpp"
#include "steerlab/core_lm.hpp"
#include "steerlab/rng.hpp"

namespace steerlab::synthetic {

inline Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
    return m;
}

inline Vector gaussian_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
    return gaussian_matrix(rng, n, 1, scale).col(0);
}

struct AlignedInstance {
    UnembeddingModel model;
    ConceptSpec spec;
};

/// Random model whose unembeddings are exactly aligned with a random concept vector.
///
/// Tokens [0, n_c1) form c1 and the rest form c2. Each unembedding column is moved
/// along ell until U(v)^T ell equals p (c1) or p - d (c2), so alignment holds to
/// rounding for any vocabulary size, including |V| > d.
inline AlignedInstance aligned_instance(Rng& rng, Eigen::Index dim, std::size_t vocab, std::size_t n_c1, double p,
                                        double d, double scale = 1.0) {
    STEERLAB_REQUIRE(n_c1 >= 1 && n_c1 < vocab, "c1 must be a proper non-empty subset");
    Vector ell = gaussian_vector(rng, dim);
    ell /= ell.norm();
    Matrix U = gaussian_matrix(rng, dim, static_cast<Eigen::Index>(vocab), scale);
    Matrix E = gaussian_matrix(rng, dim, static_cast<Eigen::Index>(vocab));

    ConceptSpec spec;
    spec.name = "synthetic";
    spec.p = p;
    spec.d = d;
    spec.ell = ell;
    for (std::size_t v = 0; v < vocab; ++v) {
        const bool first = v < n_c1;
        (first ? spec.c1 : spec.c2).push_back(v);
        const double target = first ? p : p - d;
        auto col = U.col(static_cast<Eigen::Index>(v));
        col += (target - col.dot(ell)) * ell;
    }
    return {UnembeddingModel(std::move(E), std::move(U)), std::move(spec)};
}

} // namespace steerlab::synthetic

#endif // STEERLAB_SYNTHETIC_HPP
