#ifndef STEERLAB_NUMERIC_HPP
#define STEERLAB_NUMERIC_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "steerlab/error.hpp"

namespace steerlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Pairwise (cascade) summation. Result depends only on the input order, so it is
// reproducible across platforms regardless of vectorization.
inline double pairwise_sum(std::span<const double> xs) {
    constexpr std::size_t kBlock = 8;
    if (xs.size() <= kBlock) {
        double acc = 0.0;
        for (double x : xs) acc += x;
        return acc;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
    return m.allFinite();
}

// log(sum_i exp(x_i)); -inf for an empty input.
inline double log_sum_exp(std::span<const double> xs) {
    if (xs.empty()) return -std::numeric_limits<double>::infinity();
    const double mx = *std::max_element(xs.begin(), xs.end());
    if (!std::isfinite(mx)) return mx;
    std::vector<double> shifted(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) shifted[i] = std::exp(xs[i] - mx);
    return mx + std::log(pairwise_sum(shifted));
}

inline double log_sum_exp(const Vector& xs) {
    return log_sum_exp(std::span<const double>(xs.data(), static_cast<std::size_t>(xs.size())));
}

// Softmax with max-logit subtraction.
inline Vector stable_softmax(const Vector& logits) {
    STEERLAB_REQUIRE(logits.size() > 0, "softmax of an empty vector");
    if (!logits.allFinite()) throw NumericError("softmax: non-finite logit");
    const double mx = logits.maxCoeff();
    Vector w = (logits.array() - mx).exp().matrix();
    std::vector<double> terms(w.data(), w.data() + w.size());
    return w / pairwise_sum(terms);
}

// |a - b| / max(|a|, |b|), with 0/0 treated as agreement.
inline double relative_error(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    if (scale == 0.0) return 0.0;
    return std::abs(a - b) / scale;
}

// 1 / (1 + e^{-y}) without overflow in either tail.
inline double logistic(double y) {
    if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
    const double e = std::exp(y);
    return e / (1.0 + e);
}

// Agreement within a relative tolerance, or within an absolute floor far below any
// probability of interest (subnormal results carry no relative precision).
inline constexpr double kUnderflowFloor = 1e-300;

inline bool agrees(double a, double b, double rel_tol) {
    return relative_error(a, b) <= rel_tol || std::abs(a - b) <= kUnderflowFloor;
}

} // namespace steerlab

#endif // STEERLAB_NUMERIC_HPP
