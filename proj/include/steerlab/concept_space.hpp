#ifndef STEERLAB_CONCEPT_SPACE_HPP
#define STEERLAB_CONCEPT_SPACE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/core_lm.hpp"
#include "steerlab/error.hpp"
#include "steerlab/numeric.hpp"

namespace steerlab {

inline constexpr double kSyntheticAlignTol = 1e-8;
inline constexpr double kTraceAlignTol = 1e-2;

/// Binary feature over the vocabulary with its linear representation vector.
///
/// Tokens in c1 should satisfy U(v)^T ell = p and tokens in c2 should satisfy
/// U(v)^T ell = p - d, up to tol_align. A full feature partitions the vocabulary;
/// `partial` allows c1 and c2 to cover only a scored subset.
struct ConceptSpec {
    std::string name;
    TokenSet c1;
    TokenSet c2;
    double p = 1.0;
    double d = 1.0;
    Vector ell;
    bool partial = false;
    double tol_align = kSyntheticAlignTol;
};

// Structural problems with a spec against a vocabulary; empty when none.
inline std::vector<std::string> structural_issues(const ConceptSpec& spec, std::size_t vocab_size) {
    std::vector<std::string> issues;
    if (!(spec.p > 0.0)) issues.push_back("p must be positive");
    if (!(spec.d > 0.0)) issues.push_back("d must be positive");
    if (!(spec.tol_align >= 0.0)) issues.push_back("tol_align must be non-negative");

    std::vector<int> owner(vocab_size, 0);
    for (TokenId v : spec.c1) owner[v] |= 1;
    for (TokenId v : spec.c2) {
        if (owner[v] & 1) {
            issues.push_back("token " + std::to_string(v) + " is in both c1 and c2");
            break;
        }
        owner[v] |= 2;
    }
    if (!spec.partial && std::find(owner.begin(), owner.end(), 0) != owner.end())
        issues.push_back("c1 and c2 do not cover the vocabulary and the spec is not marked partial");
    return issues;
}

struct RepresentationSolution {
    Vector ell;
    double residual = 0.0;   // ||A ell - b||_2
    double condition = 1.0;  // sigma_max / sigma_min over the nonzero singular values
    Eigen::Index rank = 0;

    bool acceptable(double max_residual) const { return residual <= max_residual; }
};

/// Minimum-norm least-squares ell for U(v)^T ell = p (v in c1), U(v)^T ell = p - d (v in c2).
inline RepresentationSolution solve_representation_vector(const UnembeddingModel& model, const TokenSet& c1,
                                                          const TokenSet& c2, double p, double d) {
    STEERLAB_REQUIRE(!c1.empty() && !c2.empty(), "both classes must be non-empty");
    STEERLAB_REQUIRE(p > 0.0 && d > 0.0, "p and d must be positive");
    model.check_tokens(c1);
    model.check_tokens(c2);

    std::vector<char> in_c1(model.vocab_size(), 0);
    for (TokenId v : c1) in_c1[v] = 1;
    for (TokenId v : c2) STEERLAB_REQUIRE(!in_c1[v], "c1 and c2 must be disjoint");

    const auto rows = static_cast<Eigen::Index>(c1.size() + c2.size());
    Matrix A(rows, model.embed_dim());
    Vector b(rows);
    Eigen::Index r = 0;
    for (TokenId v : c1) {
        A.row(r) = model.unembedding_of(v).transpose();
        b(r++) = p;
    }
    for (TokenId v : c2) {
        A.row(r) = model.unembedding_of(v).transpose();
        b(r++) = p - d;
    }

    Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    RepresentationSolution out;
    out.ell = svd.solve(b);
    out.residual = (A * out.ell - b).norm();
    out.rank = svd.rank();
    const Vector& sv = svd.singularValues();
    out.condition = out.rank > 0 ? sv(0) / sv(out.rank - 1) : std::numeric_limits<double>::infinity();
    return out;
}

struct ClassAlignment {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double max_deviation = 0.0;  // max |U(v)^T ell - target|
};

struct ConceptReport {
    std::optional<ClassAlignment> c1;
    std::optional<ClassAlignment> c2;
    std::optional<double> gap;  // min over c1 minus max over c2
    double tol_align = 0.0;
    bool passed = false;
    std::vector<std::string> issues;
};

inline ConceptReport validate_concept(const UnembeddingModel& model, const ConceptSpec& spec) {
    model.check_tokens(spec.c1);
    model.check_tokens(spec.c2);
    STEERLAB_REQUIRE(spec.ell.size() == model.embed_dim(), "ell dimension must equal embed_dim");

    ConceptReport report;
    report.tol_align = spec.tol_align;
    report.issues = structural_issues(spec, model.vocab_size());

    const Vector inner = model.unembedding().transpose() * spec.ell;
    auto summarize = [&](const TokenSet& tokens, double target) -> std::optional<ClassAlignment> {
        if (tokens.empty()) return std::nullopt;
        ClassAlignment a;
        a.min = std::numeric_limits<double>::infinity();
        a.max = -std::numeric_limits<double>::infinity();
        std::vector<double> vals;
        vals.reserve(tokens.size());
        for (TokenId v : tokens) {
            const double x = inner(static_cast<Eigen::Index>(v));
            vals.push_back(x);
            a.min = std::min(a.min, x);
            a.max = std::max(a.max, x);
            a.max_deviation = std::max(a.max_deviation, std::abs(x - target));
        }
        a.mean = pairwise_sum(vals) / static_cast<double>(vals.size());
        return a;
    };

    report.c1 = summarize(spec.c1, spec.p);
    report.c2 = summarize(spec.c2, spec.p - spec.d);
    if (report.c1 && report.c2) report.gap = report.c1->min - report.c2->max;

    if (!spec.ell.allFinite()) report.issues.push_back("ell has non-finite entries");
    if (report.c1 && !(report.c1->max_deviation <= spec.tol_align))
        report.issues.push_back("c1 alignment deviates by " + std::to_string(report.c1->max_deviation));
    if (report.c2 && !(report.c2->max_deviation <= spec.tol_align))
        report.issues.push_back("c2 alignment deviates by " + std::to_string(report.c2->max_deviation));
    if (!report.c1) report.issues.push_back("c1 is empty");

    report.passed = report.issues.empty();
    return report;
}

/// Per-round shift coefficients over a list of concepts; lambdas is rounds x concepts.
struct ShiftPlan {
    std::vector<ConceptSpec> concepts;
    Matrix lambdas;

    ShiftPlan() = default;
    ShiftPlan(std::vector<ConceptSpec> cs, Matrix lam) : concepts(std::move(cs)), lambdas(std::move(lam)) {
        STEERLAB_REQUIRE(lambdas.cols() == static_cast<Eigen::Index>(concepts.size()),
                         "lambda columns must equal the number of concepts");
        STEERLAB_REQUIRE(lambdas.allFinite(), "lambdas must be finite");
        for (std::size_t i = 1; i < concepts.size(); ++i)
            STEERLAB_REQUIRE(concepts[i].ell.size() == concepts[0].ell.size(), "concept vectors must share a dimension");
    }

    // Single-concept plan with one lambda per round.
    static ShiftPlan single(ConceptSpec spec, const std::vector<double>& per_round) {
        Matrix lam(static_cast<Eigen::Index>(per_round.size()), 1);
        for (std::size_t t = 0; t < per_round.size(); ++t) lam(static_cast<Eigen::Index>(t), 0) = per_round[t];
        return ShiftPlan({std::move(spec)}, std::move(lam));
    }

    Eigen::Index rounds() const noexcept { return lambdas.rows(); }
    Eigen::Index dim() const noexcept { return concepts.empty() ? 0 : concepts.front().ell.size(); }
};

// Pairwise angles in radians between concept vectors; NaN where a vector is zero.
inline Matrix concept_angles(const std::vector<ConceptSpec>& concepts) {
    const auto n = static_cast<Eigen::Index>(concepts.size());
    Matrix out = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const Vector& a = concepts[static_cast<std::size_t>(i)].ell;
            const Vector& b = concepts[static_cast<std::size_t>(j)].ell;
            const double denom = a.norm() * b.norm();
            out(i, j) = denom > 0.0 ? std::acos(std::clamp(a.dot(b) / denom, -1.0, 1.0))
                                    : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

// sum_i lambda_{t,i} ell_i for round t in [1, rounds].
inline Vector compose_shift(const ShiftPlan& plan, Eigen::Index t) {
    STEERLAB_REQUIRE(t >= 1 && t <= plan.rounds(), "round index out of range");
    Vector shift = Vector::Zero(plan.dim());
    for (std::size_t i = 0; i < plan.concepts.size(); ++i)
        shift += plan.lambdas(t - 1, static_cast<Eigen::Index>(i)) * plan.concepts[i].ell;
    return shift;
}

} // namespace steerlab

#endif // STEERLAB_CONCEPT_SPACE_HPP
