#ifndef STEERLAB_CORRECTION_SIM_HPP
#define STEERLAB_CORRECTION_SIM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steerlab/concept_space.hpp"
#include "steerlab/core_lm.hpp"
#include "steerlab/error.hpp"
#include "steerlab/numeric.hpp"
#include "steerlab/rng.hpp"

namespace steerlab {

inline constexpr double kExactTolerance = 1e-10;

// states[0] is the initial state; states[k] is the state after k prompt-induced shifts.
struct Trajectory {
    HiddenState h0;
    ShiftPlan plan;
    std::vector<HiddenState> states;

    const HiddenState& final_state() const { return states.back(); }
};

inline Trajectory roll_trajectory(const HiddenState& h0, const ShiftPlan& plan) {
    STEERLAB_REQUIRE(plan.concepts.empty() || plan.dim() == h0.dim(), "plan dimension must equal hidden-state dimension");
    Trajectory traj{h0, plan, {}};
    traj.states.reserve(static_cast<std::size_t>(plan.rounds()) + 1);
    traj.states.push_back(h0);
    for (Eigen::Index t = 1; t <= plan.rounds(); ++t)
        traj.states.emplace_back(traj.states.back().h + compose_shift(plan, t));
    return traj;
}

/// Quantities of the output-concentration bound for one single-concept schedule.
///
/// gamma_j = sum_{v in c_j} exp(U(v)^T h0), r = gamma2 / gamma1 and x = sum_t lambda_t d.
/// Under exact alignment Pr(c1) = 1 / (1 + r e^{-x}); for x > -1 this exceeds
/// 1 / (1 + r / (1 + x)), which gives Pr(c2) < eps once x >= (r - (r + 1) eps) / eps.
struct ConcentrationReport {
    double lambda_total = 0.0;
    double cum_shift = 0.0;
    double log_gamma1 = 0.0;
    double log_gamma2 = 0.0;
    double gamma1 = 0.0;
    double gamma2 = 0.0;
    double r = 0.0;
    double p_c1_exact = 0.0;
    double p_c2_exact = 0.0;
    std::optional<double> p_c1_lower_bound;  // absent when cum_shift <= -1
    double epsilon = 0.0;
    double threshold = 0.0;
    bool satisfied = false;

    // Brute-force softmax at the final trajectory state.
    double p_c1_bruteforce = 0.0;
    double p_c2_bruteforce = 0.0;
    double exact_rel_error = 0.0;
    bool exact_ok = false;

    // Soundness of the threshold: satisfied implies brute-force Pr(c2) < epsilon.
    bool sound() const { return !satisfied || p_c2_bruteforce < epsilon; }
};

inline double concentration_threshold(double r, double epsilon) {
    return (r - (r + 1.0) * epsilon) / epsilon;
}

namespace detail {

inline void require_theorem_inputs(const UnembeddingModel& model, const ConceptSpec& spec, const HiddenState& h0,
                                   double epsilon) {
    STEERLAB_REQUIRE(epsilon > 0.0 && epsilon < 1.0, "epsilon must lie in (0, 1)");
    STEERLAB_REQUIRE(h0.dim() == model.embed_dim(), "h0 dimension must equal embed_dim");
    STEERLAB_REQUIRE(!spec.partial, "concentration analysis requires a full binary partition");
    STEERLAB_REQUIRE(!spec.c2.empty(), "c2 must be non-empty");
    const ConceptReport check = validate_concept(model, spec);
    if (!check.passed) {
        std::string msg = "validate_concept failed for '" + spec.name + "'";
        for (const auto& issue : check.issues) msg += "; " + issue;
        throw VerificationFailure(msg);
    }
}

inline ConcentrationReport concentration_unchecked(const UnembeddingModel& model, const ConceptSpec& spec,
                                                   const HiddenState& h0, const std::vector<double>& lambdas,
                                                   double epsilon, double tol_exact) {
    ConcentrationReport rep;
    rep.epsilon = epsilon;
    rep.lambda_total = pairwise_sum(lambdas);
    rep.cum_shift = rep.lambda_total * spec.d;

    const ClassMass m1 = class_mass(model, h0, spec.c1);
    const ClassMass m2 = class_mass(model, h0, spec.c2);
    rep.log_gamma1 = m1.log_mass;
    rep.log_gamma2 = m2.log_mass;
    rep.gamma1 = m1.mass();
    rep.gamma2 = m2.mass();
    const double log_r = m2.log_mass - m1.log_mass;
    rep.r = std::exp(log_r);

    rep.p_c1_exact = logistic(rep.cum_shift - log_r);
    rep.p_c2_exact = logistic(log_r - rep.cum_shift);
    if (rep.cum_shift > -1.0) rep.p_c1_lower_bound = 1.0 / (1.0 + rep.r / (1.0 + rep.cum_shift));
    rep.threshold = concentration_threshold(rep.r, epsilon);
    rep.satisfied = rep.cum_shift >= rep.threshold;

    const Trajectory traj = roll_trajectory(h0, ShiftPlan::single(spec, lambdas));
    const TokenDistribution dist = next_token_distribution(model, traj.final_state());
    rep.p_c1_bruteforce = set_probability(dist, spec.c1);
    rep.p_c2_bruteforce = set_probability(dist, spec.c2);
    rep.exact_rel_error = std::max(relative_error(rep.p_c1_bruteforce, rep.p_c1_exact),
                                   relative_error(rep.p_c2_bruteforce, rep.p_c2_exact));
    rep.exact_ok = agrees(rep.p_c1_bruteforce, rep.p_c1_exact, tol_exact) &&
                   agrees(rep.p_c2_bruteforce, rep.p_c2_exact, tol_exact);
    return rep;
}

} // namespace detail

/// Closed-form and brute-force class probabilities after the per-round shifts
/// `lambdas` along the concept vector, starting from h0. The spec must pass
/// validate_concept; otherwise the closed form does not apply and a
/// VerificationFailure is thrown.
inline ConcentrationReport concentration_report(const UnembeddingModel& model, const ConceptSpec& spec,
                                                const HiddenState& h0, const std::vector<double>& lambdas,
                                                double epsilon, double tol_exact = kExactTolerance) {
    detail::require_theorem_inputs(model, spec, h0, epsilon);
    return detail::concentration_unchecked(model, spec, h0, lambdas, epsilon, tol_exact);
}

// One report per total lambda in the grid (each applied as a single round).
inline std::vector<ConcentrationReport> sweep_concentration(const UnembeddingModel& model, const ConceptSpec& spec,
                                                            const HiddenState& h0, std::span<const double> lambda_grid,
                                                            double epsilon, double tol_exact = kExactTolerance) {
    STEERLAB_REQUIRE(!lambda_grid.empty(), "lambda grid must be non-empty");
    detail::require_theorem_inputs(model, spec, h0, epsilon);
    std::vector<ConcentrationReport> rows;
    rows.reserve(lambda_grid.size());
    for (double lam : lambda_grid)
        rows.push_back(detail::concentration_unchecked(model, spec, h0, {lam}, epsilon, tol_exact));
    return rows;
}

// Inverse-CDF draw from a discrete distribution; u in [0, 1).
inline TokenId sample_token(std::span<const double> cdf, double u) {
    const double target = u * cdf.back();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
    return static_cast<TokenId>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
}

/// Draws tokens_per_round i.i.d. tokens from the next-token distribution at every
/// trajectory state. Round k uses an mt19937_64 stream seeded with derive_seed(seed, k).
inline std::vector<std::vector<TokenId>> simulate_responses(const UnembeddingModel& model, const Trajectory& traj,
                                                            std::size_t tokens_per_round, std::uint64_t seed) {
    STEERLAB_REQUIRE(tokens_per_round >= 1, "tokens_per_round must be at least 1");
    std::vector<std::vector<TokenId>> out;
    out.reserve(traj.states.size());
    std::vector<double> cdf(model.vocab_size());
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        const TokenDistribution dist = next_token_distribution(model, traj.states[k]);
        double acc = 0.0;
        for (std::size_t v = 0; v < cdf.size(); ++v) cdf[v] = (acc += dist[v]);

        Rng rng(derive_seed(seed, k));
        std::vector<TokenId> tokens(tokens_per_round);
        for (auto& t : tokens) t = sample_token(cdf, rng.uniform());
        out.push_back(std::move(tokens));
    }
    return out;
}

} // namespace steerlab

#endif // STEERLAB_CORRECTION_SIM_HPP
