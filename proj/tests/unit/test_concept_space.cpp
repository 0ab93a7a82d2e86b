#include <gtest/gtest.h>

#include <cmath>

#include "steerlab/concept_space.hpp"
#include "steerlab/core_lm.hpp"
#include "steerlab/rng.hpp"
#include "steerlab/synthetic.hpp"
#include "support/oracles.hpp"

using namespace steerlab;
using synthetic::gaussian_matrix;
using synthetic::gaussian_vector;

TEST(SolveRepresentation, IdentityUnembedding) {
    const UnembeddingModel model(Matrix::Zero(2, 2), Matrix::Identity(2, 2));
    const auto sol = solve_representation_vector(model, {0}, {1}, 1.0, 2.0);
    EXPECT_NEAR(sol.ell(0), 1.0, 1e-14);
    EXPECT_NEAR(sol.ell(1), -1.0, 1e-14);
    EXPECT_LE(sol.residual, 1e-14);
    EXPECT_EQ(sol.rank, 2);
}

TEST(SolveRepresentation, UnderdeterminedSystemsSolveExactly) {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const UnembeddingModel model(gaussian_matrix(rng, 8, 6), gaussian_matrix(rng, 8, 6));
        const double p = rng.uniform(0.5, 2.0), d = rng.uniform(0.5, 3.0);
        const auto sol = solve_representation_vector(model, {0, 1, 2}, {3, 4, 5}, p, d);
        EXPECT_LE(sol.residual, 1e-8);
        EXPECT_LE(oracle::system_residual(model.unembedding(), {0, 1, 2}, {3, 4, 5}, p, d, sol.ell), 1e-8);
        ConceptSpec spec{"s", {0, 1, 2}, {3, 4, 5}, p, d, sol.ell};
        EXPECT_TRUE(validate_concept(model, spec).passed);
    }
}

TEST(SolveRepresentation, MinimumNormSolution) {
    // The min-norm solution lies in the row space of A, so it is orthogonal to the null space.
    Rng rng(32);
    const UnembeddingModel model(gaussian_matrix(rng, 6, 3), gaussian_matrix(rng, 6, 3));
    const auto sol = solve_representation_vector(model, {0, 1}, {2}, 1.0, 1.0);
    const Matrix A = model.unembedding().transpose();
    const Vector in_row_space = A.transpose() * (A * A.transpose()).ldlt().solve(A * sol.ell);
    EXPECT_LE((in_row_space - sol.ell).norm(), 1e-10);
}

TEST(SolveRepresentation, OverdeterminedResidualMatchesOracle) {
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        const UnembeddingModel model(gaussian_matrix(rng, 3, 10), gaussian_matrix(rng, 3, 10));
        const TokenSet c1{0, 1, 2, 3, 4}, c2{5, 6, 7, 8, 9};
        const auto sol = solve_representation_vector(model, c1, c2, 1.0, 2.0);
        EXPECT_GT(sol.residual, 1e-6);
        EXPECT_NEAR(sol.residual, oracle::system_residual(model.unembedding(), c1, c2, 1.0, 2.0, sol.ell), 1e-10);
        EXPECT_FALSE(sol.acceptable(1e-8));

        // Least squares: the residual is orthogonal to the columns of A.
        Matrix A(10, 3);
        Vector b(10);
        for (Eigen::Index v = 0; v < 10; ++v) {
            A.row(v) = model.unembedding().col(v).transpose();
            b(v) = v < 5 ? 1.0 : -1.0;
        }
        EXPECT_LE((A.transpose() * (A * sol.ell - b)).norm(), 1e-10);
    }
}

TEST(SolveRepresentation, RejectsBadClasses) {
    const UnembeddingModel model(Matrix::Zero(2, 3), Matrix::Identity(2, 3));
    EXPECT_THROW(solve_representation_vector(model, {0, 1}, {1, 2}, 1.0, 1.0), ContractViolation);
    EXPECT_THROW(solve_representation_vector(model, {}, {1}, 1.0, 1.0), ContractViolation);
    EXPECT_THROW(solve_representation_vector(model, {0}, {5}, 1.0, 1.0), ContractViolation);
    EXPECT_THROW(solve_representation_vector(model, {0}, {1}, 0.0, 1.0), ContractViolation);
}

TEST(ValidateConcept, ToleranceSeparatesSyntheticAndTraceUse) {
    Rng rng(34);
    auto inst = synthetic::aligned_instance(rng, 6, 10, 4, 1.0, 2.0);
    EXPECT_TRUE(validate_concept(inst.model, inst.spec).passed);

    Matrix U = inst.model.unembedding();
    U += 1e-3 * gaussian_matrix(rng, 6, 10) / std::sqrt(6.0);
    const UnembeddingModel noisy(inst.model.embedding(), U);
    const auto strict = validate_concept(noisy, inst.spec);
    EXPECT_FALSE(strict.passed);
    EXPECT_FALSE(strict.issues.empty());

    ConceptSpec loose = inst.spec;
    loose.tol_align = kTraceAlignTol;
    EXPECT_TRUE(validate_concept(noisy, loose).passed);
}

TEST(ValidateConcept, ReportsAlignmentSummaries) {
    Rng rng(35);
    const auto inst = synthetic::aligned_instance(rng, 5, 8, 3, 1.5, 2.5);
    const auto rep = validate_concept(inst.model, inst.spec);
    ASSERT_TRUE(rep.c1 && rep.c2 && rep.gap);
    EXPECT_NEAR(rep.c1->mean, 1.5, 1e-12);
    EXPECT_NEAR(rep.c2->mean, -1.0, 1e-12);
    EXPECT_NEAR(*rep.gap, 2.5, 1e-12);
}

TEST(ValidateConcept, StructuralProblems) {
    const UnembeddingModel model(Matrix::Zero(2, 4), Matrix::Identity(2, 4));
    Vector ell(2);
    ell << 1.0, -1.0;

    ConceptSpec uncovered{"x", {0}, {1}, 1.0, 2.0, ell};
    EXPECT_FALSE(validate_concept(model, uncovered).passed);

    ConceptSpec partial = uncovered;
    partial.partial = true;
    EXPECT_TRUE(validate_concept(model, partial).passed);

    ConceptSpec only_c1{"y", {0}, {}, 1.0, 2.0, ell, true};
    const auto rep = validate_concept(model, only_c1);
    EXPECT_TRUE(rep.passed);
    EXPECT_FALSE(rep.c2.has_value());
    EXPECT_FALSE(rep.gap.has_value());

    ConceptSpec overlap{"z", {0, 1}, {1, 2, 3}, 1.0, 2.0, ell};
    EXPECT_FALSE(validate_concept(model, overlap).passed);

    ConceptSpec bad_d = partial;
    bad_d.d = -1.0;
    EXPECT_FALSE(validate_concept(model, bad_d).passed);

    ConceptSpec wrong_dim = partial;
    wrong_dim.ell = Vector::Ones(3);
    EXPECT_THROW(validate_concept(model, wrong_dim), ContractViolation);
}

TEST(ComposeShift, SingleAndMultipleConcepts) {
    ConceptSpec a{"a", {0}, {1}, 1.0, 1.0, Vector::Unit(3, 0)};
    ConceptSpec b{"b", {0}, {1}, 1.0, 1.0, Vector::Unit(3, 1)};
    Matrix lam(2, 2);
    lam << 1.0, 2.0,
           -0.5, 0.0;
    const ShiftPlan plan({a, b}, lam);
    EXPECT_EQ(plan.rounds(), 2);
    EXPECT_EQ(compose_shift(plan, 1), Vector((Vector(3) << 1.0, 2.0, 0.0).finished()));
    EXPECT_EQ(compose_shift(plan, 2), Vector((Vector(3) << -0.5, 0.0, 0.0).finished()));
    EXPECT_THROW(compose_shift(plan, 0), ContractViolation);
    EXPECT_THROW(compose_shift(plan, 3), ContractViolation);

    const auto single = ShiftPlan::single(a, {0.25, 4.0});
    EXPECT_EQ(compose_shift(single, 2), 4.0 * a.ell);
    EXPECT_THROW(ShiftPlan({a}, Matrix::Ones(2, 2)), ContractViolation);
}

TEST(ComposeShift, LinearInLambdas) {
    Rng rng(36);
    std::vector<ConceptSpec> cs;
    for (int i = 0; i < 3; ++i) cs.push_back({"c", {0}, {1}, 1.0, 1.0, gaussian_vector(rng, 5)});
    const Matrix l1 = gaussian_matrix(rng, 4, 3), l2 = gaussian_matrix(rng, 4, 3);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    const ShiftPlan p1(cs, l1), p2(cs, l2), mix(cs, a * l1 + b * l2);
    for (Eigen::Index t = 1; t <= 4; ++t)
        EXPECT_LE((compose_shift(mix, t) - (a * compose_shift(p1, t) + b * compose_shift(p2, t))).norm(), 1e-12);
}

TEST(ConceptShift, SeparatesClassesByExpLambdaD) {
    // Shifting h by lambda*ell multiplies every c1/c2 probability ratio by e^{lambda d}.
    Rng rng(37);
    for (int trial = 0; trial < 200; ++trial) {
        const double d = rng.uniform(0.2, 3.0);
        const auto inst = synthetic::aligned_instance(rng, 6, 12, 5, 1.0, d);
        const HiddenState h(gaussian_vector(rng, 6));
        const double lambda = rng.uniform(-2.0, 2.0);
        const HiddenState moved(h.h + lambda * inst.spec.ell);
        const auto before = next_token_distribution(inst.model, h);
        const auto after = next_token_distribution(inst.model, moved);
        const TokenId u = inst.spec.c1[static_cast<std::size_t>(rng.uniform_int(0, 4))];
        const TokenId w = inst.spec.c2[static_cast<std::size_t>(rng.uniform_int(0, 6))];
        const double ratio = (after[u] / after[w]) / (before[u] / before[w]);
        EXPECT_NEAR(ratio / std::exp(lambda * d), 1.0, 1e-10);
    }
}

TEST(ValidateConcept, IdentityExampleHasGapD) {
    const UnembeddingModel model(Matrix::Zero(2, 2), Matrix::Identity(2, 2));
    const auto sol = solve_representation_vector(model, {0}, {1}, 1.0, 2.0);
    const auto rep = validate_concept(model, ConceptSpec{"id", {0}, {1}, 1.0, 2.0, sol.ell});
    EXPECT_TRUE(rep.passed);
    EXPECT_NEAR(*rep.gap, 2.0, 1e-14);
}

TEST(ValidateConcept, PassImpliesGapAtLeastDMinusTwoTol) {
    Rng rng(38);
    for (int trial = 0; trial < 200; ++trial) {
        const double d = rng.uniform(0.1, 3.0);
        auto inst = synthetic::aligned_instance(rng, 5, 9, 4, 1.0, d);
        Matrix U = inst.model.unembedding() + 1e-3 * gaussian_matrix(rng, 5, 9);
        ConceptSpec spec = inst.spec;
        spec.tol_align = 0.01;
        const auto rep = validate_concept(UnembeddingModel(inst.model.embedding(), U), spec);
        if (rep.passed) {
            EXPECT_GE(*rep.gap, d - 2 * spec.tol_align);
        }
    }
}

TEST(ComposeShift, ZeroLambdasAndNaiveAccumulation) {
    Rng rng(39);
    std::vector<ConceptSpec> cs;
    for (int i = 0; i < 2; ++i) cs.push_back({"c", {0}, {1}, 1.0, 1.0, gaussian_vector(rng, 6)});
    EXPECT_EQ(compose_shift(ShiftPlan(cs, Matrix::Zero(3, 2)), 2), Vector::Zero(6));

    const Matrix lam = gaussian_matrix(rng, 3, 2);
    const ShiftPlan plan(cs, lam);
    for (Eigen::Index t = 1; t <= 3; ++t) {
        const Vector got = compose_shift(plan, t);
        for (Eigen::Index j = 0; j < 6; ++j) {
            double naive = 0.0;
            for (int i = 0; i < 2; ++i) naive += lam(t - 1, i) * cs[static_cast<std::size_t>(i)].ell(j);
            EXPECT_NEAR(got(j), naive, 1e-14);
        }
    }
}

TEST(ConceptAngles, PairwiseAnglesBetweenVectors) {
    std::vector<ConceptSpec> cs{{"a", {0}, {1}, 1.0, 1.0, Vector::Unit(2, 0)},
                                {"b", {0}, {1}, 1.0, 1.0, Vector::Unit(2, 1)},
                                {"c", {0}, {1}, 1.0, 1.0, -Vector::Unit(2, 0)}};
    const Matrix theta = concept_angles(cs);
    EXPECT_NEAR(theta(0, 0), 0.0, 1e-12);
    EXPECT_NEAR(theta(0, 1), std::acos(0.0), 1e-12);
    EXPECT_NEAR(theta(0, 2), std::acos(-1.0), 1e-12);
    EXPECT_EQ(theta, theta.transpose());
    cs[1].ell.setZero();
    EXPECT_TRUE(std::isnan(concept_angles(cs)(0, 1)));
}
