#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "steerlab/attention_lab.hpp"
#include "steerlab/rng.hpp"
#include "steerlab/synthetic.hpp"
#include "support/oracles.hpp"

using namespace steerlab;
using synthetic::gaussian_matrix;
using synthetic::gaussian_vector;

namespace {

AttentionHead random_head(Rng& rng, Eigen::Index d_emb, Eigen::Index d_attn, Eigen::Index d_out) {
    return AttentionHead(gaussian_matrix(rng, d_out, d_emb), gaussian_matrix(rng, d_attn, d_emb),
                         gaussian_matrix(rng, d_attn, d_emb));
}

} // namespace

TEST(SaForward, ZeroKeyQueryAveragesValues) {
    Rng rng(11);
    const AttentionHead head(gaussian_matrix(rng, 3, 4), Matrix::Zero(2, 4), Matrix::Zero(2, 4));
    const auto s = TokenBlock::context(gaussian_matrix(rng, 4, 3));
    const auto tau = TokenBlock::prompt(gaussian_matrix(rng, 4, 2));
    Matrix joined(4, 5);
    joined << s.columns, tau.columns;
    const Vector expect = head.value() * joined.rowwise().mean();
    for (double omega : {0.01, 1.0, 100.0})
        EXPECT_LE((sa_forward(head, s, tau, omega) - expect).norm(), 1e-12);
}

TEST(SaForward, MatchesNaiveOracle) {
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const auto d = static_cast<Eigen::Index>(rng.uniform_int(2, 8));
        const auto head = random_head(rng, d, rng.uniform_int(1, 6), rng.uniform_int(1, 6));
        const Matrix s = gaussian_matrix(rng, d, rng.uniform_int(1, 8));
        const Matrix tau = gaussian_matrix(rng, d, rng.uniform_int(1, 8));
        const double omega = rng.uniform(0.5, 10.0);
        const auto expect =
            oracle::naive_attention(head.value(), head.key(), head.query(), s, tau, omega);
        const Vector got = sa_forward(head, TokenBlock::context(s), TokenBlock::prompt(tau), omega);
        for (std::size_t i = 0; i < expect.size(); ++i)
            EXPECT_NEAR(got(static_cast<Eigen::Index>(i)), expect[i], 1e-12 * (1.0 + std::abs(expect[i])));
    }
}

TEST(SaForward, SmallOmegaPicksArgmaxColumn) {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const auto head = random_head(rng, 4, 4, 3);
        const Matrix s = gaussian_matrix(rng, 4, 3);
        const Matrix tau = gaussian_matrix(rng, 4, 2);
        Matrix joined(4, 5);
        joined << s, tau;
        const Vector scores = (head.key() * joined).transpose() * (head.query() * tau.col(1));
        Eigen::Index best = 0;
        scores.maxCoeff(&best);
        Vector sorted = scores;
        std::sort(sorted.data(), sorted.data() + sorted.size());
        const double margin = sorted(4) - sorted(3);
        if (margin < 0.05) continue;  // near-ties need an even smaller omega
        const Vector got = sa_forward(head, TokenBlock::context(s), TokenBlock::prompt(tau), 1e-3);
        EXPECT_LE((got - head.value() * joined.col(best)).norm(), 1e-6);
    }
}

TEST(SaForward, RejectsBadInputs) {
    Rng rng(14);
    const auto head = random_head(rng, 3, 2, 3);
    const auto s = TokenBlock::context(gaussian_matrix(rng, 3, 2));
    const auto tau = TokenBlock::prompt(gaussian_matrix(rng, 3, 2));
    EXPECT_THROW(sa_forward(head, s, tau, 0.0), ContractViolation);
    EXPECT_THROW(sa_forward(head, s, tau, -1.0), ContractViolation);
    EXPECT_THROW(sa_forward(head, TokenBlock::context(gaussian_matrix(rng, 4, 2)), tau, 1.0), ContractViolation);
    EXPECT_THROW(TokenBlock::context(Matrix(3, 0)), ContractViolation);
    EXPECT_THROW(AttentionHead(Matrix::Zero(3, 3), Matrix::Zero(2, 3), Matrix::Zero(1, 3)), ContractViolation);
}

TEST(Decompose, IdenticalBlocksSplitEvenly) {
    Rng rng(15);
    const auto head = random_head(rng, 4, 3, 4);
    const Matrix cols = gaussian_matrix(rng, 4, 3);
    const auto d = decompose(head, TokenBlock::context(cols), TokenBlock::prompt(cols), 1.0);
    EXPECT_NEAR(d.alpha, 0.5, 1e-15);
    EXPECT_LE((d.prompt_term - d.context_term).norm(), 1e-12);
}

TEST(Decompose, ZeroLogitAlphaIsPromptFraction) {
    Rng rng(16);
    const AttentionHead head(gaussian_matrix(rng, 3, 3), Matrix::Zero(2, 3), Matrix::Zero(2, 3));
    const auto s = TokenBlock::context(gaussian_matrix(rng, 3, 3));
    const auto tau = TokenBlock::prompt(gaussian_matrix(rng, 3, 2));
    for (double omega : {0.1, 1.0, 10.0}) EXPECT_NEAR(decompose(head, s, tau, omega).alpha, 0.4, 1e-12);
}

TEST(Decompose, ReconstructsForwardPass) {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const auto d = static_cast<Eigen::Index>(rng.uniform_int(2, 16));
        const auto head = random_head(rng, d, rng.uniform_int(1, 8), rng.uniform_int(1, 8));
        const auto s = TokenBlock::context(gaussian_matrix(rng, d, rng.uniform_int(1, 8)));
        const auto tau = TokenBlock::prompt(gaussian_matrix(rng, d, rng.uniform_int(1, 8)));
        const double omega = rng.uniform(0.1, 10.0);
        const Vector full = sa_forward(head, s, tau, omega);
        const auto parts = decompose(head, s, tau, omega);
        EXPECT_LE((parts.reconstruct() - full).norm(), 1e-10 * (1.0 + full.norm()));
        EXPECT_GE(parts.alpha, 0.0);
        EXPECT_LE(parts.alpha, 1.0);
    }
}

TEST(Decompose, TermsLieInConvexHullOfValues) {
    // With one column per block each term is exactly that column's value.
    Rng rng(18);
    const auto head = random_head(rng, 3, 2, 3);
    const Matrix s = gaussian_matrix(rng, 3, 1);
    const Matrix tau = gaussian_matrix(rng, 3, 1);
    const auto parts = decompose(head, TokenBlock::context(s), TokenBlock::prompt(tau), 0.7);
    EXPECT_LE((parts.context_term - head.value() * s).norm(), 1e-12);
    EXPECT_LE((parts.prompt_term - head.value() * tau).norm(), 1e-12);

    // With a scalar value map every term is bounded by the block extremes.
    const AttentionHead scalar(Matrix::Ones(1, 3), gaussian_matrix(rng, 2, 3), gaussian_matrix(rng, 2, 3));
    const Matrix s2 = gaussian_matrix(rng, 3, 6);
    const auto p2 = decompose(scalar, TokenBlock::context(s2), TokenBlock::prompt(tau), 0.5);
    const Eigen::RowVectorXd vals = Matrix::Ones(1, 3) * s2;
    EXPECT_GE(p2.context_term(0), vals.minCoeff() - 1e-12);
    EXPECT_LE(p2.context_term(0), vals.maxCoeff() + 1e-12);
}

TEST(AlphaSweep, OnePointPerOmega) {
    Rng rng(19);
    const auto head = random_head(rng, 3, 3, 3);
    const auto s = TokenBlock::context(gaussian_matrix(rng, 3, 4));
    const auto tau = TokenBlock::prompt(gaussian_matrix(rng, 3, 2));
    const std::vector<double> omegas{0.1, 1.0, 10.0};
    const auto pts = alpha_sweep(head, s, tau, omegas);
    ASSERT_EQ(pts.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(pts[i].omega, omegas[i]);
        EXPECT_EQ(pts[i].alpha, decompose(head, s, tau, omegas[i]).alpha);
    }
    EXPECT_THROW(alpha_sweep(head, s, tau, std::vector<double>{}), ContractViolation);
}

TEST(AlphaSweep, LargeOmegaApproachesUniformFraction) {
    Rng rng(20);
    const auto head = random_head(rng, 3, 3, 3);
    const auto s = TokenBlock::context(gaussian_matrix(rng, 3, 3));
    const auto tau = TokenBlock::prompt(gaussian_matrix(rng, 3, 2));
    EXPECT_NEAR(decompose(head, s, tau, 1e8).alpha, 0.4, 1e-6);
}

TEST(SoftPrompt, SteersToUnitTarget) {
    Rng rng(21);
    const UnembeddingModel model(gaussian_matrix(rng, 4, 10), gaussian_matrix(rng, 4, 10));
    Vector target = Vector::Zero(4);
    target(0) = 1.0;
    const auto sp = construct_soft_prompt(model, target, 3);
    const std::vector<TokenId> ctx{0, 3, 5, 9};
    const auto s = embed_context(model, ctx);
    EXPECT_TRUE(sp.admits(s));
    EXPECT_LE(sp.error(s, 1e-3), 1e-6);
}

TEST(SoftPrompt, BoundUsesLargestEmbedding) {
    Matrix E = Matrix::Zero(2, 3);
    E(0, 1) = 3.0;
    const UnembeddingModel big(E, Matrix::Ones(2, 3));
    EXPECT_DOUBLE_EQ(embedding_bound(big), 4.0);
    const UnembeddingModel small(Matrix::Zero(2, 3) , Matrix::Ones(2, 3));
    EXPECT_DOUBLE_EQ(embedding_bound(small), 2.0);
}

TEST(SoftPrompt, RejectsShortTarget) {
    Rng rng(22);
    const UnembeddingModel model(gaussian_matrix(rng, 3, 5), gaussian_matrix(rng, 3, 5));
    Vector target = Vector::Zero(3);
    target(1) = 0.5;
    EXPECT_THROW(construct_soft_prompt(model, target, 2), ContractViolation);
}

TEST(SoftPrompt, ErrorShrinksAsOmegaFalls) {
    Rng rng(23);
    const std::vector<double> grid{1, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001};
    for (int trial = 0; trial < 100; ++trial) {
        const auto d = static_cast<Eigen::Index>(rng.uniform_int(2, 16));
        const auto vocab = static_cast<std::size_t>(rng.uniform_int(2, 64));
        const UnembeddingModel model(gaussian_matrix(rng, d, static_cast<Eigen::Index>(vocab)),
                                     gaussian_matrix(rng, d, static_cast<Eigen::Index>(vocab)));
        Vector target = gaussian_vector(rng, d);
        target *= rng.uniform(1.0, 5.0) / target.norm();
        while (target.norm() < 1.0) target *= 1.0 + 1e-15;
        const auto sp = construct_soft_prompt(model, target, rng.uniform_int(1, 4));
        std::vector<TokenId> ctx(static_cast<std::size_t>(rng.uniform_int(1, 8)));
        for (auto& t : ctx) t = static_cast<TokenId>(rng.uniform_int(0, static_cast<std::int64_t>(vocab) - 1));
        const auto s = embed_context(model, ctx);
        double prev = std::numeric_limits<double>::infinity();
        for (double w : grid) {
            const double err = sp.error(s, w);
            EXPECT_LE(err, prev);
            prev = err;
        }
    }
}

TEST(EmbedContext, CopiesEmbeddingColumns) {
    Rng rng(24);
    const UnembeddingModel model(gaussian_matrix(rng, 3, 4), gaussian_matrix(rng, 3, 4));
    const std::vector<TokenId> ctx{2, 0, 2};
    const auto s = embed_context(model, ctx);
    ASSERT_EQ(s.size(), 3);
    EXPECT_EQ(s.columns.col(0), model.embedding().col(2));
    EXPECT_EQ(s.columns.col(1), model.embedding().col(0));
    EXPECT_THROW(embed_context(model, std::vector<TokenId>{4}), ContractViolation);
    EXPECT_THROW(embed_context(model, std::vector<TokenId>{}), ContractViolation);
}
