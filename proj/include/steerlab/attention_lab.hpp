#ifndef STEERLAB_ATTENTION_LAB_HPP
#define STEERLAB_ATTENTION_LAB_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/core_lm.hpp"
#include "steerlab/error.hpp"
#include "steerlab/numeric.hpp"

namespace steerlab {

/// Single self-attention head with value, key and query projections.
///
/// W_v is d_out x d_emb; W_k and W_q are d_attn x d_emb.
class AttentionHead {
public:
    AttentionHead(Matrix w_v, Matrix w_k, Matrix w_q)
        : W_v_(std::move(w_v)), W_k_(std::move(w_k)), W_q_(std::move(w_q)) {
        STEERLAB_REQUIRE(W_v_.rows() > 0 && W_v_.cols() > 0 && W_k_.rows() > 0, "head matrices must be non-empty");
        STEERLAB_REQUIRE(W_k_.rows() == W_q_.rows(), "W_k and W_q must share d_attn");
        STEERLAB_REQUIRE(W_v_.cols() == W_k_.cols() && W_k_.cols() == W_q_.cols(),
                         "W_v, W_k and W_q must share d_emb");
        STEERLAB_REQUIRE(W_v_.allFinite() && W_k_.allFinite() && W_q_.allFinite(), "head entries must be finite");
    }

    Eigen::Index d_emb() const noexcept { return W_v_.cols(); }
    Eigen::Index d_attn() const noexcept { return W_k_.rows(); }
    Eigen::Index d_out() const noexcept { return W_v_.rows(); }

    const Matrix& value() const noexcept { return W_v_; }
    const Matrix& key() const noexcept { return W_k_; }
    const Matrix& query() const noexcept { return W_q_; }

private:
    Matrix W_v_;
    Matrix W_k_;
    Matrix W_q_;
};

enum class BlockRole { context, prompt };

// A run of token columns in embedding space (d_emb x n, n >= 1).
struct TokenBlock {
    Matrix columns;
    BlockRole role = BlockRole::context;

    TokenBlock(Matrix cols, BlockRole r) : columns(std::move(cols)), role(r) {
        STEERLAB_REQUIRE(columns.cols() >= 1, "token block needs at least one column");
        STEERLAB_REQUIRE(columns.allFinite(), "token block entries must be finite");
    }

    static TokenBlock context(Matrix cols) { return {std::move(cols), BlockRole::context}; }
    static TokenBlock prompt(Matrix cols) { return {std::move(cols), BlockRole::prompt}; }

    Eigen::Index size() const noexcept { return columns.cols(); }
    auto last() const { return columns.col(columns.cols() - 1); }
};

struct Decomposition {
    double alpha = 0.0;
    Vector prompt_term;
    Vector context_term;
    double omega = 1.0;

    Vector reconstruct() const { return alpha * prompt_term + (1.0 - alpha) * context_term; }
};

namespace detail {

inline void check_attention_inputs(const AttentionHead& head, const TokenBlock& s, const TokenBlock& tau, double omega) {
    STEERLAB_REQUIRE(omega > 0.0 && std::isfinite(omega), "omega must be a positive finite real");
    STEERLAB_REQUIRE(s.columns.rows() == head.d_emb(), "context rows must equal d_emb");
    STEERLAB_REQUIRE(tau.columns.rows() == head.d_emb(), "prompt rows must equal d_emb");
}

// Key-query logits of every column in `block` against the query built from the
// last prompt column, scaled by 1/omega.
inline Vector scaled_logits(const AttentionHead& head, const Matrix& block, const Vector& query, double omega) {
    Vector z = (head.key() * block).transpose() * query / omega;
    if (!z.allFinite()) throw NumericError("attention logits are not finite");
    return z;
}

} // namespace detail

/// Output of the head at the last prompt position over the concatenation [s, tau]:
/// W_v [s, tau] softmax((W_k [s, tau])^T W_q tau_N / omega).
inline Vector sa_forward(const AttentionHead& head, const TokenBlock& s, const TokenBlock& tau, double omega) {
    detail::check_attention_inputs(head, s, tau, omega);
    Matrix joined(head.d_emb(), s.size() + tau.size());
    joined << s.columns, tau.columns;
    const Vector query = head.query() * tau.last();
    const Vector weights = stable_softmax(detail::scaled_logits(head, joined, query, omega));
    return (head.value() * joined) * weights;
}

/// Splits the head output into a prompt part and a context part weighted by the
/// fraction of attention mass (alpha) placed on prompt columns.
inline Decomposition decompose(const AttentionHead& head, const TokenBlock& s, const TokenBlock& tau, double omega) {
    detail::check_attention_inputs(head, s, tau, omega);
    const Vector query = head.query() * tau.last();
    const Vector zs = detail::scaled_logits(head, s.columns, query, omega);
    const Vector zt = detail::scaled_logits(head, tau.columns, query, omega);

    // alpha = sum exp(zt) / (sum exp(zs) + sum exp(zt)) = logistic(lse(zt) - lse(zs))
    const double gap = log_sum_exp(zs) - log_sum_exp(zt);

    Decomposition out;
    out.omega = omega;
    out.alpha = 1.0 / (1.0 + std::exp(gap));
    out.prompt_term = (head.value() * tau.columns) * stable_softmax(zt);
    out.context_term = (head.value() * s.columns) * stable_softmax(zs);
    return out;
}

struct AlphaPoint {
    double omega;
    double alpha;
};

inline std::vector<AlphaPoint> alpha_sweep(const AttentionHead& head, const TokenBlock& s, const TokenBlock& tau,
                                           std::span<const double> omegas) {
    STEERLAB_REQUIRE(!omegas.empty(), "alpha_sweep needs at least one omega");
    std::vector<AlphaPoint> out;
    out.reserve(omegas.size());
    for (double w : omegas) out.push_back({w, decompose(head, s, tau, w).alpha});
    return out;
}

/// Head and soft prompt that steer the head output toward a target vector.
///
/// With W_q = W_k = I, W_v = I/B and prompt [0, ..., 0, B*target], the last prompt
/// column wins the attention softmax as omega -> 0 for any context made of model
/// embeddings, so the output tends to the target. Requires ||target|| >= 1 and
/// B = 1 + max(max_v ||E(v)||, 1), which keeps every embedding strictly inside the
/// ball of radius B.
struct SoftPrompt {
    AttentionHead head;
    TokenBlock prompt;
    Vector target;
    double bound;  // B

    // True when every context column is strictly shorter than B.
    bool admits(const TokenBlock& s) const {
        for (Eigen::Index i = 0; i < s.size(); ++i)
            if (!(s.columns.col(i).norm() < bound)) return false;
        return true;
    }

    Vector output(const TokenBlock& s, double omega) const {
        STEERLAB_REQUIRE(admits(s), "context column norm reaches the construction bound B");
        return sa_forward(head, s, prompt, omega);
    }

    double error(const TokenBlock& s, double omega) const { return (output(s, omega) - target).norm(); }
};

inline double embedding_bound(const UnembeddingModel& model) {
    return 1.0 + std::max(model.embedding().colwise().norm().maxCoeff(), 1.0);
}

inline SoftPrompt construct_soft_prompt(const UnembeddingModel& model, const Vector& target, Eigen::Index prompt_len) {
    const Eigen::Index d = model.embed_dim();
    STEERLAB_REQUIRE(prompt_len >= 1, "prompt length must be positive");
    STEERLAB_REQUIRE(target.size() == d, "target dimension must equal embed_dim");
    STEERLAB_REQUIRE(target.allFinite(), "target must be finite");
    STEERLAB_REQUIRE(target.norm() >= 1.0, "target norm must be at least 1");

    const double bound = embedding_bound(model);
    const Matrix identity = Matrix::Identity(d, d);
    Matrix tau = Matrix::Zero(d, prompt_len);
    tau.col(prompt_len - 1) = bound * target;

    return SoftPrompt{AttentionHead(identity / bound, identity, identity), TokenBlock::prompt(std::move(tau)), target,
                      bound};
}

// Context block made of the embedding columns of the given tokens.
inline TokenBlock embed_context(const UnembeddingModel& model, std::span<const TokenId> tokens) {
    STEERLAB_REQUIRE(!tokens.empty(), "context needs at least one token");
    model.check_tokens(tokens);
    Matrix cols(model.embed_dim(), static_cast<Eigen::Index>(tokens.size()));
    for (std::size_t i = 0; i < tokens.size(); ++i) cols.col(static_cast<Eigen::Index>(i)) = model.embedding_of(tokens[i]);
    return TokenBlock::context(std::move(cols));
}

} // namespace steerlab

#endif // STEERLAB_ATTENTION_LAB_HPP
