#ifndef STEERLAB_CORE_LM_HPP
#define STEERLAB_CORE_LM_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/error.hpp"
#include "steerlab/numeric.hpp"

namespace steerlab {

using TokenId = std::size_t;
using TokenSet = std::vector<TokenId>;

// Last-layer output for some context: an opaque vector in the model's hidden space.
struct HiddenState {
    Vector h;

    HiddenState() = default;
    explicit HiddenState(Vector v) : h(std::move(v)) {}

    static HiddenState zeros(Eigen::Index dim) { return HiddenState(Vector::Zero(dim)); }

    Eigen::Index dim() const noexcept { return h.size(); }
};

/// Toy language-model head.
///
/// Stores an embedding matrix E and unembedding matrix U, both d x |V| with one
/// column per token. Logits for a hidden state h are U^T h.
class UnembeddingModel {
public:
    UnembeddingModel(Matrix embedding, Matrix unembedding, std::vector<std::string> labels = {})
        : E_(std::move(embedding)), U_(std::move(unembedding)), labels_(std::move(labels)) {
        STEERLAB_REQUIRE(U_.cols() > 0 && U_.rows() > 0, "model needs vocab_size > 0 and embed_dim > 0");
        STEERLAB_REQUIRE(E_.cols() == U_.cols(), "E and U must have the same number of columns");
        STEERLAB_REQUIRE(E_.rows() == U_.rows(), "E and U must share embed_dim");
        STEERLAB_REQUIRE(E_.allFinite() && U_.allFinite(), "model entries must be finite");
        STEERLAB_REQUIRE(labels_.empty() || labels_.size() == static_cast<std::size_t>(U_.cols()),
                         "labels must be empty or one per token");
    }

    std::size_t vocab_size() const noexcept { return static_cast<std::size_t>(U_.cols()); }
    Eigen::Index embed_dim() const noexcept { return U_.rows(); }

    const Matrix& embedding() const noexcept { return E_; }
    const Matrix& unembedding() const noexcept { return U_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }

    auto embedding_of(TokenId v) const { return E_.col(static_cast<Eigen::Index>(v)); }
    auto unembedding_of(TokenId v) const { return U_.col(static_cast<Eigen::Index>(v)); }

    Vector logits(const HiddenState& state) const {
        STEERLAB_REQUIRE(state.dim() == embed_dim(), "hidden state dimension does not match embed_dim");
        return U_.transpose() * state.h;
    }

    void check_tokens(std::span<const TokenId> tokens) const {
        for (TokenId v : tokens)
            STEERLAB_REQUIRE(v < vocab_size(), "token index " + std::to_string(v) + " out of range");
    }

private:
    Matrix E_;
    Matrix U_;
    std::vector<std::string> labels_;
};

struct TokenDistribution {
    Vector probs;

    std::size_t size() const noexcept { return static_cast<std::size_t>(probs.size()); }
    double operator[](TokenId v) const { return probs(static_cast<Eigen::Index>(v)); }
};

inline TokenDistribution next_token_distribution(const UnembeddingModel& model, const HiddenState& state) {
    const Vector z = model.logits(state);
    if (!z.allFinite()) throw NumericError("next_token_distribution: non-finite logits");
    return TokenDistribution{stable_softmax(z)};
}

// Exponentiated-logit mass of a token set. `log_mass` is -inf for an empty set.
struct ClassMass {
    double log_mass = 0.0;
    double probability = 0.0;  // mass / total mass over the vocabulary

    double mass() const { return std::exp(log_mass); }
};

inline ClassMass class_mass(const UnembeddingModel& model, const HiddenState& state, std::span<const TokenId> tokens) {
    model.check_tokens(tokens);
    const Vector z = model.logits(state);
    if (!z.allFinite()) throw NumericError("class_mass: non-finite logits");

    std::vector<double> selected;
    selected.reserve(tokens.size());
    for (TokenId v : tokens) selected.push_back(z(static_cast<Eigen::Index>(v)));

    ClassMass out;
    out.log_mass = log_sum_exp(selected);
    if (selected.empty()) return out;

    // Ratio of sums shifted by the global max logit; avoids differencing two large logs.
    const double mx = z.maxCoeff();
    std::vector<double> all(static_cast<std::size_t>(z.size()));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = std::exp(z(static_cast<Eigen::Index>(i)) - mx);
    for (double& x : selected) x = std::exp(x - mx);
    out.probability = pairwise_sum(selected) / pairwise_sum(all);
    return out;
}

// Sum of probabilities over a token set, pairwise-summed in the given order.
inline double set_probability(const TokenDistribution& dist, std::span<const TokenId> tokens) {
    std::vector<double> terms;
    terms.reserve(tokens.size());
    for (TokenId v : tokens) {
        STEERLAB_REQUIRE(v < dist.size(), "token index out of range");
        terms.push_back(dist[v]);
    }
    return pairwise_sum(terms);
}

} // namespace steerlab

#endif // STEERLAB_CORE_LM_HPP
