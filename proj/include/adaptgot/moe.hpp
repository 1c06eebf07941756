#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "adaptgot/got_repr.hpp"
#include "adaptgot/rng.hpp"
#include "adaptgot/tensor.hpp"

namespace adaptgot {

inline constexpr std::size_t kNumExperts = 4;

enum class FusionActivation { Sigmoid, Tanh, Identity };

inline FusionActivation parse_fusion_activation(const std::string& s) {
    if (s == "sigmoid") return FusionActivation::Sigmoid;
    if (s == "tanh") return FusionActivation::Tanh;
    if (s == "identity") return FusionActivation::Identity;
    throw ValidationError("fusion_activation must be sigmoid, tanh or identity (got '" + s + "')");
}

inline const char* fusion_activation_name(FusionActivation a) {
    switch (a) {
        case FusionActivation::Sigmoid: return "sigmoid";
        case FusionActivation::Tanh: return "tanh";
        case FusionActivation::Identity: return "identity";
    }
    return "?";
}

/// Noisy top-k gate weights: clean scores x W_g, noise scale softplus(x W_n).
struct GateParams {
    ad::Parameter w_g;
    ad::Parameter w_n;
    std::size_t experts_kept = 2;

    static GateParams init(const std::string& prefix, std::size_t in_dim, std::size_t experts_kept, Rng& rng) {
        if (experts_kept < 1 || experts_kept > kNumExperts)
            throw ValidationError("experts_kept must be in [1, 4]");
        return {init_uniform(prefix + ".w_g", in_dim, kNumExperts, in_dim, rng),
                init_uniform(prefix + ".w_n", in_dim, kNumExperts, in_dim, rng), experts_kept};
    }

    std::vector<ad::Parameter*> parameters() { return {&w_g, &w_n}; }
};

/// Row-wise mask of the `kept` largest entries; ties go to the lower column.
inline ad::Tensor top_k_mask(const ad::Tensor& scores, std::size_t kept) {
    ad::Tensor mask(scores.rows(), scores.cols());
    std::vector<std::size_t> order(scores.cols());
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores(r, a) > scores(r, b); });
        for (std::size_t k = 0; k < std::min(kept, order.size()); ++k) mask(r, order[k]) = 1.0;
    }
    return mask;
}

struct GateOutput {
    ad::Var scores;   // N x 4 noisy scores
    ad::Var weights;  // N x 4 sparse gate, kept entries sum to 1
    ad::Var dense;    // N x 4 softmax over all experts (reference fusion)
    ad::Tensor kept;  // N x 4 0/1
    ad::Tensor noise; // N x 4 standard-normal draws used (zeros in eval)
};

/// Q = x W_g + eps * softplus(x W_n); G = softmax over the top-k of Q.
inline GateOutput gate_forward(const GateParams& p, ad::Var gate_input, ad::Tensor noise) {
    auto& t = *gate_input.tape();
    if (!noise.same_shape(ad::Tensor(gate_input.rows(), kNumExperts)))
        throw ValidationError("gate noise must be N x 4, got " + noise.shape_str());
    const auto clean = ad::matmul(gate_input, t.param(p.w_g));
    const auto spread = ad::softplus(ad::matmul(gate_input, t.param(p.w_n)));
    const auto scores = ad::add(clean, ad::mul(t.constant(noise), spread));
    auto kept = top_k_mask(scores.value(), p.experts_kept);
    const auto weights = ad::masked_softmax_rows(scores, kept);
    return {scores, weights, ad::softmax_rows(scores), std::move(kept), std::move(noise)};
}

/// Per-node gate weights and the noise that produced them.
struct GateDecision {
    std::array<double, kNumExperts> weights{};
    std::array<double, kNumExperts> noise{};
};

/// Gate for a single node feature. In eval mode the noise is forced to zero.
inline GateDecision gate(const GateParams& p, std::span<const double> x_enh,
                         const std::array<double, kNumExperts>& eps, bool train) {
    ad::Tape tape;
    const auto x = tape.constant(ad::Tensor(1, x_enh.size(), std::vector<double>(x_enh.begin(), x_enh.end())));
    ad::Tensor noise(1, kNumExperts);
    if (train)
        for (std::size_t o = 0; o < kNumExperts; ++o) noise[o] = eps[o];
    const auto out = gate_forward(p, x, noise);
    GateDecision d;
    for (std::size_t o = 0; o < kNumExperts; ++o) {
        d.weights[o] = out.weights.value()[o];
        d.noise[o] = noise[o];
    }
    return d;
}

/// Sum over experts of gate_o * z_o (pre-activation fusion).
inline ad::Var gated_sum(ad::Var gate_weights, const std::vector<ad::Var>& expert_outputs) {
    if (expert_outputs.size() != gate_weights.cols())
        throw ValidationError("gated_sum: " + std::to_string(expert_outputs.size()) + " experts for gate " +
                              gate_weights.value().shape_str());
    ad::Var acc;
    for (std::size_t o = 0; o < expert_outputs.size(); ++o) {
        const auto term = ad::mul_col(expert_outputs[o], ad::slice_cols(gate_weights, o, 1));
        acc = o == 0 ? term : ad::add(acc, term);
    }
    return acc;
}

inline ad::Var activate(ad::Var x, FusionActivation a) {
    switch (a) {
        case FusionActivation::Sigmoid: return ad::sigmoid(x);
        case FusionActivation::Tanh: return ad::tanh(x);
        case FusionActivation::Identity: return x;
    }
    return x;
}

/// h'_i = act(sum_o g_o z_{i,o}).
inline ad::Var fuse(ad::Var gate_weights, const std::vector<ad::Var>& expert_outputs,
                    FusionActivation act = FusionActivation::Sigmoid) {
    return activate(gated_sum(gate_weights, expert_outputs), act);
}

/// Softmax of the mean-pooled node vectors (1 x d).
inline ad::Var graph_distribution(ad::Var embeddings) { return ad::softmax_rows(ad::col_means(embeddings)); }

inline std::vector<double> graph_distribution(const Matrix& embeddings) {
    ad::Tape tape;
    return graph_distribution(tape.constant(embeddings)).value().data();
}

/// JS divergence (natural log) between two distributions of equal length.
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size() || p.empty())
        throw ValidationError("js_divergence: dimension mismatch " + std::to_string(p.size()) + " vs " +
                              std::to_string(q.size()));
    const auto check = [](std::span<const double> v, const char* name) {
        double s = 0.0;
        for (const double x : v) {
            if (!(x >= 0.0)) throw ValidationError(std::string("js_divergence: negative entry in ") + name);
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-9) throw ValidationError(std::string("js_divergence: ") + name + " not normalized");
    };
    check(p, "p");
    check(q, "q");
    ad::Tape tape;
    const auto pv = tape.constant(ad::Tensor(1, p.size(), std::vector<double>(p.begin(), p.end())));
    const auto qv = tape.constant(ad::Tensor(1, q.size(), std::vector<double>(q.begin(), q.end())));
    return ad::js_divergence(pv, qv).scalar();
}

/// Per-expert sum of gate weights over the batch.
inline ad::Var expert_importance(ad::Var gate_weights) {
    return ad::scale(ad::col_means(gate_weights), static_cast<double>(gate_weights.rows()));
}

/// CV(Imp)^2 with population standard deviation.
inline ad::Var importance_loss(ad::Var gate_weights) { return ad::cv_squared(expert_importance(gate_weights)); }

inline double importance_loss(const Matrix& gate_weights) {
    if (gate_weights.rows() == 0) throw ValidationError("importance_loss: no gated nodes");
    ad::Tape tape;
    return importance_loss(tape.constant(gate_weights)).scalar();
}

}  // namespace adaptgot
