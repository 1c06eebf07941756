#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "adaptgot/got_repr.hpp"
#include "adaptgot/rng.hpp"
#include "adaptgot/tensor.hpp"

namespace adaptgot {

struct AttentionConfig {
    std::size_t heads = 2;
    std::size_t d_k = 16;
    std::size_t d_model = 32;
    double dropout = 0.1;
    double layernorm_eps = 1e-12;
    /// Replace the projected geo/occ edge terms by ones (plain scaled dot-product attention).
    bool plain = false;
};

struct AttentionHead {
    ad::Parameter wq, wk, wv;
    ad::Parameter geo_proj;  // d_model x d_k
    ad::Parameter occ_proj;  // d_model x d_k
};

/// Parameters of one GOT attention expert.
struct AttentionParams {
    std::vector<AttentionHead> heads;
    ad::Parameter w_o;  // heads*d_k x d_model
    ad::Parameter ln_gain, ln_bias;

    static AttentionParams init(const std::string& prefix, std::size_t d_enh, const AttentionConfig& cfg, Rng& rng) {
        if (cfg.heads * cfg.d_k != cfg.d_model)
            throw ValidationError("attention: heads * d_k must equal d_model (" + std::to_string(cfg.heads) + "*" +
                                  std::to_string(cfg.d_k) + " != " + std::to_string(cfg.d_model) + ")");
        AttentionParams p;
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const auto hp = prefix + ".head" + std::to_string(h);
            p.heads.push_back({init_uniform(hp + ".wq", d_enh, cfg.d_k, d_enh, rng),
                               init_uniform(hp + ".wk", d_enh, cfg.d_k, d_enh, rng),
                               init_uniform(hp + ".wv", d_enh, cfg.d_k, d_enh, rng),
                               init_uniform(hp + ".geo_proj", cfg.d_model, cfg.d_k, cfg.d_model, rng),
                               init_uniform(hp + ".occ_proj", cfg.d_model, cfg.d_k, cfg.d_model, rng)});
        }
        p.w_o = init_uniform(prefix + ".wo", cfg.heads * cfg.d_k, cfg.d_model, cfg.heads * cfg.d_k, rng);
        p.ln_gain = {prefix + ".ln_gain", ad::Tensor(1, cfg.d_model, 1.0)};
        p.ln_bias = {prefix + ".ln_bias", ad::Tensor(1, cfg.d_model, 0.0)};
        return p;
    }

    std::vector<ad::Parameter*> parameters() {
        std::vector<ad::Parameter*> out;
        for (auto& h : heads)
            for (auto* p : {&h.wq, &h.wk, &h.wv, &h.geo_proj, &h.occ_proj}) out.push_back(p);
        out.push_back(&w_o);
        out.push_back(&ln_gain);
        out.push_back(&ln_bias);
        return out;
    }
};

/// Concat(sum_j h_geo(i,j), sum_j h_occ(i,j), h_txt(i)) for every node i.
/// Edge k contributes to node src[k].
inline ad::Var aggregate_node_features(std::size_t num_nodes, const std::vector<std::size_t>& src, ad::Var h_geo,
                                       ad::Var h_occ, ad::Var h_txt) {
    if (h_geo.rows() != src.size() || h_occ.rows() != src.size())
        throw ValidationError("aggregate_node_features: " + std::to_string(src.size()) + " edges but edge features " +
                              h_geo.value().shape_str() + " / " + h_occ.value().shape_str());
    if (h_txt.rows() != num_nodes)
        throw ValidationError("aggregate_node_features: text embeddings " + h_txt.value().shape_str() + " for " +
                              std::to_string(num_nodes) + " nodes");
    return ad::concat_cols({ad::scatter_add_rows(h_geo, src, num_nodes), ad::scatter_add_rows(h_occ, src, num_nodes),
                            h_txt});
}

struct EdgeQkv {
    ad::Var q, k, v;  // E x d_k, indexed by edge
    ad::Var values;   // N x d_k, V for every node
};

/// Q = X Wq, K = X Wk, V = X Wv; q = Q[src], k = K[dst], v = V[dst].
inline EdgeQkv project_qkv(const AttentionHead& head, ad::Var x_enh, const std::vector<std::size_t>& src,
                           const std::vector<std::size_t>& dst) {
    auto& t = *x_enh.tape();
    const auto Q = ad::matmul(x_enh, t.param(head.wq));
    const auto K = ad::matmul(x_enh, t.param(head.wk));
    const auto V = ad::matmul(x_enh, t.param(head.wv));
    return {ad::gather_rows(Q, src), ad::gather_rows(K, dst), ad::gather_rows(V, dst), V};
}

/// e_ij = sum(q_i * k_j * hgeo_ij * hocc_ij) / sqrt(d_k), one per edge (E x 1).
inline ad::Var got_scores(ad::Var q, ad::Var k, ad::Var h_geo_proj, ad::Var h_occ_proj) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    return ad::scale(ad::row_sums(ad::mul(ad::mul(q, k), ad::mul(h_geo_proj, h_occ_proj))), inv);
}

/// Scaled dot-product scores without edge modulation.
inline ad::Var dot_scores(ad::Var q, ad::Var k) {
    return ad::scale(ad::row_sums(ad::mul(q, k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
}

/// z_i = sum_j alpha_ij v_j; nodes without edges pass their own value row through.
inline ad::Var attend(ad::Var alpha, ad::Var v, ad::Var node_values, const std::vector<std::size_t>& src) {
    auto& t = *alpha.tape();
    const std::size_t n = node_values.rows();
    ad::Tensor isolated(n, 1, 1.0);
    for (const auto s : src) isolated[s] = 0.0;
    const auto agg = ad::scatter_add_rows(ad::mul_col(v, alpha), src, n);
    return ad::add(agg, ad::mul_col(node_values, t.constant(std::move(isolated))));
}

struct AttentionOutput {
    ad::Var z_final;             // N x d_model
    std::vector<ad::Var> alpha;  // per head, E x 1
    std::vector<ad::Var> z;      // per head, N x d_k (pre-projection)
};

/// Full GOT attention layer over one context graph.
///
/// `h_geo` / `h_occ` are the encoded edge features (E x d_model). In train mode
/// a dropout keep-mask is drawn from `rng`; in eval mode dropout is skipped.
inline AttentionOutput got_attention(const AttentionParams& params, const AttentionConfig& cfg, ad::Var x_enh,
                                     const std::vector<std::size_t>& src, const std::vector<std::size_t>& dst,
                                     ad::Var h_geo, ad::Var h_occ, bool train, Rng* rng) {
    auto& t = *x_enh.tape();
    const std::size_t n = x_enh.rows();
    AttentionOutput out;
    std::vector<ad::Var> heads;
    for (const auto& head : params.heads) {
        const auto qkv = project_qkv(head, x_enh, src, dst);
        ad::Var e;
        if (cfg.plain) {
            e = dot_scores(qkv.q, qkv.k);
        } else {
            const auto hg = ad::matmul(h_geo, t.param(head.geo_proj));
            const auto ho = ad::matmul(h_occ, t.param(head.occ_proj));
            e = got_scores(qkv.q, qkv.k, hg, ho);
        }
        const auto alpha = ad::segment_softmax(e, src, n);
        const auto z = attend(alpha, qkv.v, qkv.values, src);
        out.alpha.push_back(alpha);
        out.z.push_back(z);
        heads.push_back(z);
    }
    const auto Z = ad::matmul(ad::concat_cols(heads), t.param(params.w_o));
    auto normed = ad::layernorm_rows(Z, t.param(params.ln_gain), t.param(params.ln_bias), cfg.layernorm_eps);
    if (train && cfg.dropout > 0.0) {
        if (!rng) throw ValidationError("got_attention: train mode requires an rng for dropout");
        ad::Tensor keep(normed.rows(), normed.cols());
        for (double& k : keep.data()) k = rng->uniform() >= cfg.dropout ? 1.0 : 0.0;
        normed = ad::dropout(normed, keep, cfg.dropout);
    }
    out.z_final = normed;
    return out;
}

}  // namespace adaptgot
