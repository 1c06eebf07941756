#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adaptgot/got_attention.hpp"
#include "support/gradcheck.hpp"

using namespace adaptgot;
using ad::Tape;
using ad::Tensor;

namespace {

struct RandomGraph {
    std::size_t n = 0;
    std::vector<std::size_t> src, dst;
    Tensor x, hg, ho;
};

Tensor randn(Rng& rng, std::size_t r, std::size_t c) {
    Tensor t(r, c);
    for (double& v : t.data()) v = rng.normal();
    return t;
}

RandomGraph random_graph(Rng& rng, std::size_t d_enh, std::size_t d_model) {
    RandomGraph g;
    g.n = 2 + rng.below(9);
    for (std::size_t i = 0; i < g.n; ++i) {
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < g.n; ++j)
            if (j != i) others.push_back(j);
        for (std::size_t k = others.size(); k > 1; --k) std::swap(others[k - 1], others[rng.below(k)]);
        const auto deg = rng.below(std::min<std::size_t>(others.size(), 4) + 1);
        for (std::size_t k = 0; k < deg; ++k) {
            g.src.push_back(i);
            g.dst.push_back(others[k]);
        }
    }
    g.x = randn(rng, g.n, d_enh);
    g.hg = randn(rng, g.src.size(), d_model);
    g.ho = randn(rng, g.src.size(), d_model);
    return g;
}

AttentionConfig small_config() {
    AttentionConfig cfg;
    cfg.heads = 2;
    cfg.d_k = 3;
    cfg.d_model = 6;
    cfg.dropout = 0.0;
    cfg.layernorm_eps = 1e-9;
    return cfg;
}

struct Run {
    Tensor z_final;
    std::vector<Tensor> alpha, z, values;
};

Run run(const AttentionParams& p, const AttentionConfig& cfg, const RandomGraph& g) {
    Tape t;
    const auto x = t.constant(g.x);
    const auto out = got_attention(p, cfg, x, g.src, g.dst, t.constant(g.hg), t.constant(g.ho), false, nullptr);
    Run r{out.z_final.value(), {}, {}, {}};
    for (std::size_t h = 0; h < out.alpha.size(); ++h) {
        r.alpha.push_back(out.alpha[h].value());
        r.z.push_back(out.z[h].value());
        r.values.push_back(ad::detail::matmul(g.x, p.heads[h].wv.value));
    }
    return r;
}

}  // namespace

TEST(Attention, ContractsOnRandomGraphs) {
    Rng rng(2024);
    const auto cfg = small_config();
    const std::size_t d_enh = 5;
    double max_row_err = 0.0, max_perm_err = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto params = AttentionParams::init("att", d_enh, cfg, rng);
        const auto g = random_graph(rng, d_enh, cfg.d_model);
        const auto r = run(params, cfg, g);

        for (std::size_t h = 0; h < cfg.heads; ++h) {
            std::vector<double> rows(g.n, 0.0);
            for (std::size_t k = 0; k < g.src.size(); ++k) {
                ASSERT_GE(r.alpha[h][k], 0.0);
                rows[g.src[k]] += r.alpha[h][k];
            }
            std::vector<char> has(g.n, 0);
            for (const auto s : g.src) has[s] = 1;
            for (std::size_t i = 0; i < g.n; ++i) {
                if (has[i]) max_row_err = std::max(max_row_err, std::abs(rows[i] - 1.0));
                // z_i inside the box spanned by its neighbors' values (itself when isolated)
                for (std::size_t c = 0; c < cfg.d_k; ++c) {
                    double lo = INFINITY, hi = -INFINITY;
                    for (std::size_t k = 0; k < g.src.size(); ++k)
                        if (g.src[k] == i) {
                            lo = std::min(lo, r.values[h](g.dst[k], c));
                            hi = std::max(hi, r.values[h](g.dst[k], c));
                        }
                    if (!has[i]) lo = hi = r.values[h](i, c);
                    const double z = r.z[h](i, c);
                    ASSERT_GE(z, lo - 1e-12) << "trial " << trial;
                    ASSERT_LE(z, hi + 1e-12) << "trial " << trial;
                }
            }
        }

        // Reverse each node's neighbor list.
        RandomGraph p = g;
        std::vector<std::size_t> perm(g.src.size());
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t b = 0; b < perm.size();) {
            std::size_t e = b;
            while (e < perm.size() && g.src[e] == g.src[b]) ++e;
            std::reverse(perm.begin() + static_cast<std::ptrdiff_t>(b), perm.begin() + static_cast<std::ptrdiff_t>(e));
            b = e;
        }
        for (std::size_t k = 0; k < perm.size(); ++k) {
            p.dst[k] = g.dst[perm[k]];
            for (std::size_t c = 0; c < cfg.d_model; ++c) {
                p.hg(k, c) = g.hg(perm[k], c);
                p.ho(k, c) = g.ho(perm[k], c);
            }
        }
        const auto rp = run(params, cfg, p);
        for (std::size_t i = 0; i < r.z_final.size(); ++i)
            max_perm_err = std::max(max_perm_err, std::abs(r.z_final[i] - rp.z_final[i]));
        for (std::size_t h = 0; h < cfg.heads; ++h)
            for (std::size_t k = 0; k < perm.size(); ++k)
                max_perm_err = std::max(max_perm_err, std::abs(rp.alpha[h][k] - r.alpha[h][perm[k]]));
    }
    EXPECT_LT(max_row_err, 1e-9);
    EXPECT_LT(max_perm_err, 1e-12);
}

TEST(Attention, UnitEdgeTermsGiveDotProductScores) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const auto e = 1 + rng.below(10), d = 1 + rng.below(6);
        Tape t;
        const auto q = t.constant(randn(rng, e, d));
        const auto k = t.constant(randn(rng, e, d));
        const auto ones = t.constant(Tensor(e, d, 1.0));
        const auto a = got_scores(q, k, ones, ones).value();
        const auto b = dot_scores(q, k).value();
        EXPECT_EQ(a, b);
        for (std::size_t r = 0; r < e; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += q.value()(r, c) * k.value()(r, c);
            EXPECT_NEAR(a[r], s / std::sqrt(static_cast<double>(d)), 1e-12);
        }
    }
}

TEST(Attention, PlainLayerMatchesLoopOracle) {
    Rng rng(77);
    auto cfg = small_config();
    cfg.plain = true;
    for (int trial = 0; trial < 200; ++trial) {
        const auto params = AttentionParams::init("att", 4, cfg, rng);
        const auto g = random_graph(rng, 4, cfg.d_model);
        const auto r = run(params, cfg, g);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const auto Q = ad::detail::matmul(g.x, params.heads[h].wq.value);
            const auto K = ad::detail::matmul(g.x, params.heads[h].wk.value);
            const auto V = ad::detail::matmul(g.x, params.heads[h].wv.value);
            for (std::size_t i = 0; i < g.n; ++i) {
                std::vector<std::size_t> nb;
                for (std::size_t k = 0; k < g.src.size(); ++k)
                    if (g.src[k] == i) nb.push_back(g.dst[k]);
                std::vector<double> w;
                double mx = -INFINITY;
                for (const auto j : nb) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < cfg.d_k; ++c) s += Q(i, c) * K(j, c);
                    w.push_back(s / std::sqrt(static_cast<double>(cfg.d_k)));
                    mx = std::max(mx, w.back());
                }
                double tot = 0.0;
                for (double& x : w) tot += (x = std::exp(x - mx));
                for (std::size_t c = 0; c < cfg.d_k; ++c) {
                    double z = nb.empty() ? V(i, c) : 0.0;
                    for (std::size_t m = 0; m < nb.size(); ++m) z += w[m] / tot * V(nb[m], c);
                    EXPECT_NEAR(r.z[h](i, c), z, 1e-12);
                }
            }
        }
    }
}

TEST(Attention, PlainEqualsGotWithUnitProjections) {
    // Edge features and projections arranged so that both projected terms are all ones.
    Rng rng(8);
    auto cfg = small_config();
    auto params = AttentionParams::init("att", 4, cfg, rng);
    for (auto& h : params.heads) {
        h.geo_proj.value = Tensor(cfg.d_model, cfg.d_k, 0.0);
        h.occ_proj.value = Tensor(cfg.d_model, cfg.d_k, 0.0);
        for (std::size_t c = 0; c < cfg.d_k; ++c) {
            h.geo_proj.value(0, c) = 1.0;
            h.occ_proj.value(0, c) = 1.0;
        }
    }
    auto g = random_graph(rng, 4, cfg.d_model);
    g.hg = Tensor(g.src.size(), cfg.d_model, 0.0);
    g.ho = Tensor(g.src.size(), cfg.d_model, 0.0);
    for (std::size_t k = 0; k < g.src.size(); ++k) g.hg(k, 0) = g.ho(k, 0) = 1.0;
    const auto got = run(params, cfg, g);
    cfg.plain = true;
    const auto plain = run(params, cfg, g);
    EXPECT_EQ(got.z_final, plain.z_final);
}

TEST(Attention, HandSoftmaxOverThreeNeighbors) {
    Tape t;
    const auto e = t.constant(Tensor(3, 1, std::vector<double>{0.0, std::log(2.0), std::log(5.0)}));
    const auto a = ad::segment_softmax(e, {0, 0, 0}, 1).value();
    EXPECT_NEAR(a[0], 1.0 / 8.0, 1e-15);
    EXPECT_NEAR(a[1], 2.0 / 8.0, 1e-15);
    EXPECT_NEAR(a[2], 5.0 / 8.0, 1e-15);
    const auto v = t.constant(Tensor(3, 1, std::vector<double>{8.0, 4.0, 0.0}));
    const auto nodes = t.constant(Tensor(2, 1, std::vector<double>{-1.0, 42.0}));
    const auto z = attend(ad::segment_softmax(e, {0, 0, 0}, 2), v, nodes, {0, 0, 0}).value();
    EXPECT_NEAR(z[0], 1.0 + 1.0, 1e-15);
    EXPECT_EQ(z[1], 42.0);  // isolated node keeps its own value
}

TEST(Attention, AggregatesEdgeFeaturesPerSource) {
    Tape t;
    const auto hg = t.constant(Tensor(3, 1, std::vector<double>{1, 2, 4}));
    const auto ho = t.constant(Tensor(3, 1, std::vector<double>{10, 20, 40}));
    const auto txt = t.constant(Tensor(2, 1, std::vector<double>{7, 8}));
    const auto x = aggregate_node_features(2, {0, 1, 0}, hg, ho, txt).value();
    EXPECT_EQ(x.data(), (std::vector<double>{5, 50, 7, 2, 20, 8}));
    EXPECT_THROW(aggregate_node_features(3, {0, 1, 0}, hg, ho, txt), ValidationError);
}

TEST(Attention, HeadsMustTileModelWidth) {
    Rng rng(1);
    AttentionConfig cfg;
    cfg.heads = 3;
    cfg.d_k = 4;
    cfg.d_model = 16;
    EXPECT_THROW(AttentionParams::init("x", 4, cfg, rng), ValidationError);
}

TEST(Attention, LayerGradcheck) {
    Rng rng(31);
    auto cfg = small_config();
    cfg.dropout = 0.2;
    auto params = AttentionParams::init("att", 5, cfg, rng);
    const auto g = random_graph(rng, 5, cfg.d_model);
    ad::Parameter x{"x", g.x}, hg{"hg", g.hg}, ho{"ho", g.ho};
    const auto target = randn(rng, g.n, cfg.d_model);
    auto ptrs = params.parameters();
    for (auto* p : {&x, &hg, &ho}) ptrs.push_back(p);
    for (const bool train : {false, true}) {
        const auto r = testing_support::gradcheck(ptrs, [&](Tape& t) {
            Rng drop(99);
            const auto out = got_attention(params, cfg, t.param(x), g.src, g.dst, t.param(hg), t.param(ho), train, &drop);
            return ad::mse(out.z_final, t.constant(target));
        });
        EXPECT_LT(r.max_rel_err, 1e-4) << (train ? "train " : "eval ") << r.worst;
    }
}

TEST(Attention, TrainModeNeedsRng) {
    Rng rng(3);
    auto cfg = small_config();
    cfg.dropout = 0.5;
    const auto params = AttentionParams::init("att", 5, cfg, rng);
    const auto g = random_graph(rng, 5, cfg.d_model);
    Tape t;
    EXPECT_THROW(got_attention(params, cfg, t.constant(g.x), g.src, g.dst, t.constant(g.hg), t.constant(g.ho), true, nullptr),
                 ValidationError);
}
