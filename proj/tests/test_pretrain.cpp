#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <set>

#include "adaptgot/pretrain.hpp"
#include "adaptgot/synth.hpp"
#include "support/gradcheck.hpp"
#include "support/pipeline.hpp"

using namespace adaptgot;
using ad::Tape;
using ad::Tensor;

namespace {

CheckinCorpus default_synth() { return synth::generate({}); }

std::vector<Matrix> values_of(PretrainModel& m) {
    std::vector<Matrix> out;
    for (auto* p : m.parameters()) out.push_back(p->value);
    return out;
}

std::array<double, 3> recon_values(const PretrainModel& m, const PretrainData& d, const RunConfig& cfg,
                                   const MaskPlan& plan, std::uint64_t rng_seed) {
    Tape t;
    Rng rng(rng_seed);
    const auto fr = forward(m, d, cfg, t, &plan, true, rng);
    return {fr.components[0].scalar(), fr.components[1].scalar(), fr.components[2].scalar()};
}

}  // namespace

TEST(Masking, Count) {
    EXPECT_EQ(mask_count(0, 0.2), 0u);
    for (std::size_t n = 1; n < 5; ++n) EXPECT_EQ(mask_count(n, 0.2), 1u);
    EXPECT_EQ(mask_count(5, 0.2), 1u);
    EXPECT_EQ(mask_count(12, 0.2), 2u);
    EXPECT_EQ(mask_count(13, 0.2), 3u);
    EXPECT_EQ(mask_count(100, 0.2), 20u);
    EXPECT_EQ(mask_count(10, 0.01), 1u);
}

TEST(Masking, PlanIsDeterministicSortedDistinct) {
    const auto a = make_mask_plan(7, 3, 50, 1000);
    const auto b = make_mask_plan(7, 3, 50, 1000);
    EXPECT_EQ(a.text_nodes, b.text_nodes);
    EXPECT_EQ(a.geo_edges, b.geo_edges);
    EXPECT_EQ(a.occ_edges, b.occ_edges);
    EXPECT_EQ(a.text_nodes.size(), 10u);
    EXPECT_EQ(a.geo_edges.size(), 200u);
    EXPECT_TRUE(std::is_sorted(a.geo_edges.begin(), a.geo_edges.end()));
    EXPECT_EQ(std::set<std::size_t>(a.occ_edges.begin(), a.occ_edges.end()).size(), 200u);
    EXPECT_NE(a.geo_edges, a.occ_edges);
    EXPECT_NE(make_mask_plan(7, 4, 50, 1000).text_nodes, a.text_nodes);
    EXPECT_THROW(make_mask_plan(7, 1, 0, 10), ValidationError);
}

TEST(Masking, InclusionFrequencyIsTheRatio) {
    const std::size_t n = 50, draws = 40000;
    std::vector<double> hits(n, 0.0);
    for (std::size_t e = 1; e <= draws; ++e)
        for (const auto i : make_mask_plan(11, e, n, 0).text_nodes) hits[i] += 1.0;
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(hits[i] / static_cast<double>(draws), 0.2, 0.01) << "node " << i;
}

TEST(Losses, HandComputedReconstruction) {
    Tape t;
    ReconTargets tg;
    tg.text = Matrix(2, 2, std::vector<double>{1, 0, 0, 1});
    tg.geo = Matrix(3, 3, std::vector<double>{1, 0, 0, 3, 0, 0, 9, 9, 9});
    tg.occ = Matrix(3, 1, std::vector<double>{0.5, 1.0, 0.0});
    tg.edge_node = {0, 0, 1};
    ReconPredictions pr{t.constant(Tensor(2, 2, std::vector<double>{0, 0, 5, 5})),
                        t.constant(Tensor(2, 3, std::vector<double>{2, 1, 0, 0, 0, 0})),
                        t.constant(Tensor(2, 1, std::vector<double>{0.25, 7.0}))};
    MaskPlan plan;
    plan.text_nodes = {0};
    plan.geo_edges = {0, 1};
    plan.occ_edges = {0, 1};
    const auto l = reconstruction_losses(pr, tg, plan);
    EXPECT_NEAR(l.txt.scalar(), std::log(2.0), 1e-15);
    // node 0 geo mean (2,0,0), prediction (2,1,0): mse = 1/3
    EXPECT_NEAR(l.geo.scalar(), 1.0 / 3.0, 1e-15);
    // node 0 occ mean 0.75, prediction 0.25
    EXPECT_NEAR(l.occ.scalar(), 0.25, 1e-15);

    plan.text_nodes.clear();
    plan.geo_edges.clear();
    const auto e = reconstruction_losses(pr, tg, plan);
    EXPECT_EQ(e.txt.scalar(), 0.0);
    EXPECT_EQ(e.geo.scalar(), 0.0);
}

TEST(Losses, TotalWithEqualAndSaturatedWeights) {
    Tape t;
    std::vector<ad::Var> comps;
    const std::vector<double> vals{1.0, 2.0, 3.0, 4.0, 5.0};
    for (const double v : vals) comps.push_back(t.constant(Tensor(1, 1, v)));
    const auto [total, alpha] = total_loss(comps, t.constant(Tensor(1, 5, 0.0)));
    EXPECT_NEAR(total.scalar(), 3.0, 1e-15);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(alpha.value()[k], 0.2, 1e-15);
    const auto sat = total_loss(comps, t.constant(Tensor(1, 5, std::vector<double>{0, 0, 60, 0, 0})));
    EXPECT_NEAR(sat.first.scalar(), 3.0, 1e-15);
    EXPECT_THROW(total_loss({comps[0]}, t.constant(Tensor(1, 5))), ValidationError);
}

TEST(Losses, TotalLossGradientInWeights) {
    Rng rng(3);
    ad::Parameter w{"w", Tensor(1, 5)};
    for (double& x : w.value.data()) x = rng.normal();
    const std::vector<double> vals{0.7, 0.1, 2.5, 0.02, 0.3};
    const auto r = testing_support::gradcheck({&w}, [&](Tape& t) {
        std::vector<ad::Var> comps;
        for (const double v : vals) comps.push_back(t.constant(Tensor(1, 1, v)));
        return total_loss(comps, t.param(w)).first;
    });
    EXPECT_LT(r.max_rel_err, 1e-6) << r.worst;
    // d total / d w_k = alpha_k (L_k - total)
    Tape t;
    std::vector<ad::Var> comps;
    for (const double v : vals) comps.push_back(t.constant(Tensor(1, 1, v)));
    const auto [total, alpha] = total_loss(comps, t.param(w));
    const double tot = total.scalar();
    const auto a = alpha.value();
    const auto g = t.backward(total).at(&w);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(g[k], a[k] * (vals[k] - tot), 1e-15);
}

TEST(Losses, UnmaskedTargetsDoNotMatter) {
    const auto c = testing_support::six_node_corpus();
    const auto cfg = testing_support::small_config();
    Trainer tr(c, cfg, synth::mood_lexicon());
    for (std::size_t epoch = 1; epoch <= 20; ++epoch) {
        const auto plan = tr.mask_plan(epoch);
        const auto base = recon_values(tr.state().model, tr.data(), cfg, plan, epoch);
        PretrainData d = tr.data();
        std::set<std::size_t> tm(plan.text_nodes.begin(), plan.text_nodes.end());
        std::set<std::size_t> gm(plan.geo_edges.begin(), plan.geo_edges.end());
        std::set<std::size_t> om(plan.occ_edges.begin(), plan.occ_edges.end());
        for (std::size_t i = 0; i < d.num_nodes; ++i)
            if (!tm.count(i))
                for (double& x : d.targets.text.row_span(i)) x = 1.0 - x;
        for (std::size_t e = 0; e < d.num_edges(); ++e) {
            if (!gm.count(e))
                for (double& x : d.targets.geo.row_span(e)) x += 3.0;
            if (!om.count(e)) d.targets.occ[e] = 1.0 - d.targets.occ[e];
        }
        const auto after = recon_values(tr.state().model, d, cfg, plan, epoch);
        for (int k = 0; k < 3; ++k) EXPECT_EQ(std::bit_cast<std::uint64_t>(base[k]), std::bit_cast<std::uint64_t>(after[k]));

        // Changing a masked target does move the loss.
        PretrainData m = tr.data();
        m.targets.occ[plan.occ_edges[0]] += 0.5;
        m.targets.geo(plan.geo_edges[0], 0) += 0.5;
        m.targets.text(plan.text_nodes[0], 0) = 1.0 - m.targets.text(plan.text_nodes[0], 0);
        const auto moved = recon_values(tr.state().model, m, cfg, plan, epoch);
        for (int k = 0; k < 3; ++k) EXPECT_NE(base[k], moved[k]);
    }
}

TEST(Pipeline, FullGradcheck) {
    const auto report = testing_support::pipeline_gradcheck(testing_support::six_node_corpus(), testing_support::small_config());
    for (const char* g : {"geo_enc", "occ_enc", "wq", "wk", "wv", "wo", "edge_proj", "w_g", "w_n", "dec_txt", "dec_geo",
                          "dec_occ", "mask_tokens", "loss_weights", "layernorm"}) {
        ASSERT_TRUE(report.count(g)) << g;
        EXPECT_LT(report.at(g).max_rel_err, 1e-3) << g << " " << report.at(g).worst;
        EXPECT_GT(report.at(g).checked, 0u);
    }
}

TEST(Training, ZeroLearningRateKeepsParameters) {
    const auto c = testing_support::six_node_corpus();
    auto cfg = testing_support::small_config();
    cfg.lr = 0.0;
    Trainer a(c, cfg);
    const auto before = values_of(a.state().model);
    a.train_until(3);
    EXPECT_EQ(values_of(a.state().model), before);
    // Each epoch's loss is what the untouched model gives on that epoch's mask.
    Trainer b(c, cfg);
    for (std::size_t e = 1; e <= 3; ++e) {
        Tape t;
        Rng rng = b.step_rng(e);
        const auto plan = b.mask_plan(e);
        EXPECT_EQ(forward(b.state().model, b.data(), cfg, t, &plan, true, rng).total.scalar(), a.state().curve[e - 1].total);
    }
}

TEST(Training, LossDecreasesAndIsFinite) {
    const auto c = default_synth();
    auto cfg = testing_support::small_config();
    cfg.lr = 0.01;
    Trainer tr(c, cfg, synth::mood_lexicon());
    tr.train_until(60);
    const auto& curve = tr.state().curve;
    ASSERT_EQ(curve.size(), 60u);
    for (const auto& r : curve) {
        EXPECT_TRUE(std::isfinite(r.total));
        double s = 0.0;
        for (const double a : r.alpha) s += a;
        EXPECT_NEAR(s, 1.0, 1e-12);
        EXPECT_NEAR(r.importance[0] + r.importance[1] + r.importance[2] + r.importance[3], 50.0, 1e-9);
    }
    EXPECT_LT(curve.back().total, curve.front().total);
}

TEST(Training, CheckpointResumeIsExact) {
    const auto c = default_synth();
    auto cfg = testing_support::small_config();
    Trainer full(c, cfg);
    full.train_until(100);

    Trainer first(c, cfg);
    first.train_until(50);
    const auto ckpt = first.checkpoint();
    Trainer second(c, cfg);
    second.resume(ckpt);
    EXPECT_EQ(second.state().epoch, 50u);
    second.train_until(100);
    EXPECT_EQ(loss_curve_csv(second.state().curve), loss_curve_csv(full.state().curve));
    EXPECT_EQ(second.state().curve.back().total, full.state().curve.back().total);
    EXPECT_EQ(second.embeddings(), full.embeddings());
}

TEST(Training, CheckpointRejectsOtherConfigOrGarbage) {
    const auto c = testing_support::six_node_corpus();
    auto cfg = testing_support::small_config();
    Trainer a(c, cfg);
    a.train_until(1);
    const auto ckpt = a.checkpoint();
    cfg.lr = 0.5;
    Trainer b(c, cfg);
    EXPECT_THROW(b.resume(ckpt), ValidationError);
    EXPECT_THROW(b.resume("{not json"), ValidationError);
    EXPECT_THROW(b.resume("{\"format\":\"other\"}"), ValidationError);
}

TEST(Training, ResumeMayExtendTheEpochBudget) {
    const auto c = testing_support::six_node_corpus();
    auto cfg = testing_support::small_config();
    cfg.epochs = 2;
    Trainer a(c, cfg);
    a.train_until(2);
    cfg.epochs = 4;
    cfg.checkpoint_every = 1;
    Trainer b(c, cfg);
    ASSERT_NO_THROW(b.resume(a.checkpoint()));
    EXPECT_EQ(b.config().epochs, 4u);
    EXPECT_EQ(b.state().epoch, 2u);
}

TEST(Training, DivergenceRollsBack) {
    const auto c = default_synth();
    auto cfg = testing_support::small_config();
    cfg.batch_size = 10;
    Trainer tr(c, cfg);
    tr.train_until(2);
    const auto before = values_of(tr.state().model);
    const auto steps = tr.state().adam.steps();
    tr.state().adam.set_lr(1e300);
    EXPECT_THROW(tr.run_epoch(), DivergenceError);
    EXPECT_EQ(values_of(tr.state().model), before);
    EXPECT_EQ(tr.state().adam.steps(), steps);
    EXPECT_EQ(tr.state().epoch, 2u);
    EXPECT_EQ(tr.state().curve.size(), 2u);
}

TEST(Training, MiniBatchesCoverEveryNodeOnce) {
    const auto c = default_synth();
    auto cfg = testing_support::small_config();
    cfg.batch_size = 16;
    Trainer tr(c, cfg);
    const auto& rec = tr.run_epoch();
    EXPECT_TRUE(std::isfinite(rec.total));
    EXPECT_EQ(tr.state().adam.steps(), 4);  // ceil(50 / 16)
    EXPECT_NEAR(rec.importance[0] + rec.importance[1] + rec.importance[2] + rec.importance[3], 50.0, 1e-9);
}

TEST(Training, IdenticalRunsAreIdentical) {
    const auto c = default_synth();
    const auto cfg = testing_support::small_config();
    Trainer a(c, cfg), b(c, cfg);
    a.train_until(10);
    b.train_until(10);
    EXPECT_EQ(loss_curve_csv(a.state().curve), loss_curve_csv(b.state().curve));
    EXPECT_EQ(embeddings_jsonl(c, a.embeddings()), embeddings_jsonl(c, b.embeddings()));
    auto other = cfg;
    other.seed = cfg.seed + 1;
    Trainer d(c, other);
    d.train_until(10);
    EXPECT_NE(loss_curve_csv(a.state().curve), loss_curve_csv(d.state().curve));
}

TEST(Training, EvalGatesAreSparse) {
    const auto c = testing_support::six_node_corpus();
    const auto cfg = testing_support::small_config();
    Trainer tr(c, cfg);
    const auto g = tr.gate_weights();
    for (std::size_t i = 0; i < g.rows(); ++i) {
        std::size_t nz = 0;
        for (std::size_t o = 0; o < 4; ++o) nz += g(i, o) > 0.0;
        EXPECT_EQ(nz, cfg.experts_kept);
    }
}

TEST(Output, JsonlFormats) {
    const CheckinCorpus c({{0, "a\"b", {0, 0}, "x"}, {1, "c", {0, 1}, "x"}}, {"u"}, {{0, 0, 1}}, {});
    const Matrix e(2, 2, std::vector<double>{0.5, -1, 0.25, 2});
    EXPECT_EQ(embeddings_jsonl(c, e), "{\"poi\":\"a\\\"b\",\"vec\":[0.5,-1]}\n{\"poi\":\"c\",\"vec\":[0.25,2]}\n");
    EXPECT_EQ(gates_jsonl(Matrix(1, 4, std::vector<double>{0.5, 0, 0.5, 0})), "{\"poi\":0,\"gates\":[0.5,0,0.5,0]}\n");
    LossRecord r;
    r.epoch = 1;
    r.components = {1, 2, 3, 4, 5};
    r.total = 3;
    r.alpha = {0.2, 0.2, 0.2, 0.2, 0.2};
    EXPECT_EQ(loss_curve_csv({r}),
              "epoch,txt,geo,occ,imp,js,total,alpha_txt,alpha_geo,alpha_occ,alpha_imp,alpha_js\n"
              "1,1,2,3,4,5,3,0.2,0.2,0.2,0.2,0.2\n");
}
