#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "adaptgot/got_repr.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace adaptgot;

namespace {

CheckinCorpus three_pois() {
    std::vector<Poi> pois = {{0, "a", {0.0, 0.0}, "x"}, {1, "b", {0.0, 1.0}, "x"}, {2, "c", {0.0, 1.0}, "y"}};
    std::vector<CheckIn> ck = {{0, 0, 1}, {0, 1, 2}, {1, 2, 3}};
    std::vector<Review> rv = {{1, 0, "second user"}, {0, 0, "first user"}, {0, 1, "Other POI"}};
    return CheckinCorpus(pois, {"u0", "u1"}, ck, rv);
}

TwoLayerEncoder fixed_encoder(std::size_t in) {
    TwoLayerEncoder e;
    e.w1 = {"w1", ad::Tensor(in, 1, in == 3 ? std::vector<double>{1.0, 2.0, 3.0} : std::vector<double>{4.0})};
    e.b1 = {"b1", ad::Tensor(1, 1, 0.5)};
    e.w2 = {"w2", ad::Tensor(1, 2, std::vector<double>{2.0, -1.0})};
    e.b2 = {"b2", ad::Tensor(1, 2, std::vector<double>{-1.0, 0.25})};
    return e;
}

}  // namespace

TEST(RelPos, DistanceAndBearing) {
    const auto c = three_pois();
    const auto r = relpos(c, 0, 1);
    EXPECT_NEAR(r.s_km, geo::kEarthRadiusKm * std::numbers::pi / 180.0, 1e-9);
    EXPECT_NEAR(r.theta, std::numbers::pi / 2.0, 1e-12);
    const auto back = relpos(c, 1, 0);
    EXPECT_NEAR(back.theta, 1.5 * std::numbers::pi, 1e-12);
    EXPECT_THROW(relpos(c, 0, 0), ValidationError);
}

TEST(RelPos, CoLocatedPoisGetZeroBearing) {
    const auto c = three_pois();
    const auto r = relpos(c, 1, 2);
    EXPECT_EQ(r.s_km, 0.0);
    EXPECT_EQ(r.theta, 0.0);
    const auto f = relpos_features(r, 10.0);
    EXPECT_EQ(f[0], 0.0);
    EXPECT_EQ(f[1], 0.0);
    EXPECT_EQ(f[2], 1.0);
}

TEST(Encoders, GeoHandCalculation) {
    const auto e = fixed_encoder(3);
    // features [0.5, 1, 0] -> hidden 0.5 + 2 + 0 + 0.5 = 3 -> [6 - 1, -3 + 0.25]
    const auto out = encode_geo(e, {5.0, std::numbers::pi / 2.0}, 10.0);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_NEAR(out[0], 5.0, 1e-12);
    EXPECT_NEAR(out[1], -2.75, 1e-12);
}

TEST(Encoders, OccHandCalculation) {
    const auto e = fixed_encoder(1);
    // hidden 4 * 0.25 + 0.5 = 1.5 -> [3 - 1, -1.5 + 0.25]
    const auto out = encode_occ(e, 0.25);
    EXPECT_NEAR(out[0], 2.0, 1e-12);
    EXPECT_NEAR(out[1], -1.25, 1e-12);
    EXPECT_THROW(encode_occ(e, 1.5), ValidationError);
    EXPECT_THROW(encode_occ(e, -0.1), ValidationError);
    EXPECT_THROW(encode_geo(e, {1.0, 0.0}), ValidationError);
}

TEST(Encoders, Gradcheck) {
    Rng rng(11);
    auto geo = TwoLayerEncoder::init("geo", 3, 5, 4, rng);
    auto occ = TwoLayerEncoder::init("occ", 1, 5, 4, rng);
    ad::Tensor gx(6, 3), ox(6, 1), target(6, 4);
    for (double& v : gx.data()) v = rng.uniform(-1, 1);
    for (double& v : ox.data()) v = rng.uniform();
    for (double& v : target.data()) v = rng.normal();
    std::vector<ad::Parameter*> params;
    for (auto* p : geo.parameters()) params.push_back(p);
    for (auto* p : occ.parameters()) params.push_back(p);
    const auto r = testing_support::gradcheck(params, [&](ad::Tape& t) {
        const auto h = ad::mul(geo.forward(t.constant(gx)), occ.forward(t.constant(ox)));
        return ad::mse(h, t.constant(target));
    });
    EXPECT_LT(r.max_rel_err, 1e-4) << r.worst;
    EXPECT_EQ(r.checked, 78u);
}

TEST(Text, FusionOrdersByUser) {
    const auto c = three_pois();
    EXPECT_EQ(fuse_poi_text(c, 0), "first user second user");
    EXPECT_EQ(fuse_poi_text(c, 1), "Other POI");
    EXPECT_EQ(fuse_poi_text(c, 2), "");
}

TEST(Text, HashingEncoderIsUnitNormOrZero) {
    const TextEncoder enc(TextEncoder::HashingBow{64, 3});
    const auto c = testing_support::random_corpus(2, 30, 10, 5);
    const auto m = enc.encode_all(c);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double n = 0.0;
        for (const double x : m.row_span(i)) n += x * x;
        const double want = fuse_poi_text(c, static_cast<PoiId>(i)).empty() ? 0.0 : 1.0;
        EXPECT_NEAR(n, want, 1e-12);
    }
}

TEST(Text, GoldenVector) {
    const TextEncoder enc(TextEncoder::HashingBow{16, 0});
    const auto v = enc.encode_text("Good coffee, good view! Slow service at the bar");
    const std::vector<double> golden = {0, -0.44721359549995793, 0, 0, -0.44721359549995793, 0, 0, 0,
                                        -0.44721359549995793, 0, 0.44721359549995793, 0, 0.44721359549995793, 0, 0, 0};
    ASSERT_EQ(v.size(), golden.size());
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], golden[i], 1e-15) << i;
    const auto b = binarized_bow("Good coffee, good view! Slow service at the bar", 16, 0);
    for (std::size_t i = 0; i < b.size(); ++i)
        if (golden[i] != 0.0) {
            EXPECT_EQ(b[i], 1.0) << i;
        }
}

TEST(Text, DeterministicAndSaltSensitive) {
    const TextEncoder a(TextEncoder::HashingBow{128, 0});
    const TextEncoder b(TextEncoder::HashingBow{128, 0});
    const TextEncoder s(TextEncoder::HashingBow{128, 99});
    const std::string text = "quiet corner cafe with great espresso and slow service";
    EXPECT_EQ(a.encode_text(text), b.encode_text(text));
    EXPECT_NE(a.encode_text(text), s.encode_text(text));
    EXPECT_THROW(TextEncoder(TextEncoder::HashingBow{0, 0}), ValidationError);
}

TEST(Edges, InputsFollowGraphOrder) {
    const auto c = testing_support::random_corpus(4, 12, 6, 8);
    SamplingConfig cfg;
    cfg.k = 3;
    const auto graphs = build_all_subgraphs(c, {}, cfg);
    const auto o = cooccurrence(c);
    const auto e = edge_inputs(c, graphs[0], o, 10.0);
    ASSERT_EQ(e.size(), 36u);
    for (std::size_t k = 0; k < e.size(); ++k) {
        EXPECT_EQ(e.src[k], k / 3);
        EXPECT_EQ(e.dst[k], graphs[0].neighbors[k / 3][k % 3]);
        const auto f = relpos_features(relpos(c, static_cast<PoiId>(e.src[k]), static_cast<PoiId>(e.dst[k])), 10.0);
        for (int d = 0; d < 3; ++d) EXPECT_EQ(e.geo(k, d), f[d]);
        EXPECT_EQ(e.occ[k], o(e.src[k], e.dst[k]));
    }
}
