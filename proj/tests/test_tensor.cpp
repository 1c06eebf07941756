#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "adaptgot/optim.hpp"
#include "adaptgot/rng.hpp"
#include "adaptgot/tensor.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

using namespace adaptgot;
using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchFiniteDifferences) {
    const auto& [name, make] = testing_support::op_cases()[GetParam()];
    const auto r = testing_support::op_gradcheck(name, make);
    EXPECT_LT(r.max_rel_err, 1e-4) << name << " " << r.worst;
    RecordProperty(name, std::to_string(r.max_rel_err));
}

INSTANTIATE_TEST_SUITE_P(All, OpGradient, ::testing::Range<std::size_t>(0, testing_support::op_cases().size()),
                         [](const auto& info) { return testing_support::op_cases()[info.param].first; });

TEST(OpGradients, SharedInputAccumulates) {
    Parameter p{"x", Tensor(1, 1, 3.0)};
    Tape t;
    const Var x = t.param(p);
    const auto g = t.backward(ad::sum(ad::mul(x, ad::add(x, x))));
    EXPECT_DOUBLE_EQ(g.at(&p)[0], 12.0);  // d(2x^2)/dx
}

TEST(OpValues, HandChecked) {
    Tape t;
    const Var a = t.constant(Tensor(2, 2, std::vector<double>{1, 2, 3, 4}));
    const Var b = t.constant(Tensor(2, 1, std::vector<double>{1, -1}));
    EXPECT_EQ(ad::matmul(a, b).value().data(), (std::vector<double>{-1, -1}));
    EXPECT_EQ(ad::row_sums(a).value().data(), (std::vector<double>{3, 7}));
    EXPECT_EQ(ad::col_means(a).value().data(), (std::vector<double>{2, 3}));
    const auto s = ad::softmax_rows(t.constant(Tensor(1, 2, std::vector<double>{0.0, std::log(3.0)})));
    EXPECT_NEAR(s.value()[0], 0.25, 1e-15);
    EXPECT_NEAR(s.value()[1], 0.75, 1e-15);
    const auto ce = ad::cross_entropy(t.constant(Tensor(1, 2, std::vector<double>{0.0, std::log(3.0)})), {1});
    EXPECT_NEAR(ce.scalar(), -std::log(0.75), 1e-15);
    const auto bce = ad::bce_with_logits(t.constant(Tensor(1, 1, 0.0)), Tensor(1, 1, 1.0));
    EXPECT_NEAR(bce.scalar(), std::log(2.0), 1e-15);
    const auto cv = ad::cv_squared(t.constant(Tensor(1, 2, std::vector<double>{1.0, 3.0})));
    EXPECT_NEAR(cv.scalar(), 0.25, 1e-15);
}

TEST(Tape, BackwardTwiceThrows) {
    Parameter p{"x", Tensor(1, 1, 2.0)};
    Tape t;
    const Var loss = ad::square(t.param(p));
    t.backward(loss);
    EXPECT_THROW(t.backward(loss), Error);
    EXPECT_THROW(t.constant(Tensor(1, 1)), Error);
}

TEST(Tape, ShapeErrors) {
    Tape t;
    const Var a = t.constant(Tensor(2, 3));
    const Var b = t.constant(Tensor(2, 2));
    EXPECT_THROW(ad::matmul(a, b), ValidationError);
    EXPECT_THROW(ad::add(a, b), ValidationError);
    EXPECT_THROW(ad::mse(a, b), ValidationError);
    EXPECT_THROW(ad::slice_cols(a, 2, 2), ValidationError);
    EXPECT_THROW(ad::gather_rows(a, {5}), ValidationError);
    EXPECT_THROW(t.backward(a), ValidationError);
    Tape other;
    EXPECT_THROW(ad::add(a, other.constant(Tensor(2, 3))), ValidationError);
}

TEST(Tape, NonFiniteIsANumericalError) {
    Tape t;
    EXPECT_THROW(t.constant(Tensor(1, 1, std::nan(""))), NumericalError);
    const Var big = t.constant(Tensor(1, 1, 1e200));
    EXPECT_THROW(ad::mul(big, big), NumericalError);
    EXPECT_THROW(ad::cv_squared(t.constant(Tensor(1, 2, std::vector<double>{1.0, -1.0}))), NumericalError);
}

TEST(Tape, ConstantsGetNoGradient) {
    Parameter p{"w", Tensor(1, 2, std::vector<double>{1, 2})};
    Tape t;
    const Var c = t.constant(Tensor(1, 2, std::vector<double>{5, 7}));
    const Var v = t.variable(Tensor(1, 2, std::vector<double>{1, 1}));
    const auto g = t.backward(ad::sum(ad::mul(ad::mul(t.param(p), c), v)));
    EXPECT_EQ(g.at(&p).data(), (std::vector<double>{5, 7}));
    EXPECT_EQ(t.grad(c).data(), (std::vector<double>{0, 0}));
    EXPECT_EQ(t.grad(v).data(), (std::vector<double>{5, 14}));
}

TEST(Adam, ConvergesOnQuadraticBowl) {
    Parameter x{"x", Tensor(1, 3, std::vector<double>{5.0, -3.0, 2.0})};
    const Tensor centre(1, 3, std::vector<double>{1.0, 2.0, -1.0});
    ad::Adam opt({0.05, 0.9, 0.999, 1e-8});
    for (int step = 0; step < 2000; ++step) {
        Tape t;
        const auto g = t.backward(ad::sum(ad::square(ad::sub(t.param(x), t.constant(centre)))));
        opt.step({&x}, g);
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x.value[i], centre[i], 1e-3);
    EXPECT_EQ(opt.steps(), 2000);
}

TEST(Adam, FirstStepMovesByLr) {
    // Bias correction makes the first update exactly lr * sign(g) (up to eps).
    Parameter x{"x", Tensor(1, 2, std::vector<double>{0.0, 0.0})};
    ad::Adam opt({0.1, 0.9, 0.999, 1e-12});
    ad::Gradients g;
    g.emplace(&x, Tensor(1, 2, std::vector<double>{3.0, -0.5}));
    opt.step({&x}, g);
    EXPECT_NEAR(x.value[0], -0.1, 1e-10);
    EXPECT_NEAR(x.value[1], 0.1, 1e-10);
}

TEST(Adam, ZeroLearningRateLeavesParameters) {
    Parameter x{"x", Tensor(2, 2, std::vector<double>{1, 2, 3, 4})};
    const auto before = x.value;
    ad::Adam opt({0.0});
    Tape t;
    opt.step({&x}, t.backward(ad::sum(ad::square(t.param(x)))));
    EXPECT_EQ(x.value, before);
}
