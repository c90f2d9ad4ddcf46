#include <gtest/gtest.h>

#include <vector>

#include "mtnet/error.hpp"
#include "mtnet/ops.hpp"
#include "mtnet/tensor.hpp"

namespace mtnet {
namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

TEST(Tensor, ConstructionChecksShape) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.ndim(), 2u);
  EXPECT_DOUBLE_EQ(t.at({1, 2}), 1.5);
}

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
  Tensor a({3}, std::vector<double>{1, 2, 3});
  Tensor b = a;
  Tensor c = a.clone();
  b.data()[0] = 9;
  EXPECT_DOUBLE_EQ(a.data()[0], 9);
  EXPECT_DOUBLE_EQ(c.data()[0], 1);
  EXPECT_TRUE(a.same_storage(b));
  EXPECT_FALSE(a.same_storage(c));
}

TEST(Autograd, SumGivesOnes) {
  Tensor x({2, 3}, 0.7, true);
  backward(sum(x));
  EXPECT_EQ(vec(x.grad()), std::vector<double>(6, 1.0));
}

TEST(Autograd, SquareGivesTwoX) {
  Tensor x({3}, std::vector<double>{1, 2, 3}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(vec(x.grad()), (std::vector<double>{2, 4, 6}));
}

TEST(Autograd, RepeatedBackwardAccumulates) {
  Tensor x({4}, 0.0, true);
  backward(sum(x));
  backward(sum(x));
  EXPECT_EQ(vec(x.grad()), std::vector<double>(4, 2.0));
  x.zero_grad();
  backward(sum(x));
  EXPECT_EQ(vec(x.grad()), std::vector<double>(4, 1.0));
}

TEST(Autograd, NonScalarLossIsAContractError) {
  Tensor x({2}, 1.0, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Autograd, SharedSubexpressionVisitedOnce) {
  // y = x*x used twice: d/dx sum(y + y) = 4x
  Tensor x({2}, std::vector<double>{1.5, -2}, true);
  Tensor y = mul(x, x);
  backward(sum(add(y, y)));
  EXPECT_EQ(vec(x.grad()), (std::vector<double>{6, -8}));
}

TEST(Autograd, EveryReachableLeafGetsGrad) {
  Tensor a({2}, 1.0, true), b({2}, 2.0, true), c({2}, 3.0, false);
  backward(sum(add(mul(a, b), c)));
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
  EXPECT_FALSE(c.has_grad());
}

TEST(Autograd, IntermediateGradsAreReleased) {
  Tensor x({2}, 1.0, true);
  Tensor y = scale(x, 3.0);
  backward(sum(y));
  EXPECT_FALSE(y.has_grad());
  EXPECT_EQ(vec(x.grad()), std::vector<double>(2, 3.0));
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Tensor x({2}, 1.0, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = scale(x, 2.0);
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, DeepChainDoesNotOverflowStack) {
  Tensor x({1}, 1.0, true);
  Tensor y = x;
  for (int i = 0; i < 100000; ++i) y = scale(y, 1.0);
  backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Autograd, OpsRecordTheirKind) {
  Tensor x({1, 1, 2, 2}, 1.0, true);
  EXPECT_EQ(relu(x).node()->kind, OpKind::Relu);
  EXPECT_EQ(maxpool2d(x).node()->kind, OpKind::MaxPool2d);
  EXPECT_STREQ(op_name(OpKind::Conv2d), "conv2d");
}

}  // namespace
}  // namespace mtnet
