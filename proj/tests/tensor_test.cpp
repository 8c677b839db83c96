#include <catch2/catch.hpp>

#include "support/gradcheck.hpp"
#include "vxc/tensor.hpp"

using vxc::Shape;
using vxc::Tensor;

TEST_CASE("construction validates shape against data length") {
    CHECK_THROWS_AS(Tensor<float>::from_vector({1.f, 2.f}, Shape{3}), vxc::ConfigError);
    auto t = Tensor<float>::from_vector({1.f, 2.f, 3.f, 4.f}, Shape{2, 2});
    CHECK(t.numel() == 4);
    CHECK(t.shape() == Shape{2, 2});
}

TEST_CASE("backward of sum of squares") {
    auto x = Tensor<double>::from_vector({1.0, 2.0}, Shape{2}, true);
    auto loss = vxc::sum(vxc::mul(x, x));
    vxc::backward(loss);
    CHECK(x.grad()[0] == Approx(2.0));
    CHECK(x.grad()[1] == Approx(4.0));
}

TEST_CASE("repeated backward accumulates exactly double") {
    auto x = Tensor<double>::from_vector({1.5, -0.5, 2.0}, Shape{3}, true);
    auto y = vxc::mean(vxc::mul(x, x));
    vxc::backward(y);
    const std::vector<double> once = x.grad();
    vxc::backward(y);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == Approx(2.0 * once[i]));
}

TEST_CASE("backward rejects non-scalar loss") {
    auto x = Tensor<double>::from_vector({1.0, 2.0}, Shape{2}, true);
    auto y = vxc::mul(x, x);
    CHECK_THROWS_AS(vxc::backward(y), vxc::ConfigError);
}

TEST_CASE("no-grad guard suppresses recording") {
    auto x = Tensor<double>::from_vector({1.0, 2.0}, Shape{2}, true);
    vxc::NoGradGuard ng;
    auto y = vxc::sum(vxc::mul(x, x));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->is_leaf());
}

TEST_CASE("matmul matches manual computation and has correct gradients") {
    auto a = Tensor<double>::from_vector({1, 2, 3, 4, 5, 6}, Shape{2, 3});
    auto b = Tensor<double>::from_vector({1, 0, -1, 2, 0.5, 1}, Shape{3, 2});
    auto c = vxc::matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 2});
    // row 0: [1*1+2*-1+3*0.5, 1*0+2*2+3*1] = [0.5, 7]
    CHECK(c.data()[0] == Approx(0.5));
    CHECK(c.data()[1] == Approx(7.0));

    auto A = vxc_test::random_tensor({3, 4}, 11);
    auto B = vxc_test::random_tensor({4, 5}, 12);
    auto res = vxc_test::gradcheck(
        [&] { return vxc::sum(vxc::mul(vxc::matmul(A, B), vxc::matmul(A, B))); }, {A, B}, 13);
    CHECK(res.ok(1e-4));
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
    auto x = vxc_test::random_tensor({2, 7}, 21, 0.1, 2.0);
    auto y = vxc_test::random_tensor({2, 7}, 22, 0.1, 2.0);
    auto res = vxc_test::gradcheck(
        [&] {
            auto z = vxc::add(vxc::mul(x, y), vxc::scale(vxc::sub(x, y), 0.5));
            z = vxc::add_scalar(vxc::sqrt_op(vxc::abs_op(z)), 1.0);
            return vxc::mean(vxc::mul(z, z));
        },
        {x, y}, 23);
    INFO(res.worst);
    CHECK(res.ok(1e-4));
}

TEST_CASE("reshape passes gradients through") {
    auto x = vxc_test::random_tensor({2, 6}, 31);
    auto res = vxc_test::gradcheck(
        [&] {
            auto r = vxc::reshape(x, {3, 4});
            return vxc::sum(vxc::mul(r, r));
        },
        {x}, 32);
    CHECK(res.ok(1e-4));
    CHECK_THROWS_AS(vxc::reshape(x, {5, 5}), vxc::ConfigError);
}

TEST_CASE("gradients flow through shared subexpressions") {
    auto x = Tensor<double>::from_vector({3.0}, Shape{1}, true);
    auto y = vxc::mul(x, x);           // x^2
    auto z = vxc::add(vxc::mul(y, y), y);  // x^4 + x^2
    vxc::backward(z);
    CHECK(x.grad()[0] == Approx(4 * 27 + 2 * 3));  // 4x^3 + 2x
}

TEST_CASE("frozen leaves receive no gradient but pass it through") {
    auto x = Tensor<double>::from_vector({1.0, 2.0}, Shape{2}, true);
    auto w = Tensor<double>::from_vector({0.5, 0.25}, Shape{2}, false);
    auto loss = vxc::sum(vxc::mul(x, w));
    vxc::backward(loss);
    CHECK(x.grad()[0] == Approx(0.5));
    CHECK_FALSE(w.has_grad());
}
