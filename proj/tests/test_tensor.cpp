#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "snapstack/kernels.hpp"
#include "snapstack/tensor.hpp"
#include "testutil.hpp"

using namespace snapstack;
using testutil::bitwise_equal;

TEST_CASE("tensor creation and fills") {
    Tensor z = Tensor::zeros({2, 2});
    CHECK(z.shape() == std::vector<std::size_t>{2, 2});
    for (double v : z.values()) CHECK(v == 0.0);

    Tensor c = Tensor::full({3}, 1.5);
    CHECK(c.size() == 3);
    for (double v : c.values()) CHECK(v == 1.5);

    Rng r1(7), r2(7);
    Tensor u1 = Tensor::uniform({4}, 0.0, 1.0, r1);
    Tensor u2 = Tensor::uniform({4}, 0.0, 1.0, r2);
    CHECK(bitwise_equal(u1, u2));
    for (double v : u1.values()) {
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }

    CHECK_THROWS(Tensor::zeros({}));
    CHECK_THROWS(Tensor::zeros({2, 0}));
    CHECK_THROWS(Tensor::full({2}, std::nan("")));
    Rng r3(1);
    CHECK_THROWS(Tensor::uniform({2}, 0.0, std::numeric_limits<double>::infinity(), r3));
}

TEST_CASE("indexing is bounds-checked") {
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.at({0, 0}) == 1.0);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK_THROWS(t.at({2, 0}));
    CHECK_THROWS(t.at({0, 3}));
    CHECK_THROWS(t.at({0}));
}

TEST_CASE("matmul basics") {
    const Tensor identity = Tensor::from({2, 2}, {1, 0, 0, 1});
    const Tensor b = Tensor::from({2, 2}, {3, -1, 2, 5});
    CHECK(bitwise_equal(matmul(identity, b), b));

    const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    const Tensor v = Tensor::from({2, 1}, {5, 6});
    const Tensor p = matmul(a, v);
    CHECK(p.at({0, 0}) == 17.0);
    CHECK(p.at({1, 0}) == 39.0);

    Rng rng(3);
    const Tensor big_a = Tensor::uniform({3, 4}, -1, 1, rng);
    const Tensor big_b = Tensor::uniform({4, 5}, -1, 1, rng);
    CHECK(matmul(big_a, big_b).shape() == std::vector<std::size_t>{3, 5});

    CHECK_THROWS(matmul(big_a, big_a));
}

TEST_CASE("matmul associativity within 1e-9 relative error") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor a = Tensor::uniform({4, 6}, -1, 1, rng);
        const Tensor b = Tensor::uniform({6, 3}, -1, 1, rng);
        const Tensor c = Tensor::uniform({3, 5}, -1, 1, rng);
        const Tensor left = matmul(matmul(a, b), c);
        const Tensor right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            const double l = left.data()[i], r = right.data()[i];
            CHECK(std::abs(l - r) <= 1e-9 * std::max({std::abs(l), std::abs(r), 1.0}));
        }
    }
}

TEST_CASE("reduce examples") {
    const Tensor ones = Tensor::full({2, 3}, 1.0);
    CHECK(reduce(ones, {0, 1}, ReduceOp::Sum).scalar() == 6.0);

    const Tensor m = Tensor::from({2, 2}, {1, 5, 4, 2});
    const Tensor mx = reduce(m, {0}, ReduceOp::Max);
    CHECK(mx.at({0}) == 4.0);
    CHECK(mx.at({1}) == 5.0);

    const Tensor mean = reduce(Tensor::from({2, 2}, {2, 4, 6, 8}), {0, 1}, ReduceOp::Mean);
    CHECK(mean.scalar() == 5.0);

    CHECK_THROWS(reduce(m, {0, 0}, ReduceOp::Sum));
    CHECK_THROWS(reduce(m, {2}, ReduceOp::Sum));
}

TEST_CASE("reduce is axis-order independent") {
    Rng rng(5);
    const Tensor t = Tensor::uniform({3, 4, 5}, -2, 2, rng);
    CHECK(bitwise_equal(reduce(t, {0, 2}, ReduceOp::Sum), reduce(t, {2, 0}, ReduceOp::Sum)));
    CHECK(bitwise_equal(reduce(t, {1, 0}, ReduceOp::Mean), reduce(t, {0, 1}, ReduceOp::Mean)));
}

TEST_CASE("flatten-reshape round trip") {
    Rng rng(9);
    const Tensor t = Tensor::uniform({3, 4, 5}, -1, 1, rng);
    const Tensor flat = t.reshaped({60});
    const Tensor back = flat.reshaped({3, 4, 5});
    CHECK(bitwise_equal(back, t));
    const Tensor permuted = t.reshaped({5, 12});  // same element count
    CHECK(permuted.size() == t.size());
    CHECK_THROWS(t.reshaped({7}));
}

TEST_CASE("rng reproducibility over long streams") {
    Rng a(123), b(123);
    for (int i = 0; i < 10000; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(124);
    bool differs = false;
    Rng a2(123);
    for (int i = 0; i < 16; ++i) differs |= (a2.next_u64() != c.next_u64());
    CHECK(differs);
}

TEST_CASE("rng forks are independent of parent consumption") {
    Rng a(55);
    Rng fork_before = a.fork(1);
    a.next_u64();
    Rng fork_after = a.fork(1);
    CHECK(fork_before.next_u64() == fork_after.next_u64());
}

TEST_CASE("serialization round trip is byte-exact") {
    Rng rng(17);
    const Tensor t = Tensor::uniform({2, 3, 4}, -5, 5, rng);
    std::ostringstream os1(std::ios::binary);
    t.write(os1);
    std::istringstream is(os1.str(), std::ios::binary);
    const Tensor back = Tensor::read(is);
    CHECK(bitwise_equal(back, t));

    std::ostringstream os2(std::ios::binary);
    back.write(os2);
    CHECK(os1.str() == os2.str());

    // rank byte + 3 extents + 24 doubles
    CHECK(os1.str().size() == 1 + 3 * 8 + 24 * 8);

    std::istringstream truncated(os1.str().substr(0, 40), std::ios::binary);
    CHECK_THROWS(Tensor::read(truncated));
}

TEST_CASE("parallel kernels match the serial reference bitwise") {
    Rng rng(21);
    const Tensor a = Tensor::uniform({33, 17}, -1, 1, rng);
    const Tensor b = Tensor::uniform({17, 29}, -1, 1, rng);
    CHECK(bitwise_equal(kernels::matmul(a, b), serial::matmul(a, b)));

    const Tensor x = Tensor::uniform({2, 13, 11, 5}, -1, 1, rng);
    const Tensor k = Tensor::uniform({3, 3, 5, 7}, -1, 1, rng);
    const Tensor bias = Tensor::uniform({7}, -1, 1, rng);
    CHECK(bitwise_equal(kernels::conv2d_forward(x, k, bias), serial::conv2d_forward(x, k, bias)));

    const Tensor gout = Tensor::uniform({2, 11, 9, 7}, -1, 1, rng);
    CHECK(bitwise_equal(kernels::conv2d_grad_input(gout, k, 13, 11),
                        serial::conv2d_grad_input(gout, k, 13, 11)));
    CHECK(bitwise_equal(kernels::conv2d_grad_kernel(x, gout, 3, 3),
                        serial::conv2d_grad_kernel(x, gout, 3, 3)));
    CHECK(bitwise_equal(kernels::maxpool2x2_forward(x), serial::maxpool2x2_forward(x)));
    CHECK(bitwise_equal(kernels::global_avg_pool(x), serial::global_avg_pool(x)));
}
