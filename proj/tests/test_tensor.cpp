#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "nodulenet/gradcheck.hpp"
#include "nodulenet/ops.hpp"

using namespace nodulenet;

namespace {

Tensor<double> randn(Shape shape, uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.data()) v = d(rng);
    return t;
}

} // namespace

TEST_CASE("tensor factories and contracts") {
    auto z = Tensor<float>::zeros({2, 3});
    CHECK(z.size() == 6);
    CHECK(z.rank() == 2);
    for (float v : z.data()) CHECK(v == 0.0f);

    auto f = Tensor<float>::full({4}, 2.5f);
    for (float v : f.data()) CHECK(v == 2.5f);

    CHECK_THROWS_AS(Tensor<float>::from({2, 2}, {1.f, 2.f, 3.f}), DimensionError);
    CHECK_THROWS_AS(Tensor<float>::zeros({2, 0}), DimensionError);
    CHECK_THROWS_AS(z.item(), ContractError);
    CHECK(Tensor<float>::scalar(3.f).item() == 3.f);
}

TEST_CASE("tensor handles share storage") {
    auto a = Tensor<float>::from({2}, {1.f, 2.f});
    Tensor<float> b = a;
    b.data()[0] = 9.f;
    CHECK(a.data()[0] == 9.f);
    CHECK(a.id() == b.id());
}

TEST_CASE("tape backward requires scalar loss") {
    Tape<float> tape;
    auto x = Tensor<float>::from({2}, {1.f, 2.f}, true);
    CHECK_THROWS_AS(tape.backward(x), ContractError);
}

TEST_CASE("add / mul / scale values and gradients") {
    Tape<double> tape;
    auto a = Tensor<double>::from({3}, {1, 2, 3}, true);
    auto b = Tensor<double>::from({3}, {4, 5, 6}, true);
    auto s = reduce_sum(tape, mul(tape, add(tape, a, b), scale(tape, b, 2.0)));
    CHECK(s.item() == doctest::Approx(5 * 8 + 7 * 10 + 9 * 12));
    tape.backward(s);
    // d/da_i = 2 b_i, d/db_i = 2 b_i + 2 (a_i + b_i)
    CHECK(a.grad()[0] == doctest::Approx(8.0));
    CHECK(b.grad()[0] == doctest::Approx(8.0 + 10.0));

    auto c = Tensor<double>::from({2}, {1, 1}, true);
    CHECK_THROWS_AS(add(tape, a, c), DimensionError);
}

TEST_CASE("matmul matches manual product and gradcheck") {
    Tape<double> tape;
    auto a = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor<double>::from({3, 2}, {7, 8, 9, 10, 11, 12});
    auto y = matmul(tape, a, b);
    CHECK(y.data() == std::vector<double>{58, 64, 139, 154});

    auto w = randn({3, 4}, 11);
    TensorFn<double> f = [&](Tape<double>& t, Tensor<double> p) {
        return reduce_sum(t, square(t, matmul(t, p, w)));
    };
    CHECK(gradient_check<double>(f, randn({2, 3}, 5), 1e-5) < 1e-7);
    CHECK_THROWS_AS(matmul(tape, a, a), DimensionError);
}

TEST_CASE("reshape and concat") {
    Tape<double> tape;
    auto a = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    auto r = reshape(tape, a, {3, 2});
    CHECK(r.data() == a.data());
    CHECK_THROWS_AS(reshape(tape, a, {4, 2}), DimensionError);

    auto b = Tensor<double>::from({2, 1}, {10, 20});
    auto r2 = reshape(tape, a, {2, 3});
    auto c = concat<double>(tape, {r2, b}, 1);
    CHECK(c.shape() == Shape{2, 4});
    CHECK(c.data() == std::vector<double>{1, 2, 3, 10, 4, 5, 6, 20});

    auto c0 = concat<double>(tape, {r2, r2}, 0);
    CHECK(c0.shape() == Shape{4, 3});
    CHECK(c0.data()[9] == 4);

    CHECK_THROWS_AS(concat<double>(tape, {}, 0), ContractError);
    CHECK_THROWS_AS(concat<double>(tape, {a, b}, 0), DimensionError);

    // gradient flows through concat to each part
    auto w = randn({2, 4}, 3);
    TensorFn<double> f = [&](Tape<double>& t, Tensor<double> p) {
        auto other = Tensor<double>::from({2, 1}, {0.5, -0.5});
        auto cc = concat<double>(t, {p, other}, 1);
        return reduce_sum(t, mul(t, cc, w));
    };
    CHECK(gradient_check<double>(f, randn({2, 3}, 7), 1e-5) < 1e-8);
}

TEST_CASE("reductions and maximum") {
    Tape<double> tape;
    auto a = Tensor<double>::from({4}, {1, 2, 3, 4}, true);
    CHECK(reduce_sum(tape, a).item() == 10.0);
    CHECK(reduce_mean(tape, a).item() == 2.5);

    auto b = Tensor<double>::from({2}, {1, 5}, true);
    auto c = Tensor<double>::from({2}, {1, 2}, true);
    Tape<double> t2;
    auto m = maximum(t2, b, c);
    CHECK(m.data() == std::vector<double>{1, 5});
    auto s = reduce_sum(t2, m);
    t2.backward(s);
    // tie at index 0 routes the gradient to the first argument
    CHECK(b.grad() == std::vector<double>{1, 1});
    CHECK(c.grad() == std::vector<double>{0, 0});
}

TEST_CASE("elementwise nonlinearities") {
    Tape<double> tape;
    auto x = Tensor<double>::from({3}, {-1, 0, 2});
    CHECK(relu(tape, x).data() == std::vector<double>{0, 0, 2});
    CHECK(sigmoid(tape, Tensor<double>::scalar(0)).item() == doctest::Approx(0.5));
    CHECK(exp_op(tape, Tensor<double>::scalar(1)).item() == doctest::Approx(std::exp(1.0)));
    CHECK(square(tape, Tensor<double>::scalar(-3)).item() == 9.0);
    CHECK(sqrt_op(tape, Tensor<double>::scalar(4)).item() == 2.0);
    CHECK_THROWS_AS(log_op(tape, Tensor<double>::scalar(0)), DomainError);
    CHECK_THROWS_AS(sqrt_op(tape, Tensor<double>::scalar(-1)), DomainError);

    for (auto f : std::vector<TensorFn<double>>{
             [](Tape<double>& t, Tensor<double> p) { return reduce_sum(t, sigmoid(t, p)); },
             [](Tape<double>& t, Tensor<double> p) { return reduce_sum(t, exp_op(t, p)); },
             [](Tape<double>& t, Tensor<double> p) { return reduce_sum(t, square(t, p)); },
         })
        CHECK(gradient_check<double>(f, randn({5}, 17, 0.5), 1e-5) < 1e-8);
}

TEST_CASE("linear layer op") {
    Tape<double> tape;
    auto x = Tensor<double>::from({1, 2}, {1, 2});
    auto w = Tensor<double>::from({3, 2}, {1, 0, 0, 1, 1, 1});
    auto b = Tensor<double>::from({3}, {0.5, -0.5, 0});
    auto y = linear(tape, x, w, b);
    CHECK(y.data() == std::vector<double>{1.5, 1.5, 3});

    TensorFn<double> f = [&](Tape<double>& t, Tensor<double> p) {
        return reduce_sum(t, square(t, linear(t, p, w, b)));
    };
    CHECK(gradient_check<double>(f, randn({4, 2}, 23), 1e-5) < 1e-7);
    CHECK_THROWS_AS(linear(tape, x, Tensor<double>::from({3, 3}, std::vector<double>(9, 1.0)), b),
                    DimensionError);
}

TEST_CASE("global average pool") {
    Tape<double> tape;
    auto x = Tensor<double>::from({1, 2, 2, 1, 1}, {1, 3, 10, 20});
    auto y = global_avg_pool(tape, x);
    CHECK(y.shape() == Shape{1, 2});
    CHECK(y.data() == std::vector<double>{2, 15});

    TensorFn<double> f = [](Tape<double>& t, Tensor<double> p) {
        return reduce_sum(t, square(t, global_avg_pool(t, p)));
    };
    CHECK(gradient_check<double>(f, randn({2, 3, 2, 2, 2}, 31), 1e-5) < 1e-8);
}

TEST_CASE("fan-out accumulates gradients") {
    Tape<double> tape;
    auto x = Tensor<double>::from({1}, {3.0}, true);
    auto y = add(tape, square(tape, x), scale(tape, x, 2.0)); // x^2 + 2x
    tape.backward(reduce_sum(tape, y));
    CHECK(x.grad()[0] == doctest::Approx(2 * 3.0 + 2.0));
}

TEST_CASE("gradient check rejects bad epsilon") {
    TensorFn<double> f = [](Tape<double>& t, Tensor<double> p) { return reduce_sum(t, p); };
    CHECK_THROWS_AS(gradient_check<double>(f, randn({2}, 1), 1.0), ContractError);
    CHECK_THROWS_AS(gradient_check<double>(f, randn({2}, 1), 0.0), ContractError);
}
