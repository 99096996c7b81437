#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "nodulenet/gradcheck.hpp"
#include "nodulenet/layers.hpp"

using namespace nodulenet;

namespace {

template <typename T>
void fill_randn(std::vector<T>& v, uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    for (auto& x : v) x = static_cast<T>(d(rng));
}

template <typename T>
Tensor<T> randn(Shape shape, uint64_t seed, double scale = 1.0) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    fill_randn(t.data(), seed, scale);
    return t;
}

} // namespace

TEST_CASE("conv3d matches the nested-loop reference on random shapes") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 25; ++trial) {
        const int64_t b = 1 + rng() % 2, cin = 1 + rng() % 3, cout = 1 + rng() % 4;
        const int64_t X = 3 + rng() % 5, Y = 3 + rng() % 5, Z = 1 + rng() % 4;
        const int64_t k = (trial % 3 == 0) ? 1 : 3;
        kernels::Conv3dDims d{b, cin, cout, X, Y, Z, k, k, k};
        std::vector<double> x(b * cin * d.vox()), w(cout * cin * d.ksize()), bias(cout);
        fill_randn(x, rng());
        fill_randn(w, rng());
        fill_randn(bias, rng());
        std::vector<double> y_ref(b * cout * d.vox()), y(y_ref.size());
        std::vector<double> col(static_cast<size_t>(d.col_rows()) * d.vox());
        kernels::conv3d_forward_reference(x.data(), w.data(), bias.data(), y_ref.data(), d);
        kernels::conv3d_forward(x.data(), w.data(), bias.data(), y.data(), col.data(), d);
        double max_rel = 0;
        for (size_t i = 0; i < y.size(); ++i)
            max_rel = std::max(max_rel,
                               std::abs(y[i] - y_ref[i]) / std::max(1.0, std::abs(y_ref[i])));
        CHECK(max_rel < 1e-6);
    }
}

TEST_CASE("conv3d layer gradients (64-bit)") {
    Conv3d<double> conv(2, 3, /*seed=*/7, "t/conv");
    auto x0 = randn<double>({2, 2, 4, 4, 3}, 1, 0.5);

    TensorFn<double> f_x = [&](Tape<double>& t, Tensor<double> p) {
        return reduce_sum(t, square(t, conv.forward(t, p)));
    };
    CHECK(gradient_check<double>(f_x, x0, 1e-5) < 1e-6);

    TensorFn<double> f_w = [&](Tape<double>& t, Tensor<double> p) {
        Conv3d<double> c = conv;
        c.weight = p;
        return reduce_sum(t, square(t, c.forward(t, x0)));
    };
    auto w0 = randn<double>(conv.weight.shape(), 2, 0.2);
    CHECK(gradient_check_sampled<double>(f_w, w0, 1e-5, 60, 5) < 1e-6);

    TensorFn<double> f_b = [&](Tape<double>& t, Tensor<double> p) {
        Conv3d<double> c = conv;
        c.bias = p;
        return reduce_sum(t, square(t, c.forward(t, x0)));
    };
    CHECK(gradient_check<double>(f_b, randn<double>({3}, 3), 1e-5) < 1e-6);

    Tape<double> tape;
    CHECK_THROWS_AS(conv.forward(tape, randn<double>({1, 5, 3, 3, 3}, 4)), DimensionError);
    CHECK_THROWS_AS(conv.forward(tape, randn<double>({4, 4, 3}, 4)), DimensionError);
}

TEST_CASE("maxpool forward, stride semantics, tie routing") {
    MaxPool3d pool{2, 2, 1};
    Tape<double> tape;
    // [1,1,2,2,1]: one 2x2x1 window
    auto x = Tensor<double>::from({1, 1, 2, 2, 1}, {1, 4, 2, 3}, true);
    auto y = pool.forward(tape, x);
    CHECK(y.shape() == Shape{1, 1, 1, 1, 1});
    CHECK(y.item() == 4);
    tape.backward(reduce_sum(tape, y));
    CHECK(x.grad() == std::vector<double>{0, 1, 0, 0});

    // odd trailing extent is dropped (floor division)
    Tape<double> t2;
    auto x2 = randn<double>({1, 2, 5, 5, 3}, 8);
    auto y2 = pool.forward(t2, x2);
    CHECK(y2.shape() == Shape{1, 2, 2, 2, 3});

    // tie: first element in scan order wins
    Tape<double> t3;
    auto x3 = Tensor<double>::from({1, 1, 2, 2, 1}, {7, 7, 7, 7}, true);
    auto y3 = pool.forward(t3, x3);
    t3.backward(reduce_sum(t3, y3));
    CHECK(x3.grad() == std::vector<double>{1, 0, 0, 0});

    Tape<double> t4;
    MaxPool3d deep{2, 2, 2};
    CHECK_THROWS_AS(deep.forward(t4, randn<double>({1, 1, 2, 2, 1}, 9)), DimensionError);
}

TEST_CASE("maxpool gradcheck") {
    MaxPool3d pool{2, 2, 2};
    TensorFn<double> f = [&](Tape<double>& t, Tensor<double> p) {
        return reduce_sum(t, square(t, pool.forward(t, p)));
    };
    // distinct values avoid ties at the finite-difference scale
    auto x = Tensor<double>::zeros({1, 2, 4, 4, 2});
    for (size_t i = 0; i < x.data().size(); ++i) x.data()[i] = std::sin(i * 1.7) * (1 + i % 5);
    CHECK(gradient_check<double>(f, x, 1e-6) < 1e-6);
}

TEST_CASE("batchnorm training statistics and running updates") {
    BatchNorm3d<double> bn(2);
    // large spread so eps=1e-3 is negligible next to the variance
    auto x = randn<double>({4, 2, 3, 3, 2}, 13, 10.0);
    Tape<double> tape;
    auto y = bn.forward(tape, x, Mode::Train);

    const int64_t vox = 3 * 3 * 2, b = 4;
    for (int64_t c = 0; c < 2; ++c) {
        double s = 0, s2 = 0, xs = 0;
        for (int64_t i = 0; i < b; ++i)
            for (int64_t v = 0; v < vox; ++v) {
                double val = y.data()[(i * 2 + c) * vox + v];
                s += val;
                s2 += val * val;
                xs += x.data()[(i * 2 + c) * vox + v];
            }
        const double n = b * vox;
        const double mean = s / n, var = s2 / n - mean * mean;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(var - 1.0) < 1e-4);
        // running stats: 0.99 * init + 0.01 * batch
        const double batch_mean = xs / n;
        CHECK(bn.running_mean[c] == doctest::Approx(0.01 * batch_mean).epsilon(1e-9));
    }

    CHECK_THROWS_AS(bn.forward(tape, randn<double>({1, 2, 3, 3, 2}, 1), Mode::Train),
                    ContractError);
    CHECK_THROWS_AS(bn.forward(tape, randn<double>({2, 3, 3, 3, 2}, 1), Mode::Train),
                    DimensionError);
}

TEST_CASE("batchnorm inference uses running stats; frozen pins them") {
    BatchNorm3d<double> bn(1);
    bn.running_mean = {2.0};
    bn.running_var = {4.0};
    Tape<double> tape;
    auto x = Tensor<double>::from({1, 1, 1, 1, 2}, {2.0, 4.0});
    auto y = bn.forward(tape, x, Mode::Infer);
    CHECK(y.data()[0] == doctest::Approx(0.0));
    CHECK(y.data()[1] == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-3)));

    bn.frozen = true;
    auto before_m = bn.running_mean, before_v = bn.running_var;
    auto x2 = randn<double>({4, 1, 2, 2, 2}, 21, 5.0);
    Tape<double> t2;
    auto y_frozen = bn.forward(t2, x2, Mode::Train); // behaves like inference
    CHECK(bn.running_mean == before_m);
    CHECK(bn.running_var == before_v);
    Tape<double> t3;
    bn.frozen = false;
    // unfrozen train mode on the same input gives different outputs
    auto y_train = bn.forward(t3, x2, Mode::Train);
    CHECK(y_frozen.data() != y_train.data());
}

TEST_CASE("batchnorm gradcheck, train and infer") {
    BatchNorm3d<double> bn(2);
    bn.gamma.data() = {1.3, 0.7};
    bn.beta.data() = {0.1, -0.2};
    auto x0 = randn<double>({3, 2, 2, 2, 1}, 29, 2.0);

    TensorFn<double> f_train = [&](Tape<double>& t, Tensor<double> p) {
        BatchNorm3d<double> b = bn; // copies running stats; params shared
        return reduce_sum(t, square(t, b.forward(t, p, Mode::Train)));
    };
    CHECK(gradient_check<double>(f_train, x0, 1e-5) < 1e-7);

    TensorFn<double> f_infer = [&](Tape<double>& t, Tensor<double> p) {
        BatchNorm3d<double> b = bn;
        return reduce_sum(t, square(t, b.forward(t, p, Mode::Infer)));
    };
    CHECK(gradient_check<double>(f_infer, x0, 1e-5) < 1e-7);

    TensorFn<double> f_gamma = [&](Tape<double>& t, Tensor<double> p) {
        BatchNorm3d<double> b = bn;
        b.gamma = p;
        return reduce_sum(t, square(t, b.forward(t, x0, Mode::Train)));
    };
    CHECK(gradient_check<double>(f_gamma, randn<double>({2}, 31), 1e-5) < 1e-7);

    TensorFn<double> f_beta = [&](Tape<double>& t, Tensor<double> p) {
        BatchNorm3d<double> b = bn;
        b.beta = p;
        return reduce_sum(t, square(t, b.forward(t, x0, Mode::Train)));
    };
    CHECK(gradient_check<double>(f_beta, randn<double>({2}, 37), 1e-5) < 1e-7);
}

TEST_CASE("parameter initialization is (seed, name)-keyed") {
    Conv3d<float> a(2, 4, 5, "path/conv1");
    Conv3d<float> b(2, 4, 5, "path/conv1");
    Conv3d<float> c(2, 4, 5, "path/conv2");
    Conv3d<float> d(2, 4, 6, "path/conv1");
    CHECK(a.weight.data() == b.weight.data());
    CHECK(a.weight.data() != c.weight.data());
    CHECK(a.weight.data() != d.weight.data());
    for (float v : a.bias.data()) CHECK(v == 0.0f);

    // fan-in uniform bound
    const double bound = std::sqrt(6.0 / (2 * 27));
    for (float v : a.weight.data()) CHECK(std::abs(v) <= bound);

    LinearLayer<float> l1(8, 3, 5, "fc");
    LinearLayer<float> l2(8, 3, 5, "fc");
    CHECK(l1.weight.data() == l2.weight.data());
}
