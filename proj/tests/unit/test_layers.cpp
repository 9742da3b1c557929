#include "maskshape/nn/layers.hpp"
#include "nn_fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace maskshape;
using namespace maskshape::nn;
using maskshape::testing::checked_away_from_kinks;
using maskshape::testing::random_tensor;

namespace {

constexpr int kTrials = 100;

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi)
{
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

} // namespace

TEST_CASE("conv2d hand cases")
{
    std::mt19937_64 rng(1);
    Conv2d<double> doubling(1, 1, 1, 1, 1, 0, rng);
    doubling.weight().value[0] = 2.0;
    const Tensor<double> x = random_tensor({2, 1, 5, 3}, rng);
    const Tensor<double> y = doubling.forward(x, Mode::Eval);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(y[i] == 2.0 * x[i]);
    }

    Conv2d<double> ones(1, 1, 3, 3, 1, 0, rng);
    ones.weight().value.fill(1.0);
    const Tensor<double> sum = ones.forward(Tensor<double>({1, 1, 3, 3}, 1.0), Mode::Eval);
    CHECK(sum.shape() == Tensor<double>::Shape{1, 1, 1, 1});
    CHECK(sum[0] == 9.0);

    Conv2d<double> strided(2, 3, 3, 2, 2, 1, rng);
    const Tensor<double> s = strided.forward(random_tensor({1, 2, 7, 6}, rng), Mode::Eval);
    CHECK(s.shape() == Tensor<double>::Shape{1, 3, (7 + 2 - 3) / 2 + 1, (6 + 2 - 2) / 2 + 1});

    CHECK_THROWS_AS(ones.forward(Tensor<double>({1, 2, 3, 3}), Mode::Eval), std::invalid_argument);
    CHECK_THROWS_AS(ones.forward(Tensor<double>({1, 1, 2, 2}), Mode::Eval), std::invalid_argument);
}

TEST_CASE("conv2d matches a direct loop")
{
    std::mt19937_64 rng(2);
    Conv2d<double> conv(3, 4, 3, 5, 2, 2, rng);
    for (std::size_t i = 0; i < conv.bias().value.size(); ++i) {
        conv.bias().value[i] = 0.1 * static_cast<double>(i);
    }
    const Tensor<double> x = random_tensor({2, 3, 9, 8}, rng);
    const Tensor<double> y = conv.forward(x, Mode::Eval);
    const auto& w = conv.weight().value;
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t o = 0; o < 4; ++o) {
            for (std::size_t oy = 0; oy < y.dim(2); ++oy) {
                for (std::size_t ox = 0; ox < y.dim(3); ++ox) {
                    double acc = conv.bias().value[o];
                    for (std::size_t c = 0; c < 3; ++c) {
                        for (std::size_t ky = 0; ky < 3; ++ky) {
                            for (std::size_t kx = 0; kx < 5; ++kx) {
                                const long iy = static_cast<long>(oy * 2 + ky) - 2;
                                const long ix = static_cast<long>(ox * 2 + kx) - 2;
                                if (iy < 0 || ix < 0 || iy >= 9 || ix >= 8) {
                                    continue;
                                }
                                acc += w[((o * 3 + c) * 3 + ky) * 5 + kx] * x[((n * 3 + c) * 9 + iy) * 8 + ix];
                            }
                        }
                    }
                    CHECK(y[((n * 4 + o) * y.dim(2) + oy) * y.dim(3) + ox] == doctest::Approx(acc).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("stride-1 conv2d matches a direct loop across row widths")
{
    std::mt19937_64 rng(3);
    const std::size_t widths[] = {3, 8, 16, 32, 64, 70, 128};
    for (std::size_t w : widths) {
        for (std::size_t k : {1, 3, 5}) {
            const std::size_t pad = std::min<std::size_t>(k / 2 + (w % 2), k - 1);
            const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 7), h = pick(rng, k, 5);
            Conv2d<double> conv(cin, cout, k, k, 1, pad, rng);
            const Tensor<double> x = random_tensor({2, cin, h, w}, rng);
            const Tensor<double> y = conv.forward(x, Mode::Eval);
            const auto& wt = conv.weight().value;
            const std::size_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
            REQUIRE(y.shape() == Tensor<double>::Shape{2, cout, ho, wo});
            double worst = 0.0;
            for (std::size_t n = 0; n < 2; ++n) {
                for (std::size_t o = 0; o < cout; ++o) {
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            double acc = conv.bias().value[o];
                            for (std::size_t c = 0; c < cin; ++c) {
                                for (std::size_t ky = 0; ky < k; ++ky) {
                                    for (std::size_t kx = 0; kx < k; ++kx) {
                                        const long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
                                        const long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
                                        if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) {
                                            continue;
                                        }
                                        acc += wt[((o * cin + c) * k + ky) * k + kx] *
                                               x[((n * cin + c) * h + static_cast<std::size_t>(iy)) * w +
                                                 static_cast<std::size_t>(ix)];
                                    }
                                }
                            }
                            const double got = y[((n * cout + o) * ho + oy) * wo + ox];
                            worst = std::max(worst, std::abs(got - acc));
                        }
                    }
                }
            }
            CAPTURE(w);
            CAPTURE(k);
            CHECK(worst < 1e-12);
        }
    }
}

TEST_CASE("batch norm definitions")
{
    std::mt19937_64 rng(3);
    BatchNorm2d<double> bn(3);
    const Tensor<double> x = random_tensor({4, 3, 5, 5}, rng, 3.0);
    const Tensor<double> y = bn.forward(x, Mode::Train);
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t n = 0; n < 4; ++n) {
            for (std::size_t i = 0; i < 25; ++i) {
                const double v = y[(n * 3 + c) * 25 + i];
                mean += v;
                sq += v * v;
            }
        }
        mean /= 100.0;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(sq / 100.0 - mean * mean - 1.0) < 1e-5);
    }

    Tensor<double> constant({3, 3, 2, 2}, 4.2);
    const Tensor<double> zero = BatchNorm2d<double>(3).forward(constant, Mode::Train);
    CHECK(zero.values().size() == 36);
    for (double v : zero.values()) {
        CHECK(v == 0.0);
    }

    CHECK_THROWS_AS(bn.forward(random_tensor({1, 3, 1, 1}, rng), Mode::Train), std::invalid_argument);

    // Running statistics: momentum 0.1 toward the unbiased batch variance.
    BatchNorm2d<double> fresh(1);
    Tensor<double> two({2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
    fresh.forward(two, Mode::Train);
    CHECK(fresh.running_mean()[0] == doctest::Approx(0.2));
    CHECK(fresh.running_var()[0] == doctest::Approx(0.9 + 0.1 * 2.0));
    const Tensor<double> eval = fresh.forward(Tensor<double>({1, 1, 1, 1}, 0.2), Mode::Eval);
    CHECK(std::abs(eval[0]) < 1e-12);
}

TEST_CASE("relu and max pool definitions")
{
    ReLU<double> relu;
    const Tensor<double> r = relu.forward(Tensor<double>({1, 3}, std::vector<double>{-1.0, 3.0, 0.0}), Mode::Eval);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 3.0);
    const Tensor<double> g = relu.backward(Tensor<double>({1, 3}, 1.0));
    CHECK(g[2] == 0.0);

    MaxPool2d<double> pool;
    const Tensor<double> p = pool.forward(Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}), Mode::Eval);
    CHECK(p.size() == 1);
    CHECK(p[0] == 4.0);
    const Tensor<double> pg = pool.backward(Tensor<double>({1, 1, 1, 1}, 1.0));
    CHECK(pg.values()[3] == 1.0);
    CHECK(pg[0] + pg[1] + pg[2] == 0.0);

    // Ties route to the first entry in row-major order.
    pool.forward(Tensor<double>({1, 1, 2, 2}, 5.0), Mode::Eval);
    CHECK(pool.backward(Tensor<double>({1, 1, 1, 1}, 1.0))[0] == 1.0);

    for (std::size_t odd : {3u, 5u, 7u}) {
        const Tensor<double> out = pool.forward(Tensor<double>({1, 2, odd, odd + 1}, -1.0), Mode::Eval);
        CHECK(out.dim(2) == (odd + 1) / 2);
        CHECK(out.dim(3) == (odd + 1) / 2);
        for (double v : out.values()) {
            CHECK(v == -1.0);
        }
    }
}

TEST_CASE("linear identity")
{
    std::mt19937_64 rng(4);
    Linear<double> lin(3, 3, rng);
    lin.weight().value.fill(0.0);
    for (std::size_t i = 0; i < 3; ++i) {
        lin.weight().value[i * 3 + i] = 1.0;
    }
    const Tensor<double> x = random_tensor({2, 3}, rng);
    CHECK(lin.forward(x, Mode::Eval) == x);
    CHECK_THROWS_AS(lin.forward(random_tensor({2, 4}, rng), Mode::Eval), std::invalid_argument);
}

TEST_CASE("dense block and transition bookkeeping")
{
    std::mt19937_64 rng(5);
    for (std::size_t c : {1u, 3u, 16u}) {
        for (std::size_t l : {1u, 2u, 3u}) {
            for (std::size_t g : {1u, 6u, 12u}) {
                DenseBlock<double> block(c, l, g, rng);
                const std::size_t side = 3 + (c + l + g) % 5;
                const Tensor<double> y = block.forward(random_tensor({2, c, side, side}, rng), Mode::Train);
                CHECK(y.dim(1) == c + l * g);
                CHECK(block.out_channels() == c + l * g);
                CHECK(y.dim(2) == side);
                CHECK(y.dim(3) == side);
            }
        }
    }
    DenseBlock<float> full_size(16, 3, 12, rng);
    CHECK(full_size.out_channels() == 52);

    Transition<double> halve(8, 8, rng);
    const Tensor<double> t = halve.forward(random_tensor({2, 8, 32, 32}, rng), Mode::Train);
    CHECK(t.shape() == Tensor<double>::Shape{2, 8, 16, 16});
}

TEST_CASE("forward passes are deterministic")
{
    std::mt19937_64 a(6), b(6);
    DenseBlock<float> x(2, 2, 3, a), y(2, 2, 3, b);
    Tensor<float> in({2, 2, 6, 6});
    for (std::size_t i = 0; i < in.size(); ++i) {
        in[i] = std::sin(static_cast<float>(i));
    }
    CHECK(x.forward(in, Mode::Train) == y.forward(in, Mode::Train));
}

TEST_CASE("repeated forwards are bit-identical regardless of heap state")
{
    std::mt19937_64 rng(61);
    Conv2d<float> conv(3, 5, 3, 3, 1, 1, rng);
    Linear<float> lin(7, 3, rng);
    Tensor<float> x({2, 3, 6, 6}), v({4, 7});
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = std::sin(0.37f * static_cast<float>(i));
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = std::cos(0.11f * static_cast<float>(i));
    }
    const Tensor<float> y0 = conv.forward(x, Mode::Eval);
    const Tensor<float> z0 = lin.forward(v, Mode::Eval);
    std::vector<std::vector<char>> junk;
    for (int i = 0; i < 20; ++i) {
        junk.emplace_back(static_cast<std::size_t>(1 + 13 * i));
        const Tensor<float> xc = x, vc = v;
        CHECK(conv.forward(xc, Mode::Eval) == y0);
        CHECK(lin.forward(vc, Mode::Eval) == z0);
    }
}

TEST_CASE("non-finite values raise instead of propagating")
{
    std::mt19937_64 rng(7);
    Sequential<double> net;
    net.add<Linear<double>>(2, 2, rng);
    net.add<ReLU<double>>();
    Tensor<double> bad({1, 2}, std::vector<double>{1.0, std::nan("")});
    CHECK_THROWS_AS(net.forward(bad, Mode::Eval), NonFiniteError);
}

TEST_CASE("parameter names are stable and unique")
{
    std::mt19937_64 rng(8);
    Sequential<float> net;
    net.add<Conv2d<float>>(1, 4, 3, 3, 1, 1, rng, false);
    net.add<DenseBlock<float>>(4, 2, 2, rng);
    net.add<Transition<float>>(8, 4, rng);
    net.set_name("branch");
    std::set<std::string> names;
    for (auto* p : net.parameters()) {
        CHECK(names.insert(p->name).second);
    }
    for (const auto& b : net.buffers()) {
        CHECK(names.insert(b.name).second);
    }
    CHECK(names.count("branch.0.weight") == 1);
    CHECK(names.count("branch.0.bias") == 0);
    CHECK(names.count("branch.1.0.0.running_var") == 1);
}

// ---------------------------------------------------------------- gradient checks

TEST_CASE("linear gradients")
{
    std::mt19937_64 rng(100);
    double worst = 0.0;
    for (int t = 0; t < kTrials; ++t) {
        const std::size_t in = pick(rng, 1, 8), out = pick(rng, 1, 8), n = pick(rng, 1, 4);
        Linear<double> lin(in, out, rng);
        worst = std::max(worst, grad_check(lin, random_tensor({n, in}, rng), Mode::Train).max_relative_error);
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("conv2d gradients")
{
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int t = 0; t < kTrials; ++t) {
        const std::size_t cin = pick(rng, 1, 4), cout = pick(rng, 1, 4), k = pick(rng, 1, 3);
        const std::size_t h = pick(rng, k, 8), w = pick(rng, k, 8), s = pick(rng, 1, 2), p = pick(rng, 0, 2);
        Conv2d<double> conv(cin, cout, k, k, s, p, rng, t % 2 == 0);
        worst = std::max(worst, grad_check(conv, random_tensor({pick(rng, 1, 4), cin, h, w}, rng)).max_relative_error);
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("conv2d gradients on rows wider than one strip")
{
    std::mt19937_64 rng(105);
    for (std::size_t w : {64, 70}) {
        Conv2d<double> conv(2, 3, 3, 3, 1, 1, rng);
        CHECK(grad_check(conv, random_tensor({1, 2, 3, w}, rng)).max_relative_error < 1e-5);
    }
}

TEST_CASE("batch norm gradients")
{
    std::mt19937_64 rng(102);
    double worst_train = 0.0, worst_eval = 0.0;
    for (int t = 0; t < kTrials; ++t) {
        const std::size_t c = pick(rng, 1, 4), h = pick(rng, 1, 8), w = pick(rng, 1, 8), n = pick(rng, 2, 4);
        BatchNorm2d<double> bn(c);
        for (std::size_t i = 0; i < c; ++i) {
            bn.scale().value[i] = 0.5 + 0.25 * static_cast<double>(i);
            bn.shift().value[i] = 0.1 * static_cast<double>(i);
        }
        const Tensor<double> x = random_tensor({n, c, h, w}, rng, 2.0);
        worst_train = std::max(worst_train, grad_check(bn, x, Mode::Train).max_relative_error);
        bn.forward(x, Mode::Train);
        worst_eval = std::max(worst_eval, grad_check(bn, x, Mode::Eval).max_relative_error);
    }
    CHECK(worst_train < 1e-4);
    CHECK(worst_eval < 1e-4);
}

TEST_CASE("relu and max pool gradients")
{
    std::mt19937_64 rng(103);
    double worst_relu = 0.0, worst_pool = 0.0;
    for (int t = 0; t < kTrials; ++t) {
        const Tensor<double>::Shape shape{pick(rng, 1, 4), pick(rng, 1, 8), pick(rng, 1, 8), pick(rng, 1, 8)};
        ReLU<double> relu;
        MaxPool2d<double> pool;
        auto draw = [&] { return random_tensor(shape, rng); };
        worst_relu = std::max(worst_relu, checked_away_from_kinks(relu, draw).max_relative_error);
        worst_pool = std::max(worst_pool, checked_away_from_kinks(pool, draw).max_relative_error);
    }
    CHECK(worst_relu < 1e-6);
    CHECK(worst_pool < 1e-6);
}

TEST_CASE("conv, batch norm and relu stack gradients")
{
    std::mt19937_64 rng(104);
    double worst = 0.0;
    for (int t = 0; t < kTrials; ++t) {
        const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 4);
        Sequential<double> stack;
        stack.add<Conv2d<double>>(cin, cout, 3, 3, 1, 1, rng, false);
        stack.add<BatchNorm2d<double>>(cout);
        stack.add<ReLU<double>>();
        const Tensor<double>::Shape shape{pick(rng, 2, 3), cin, pick(rng, 2, 6), pick(rng, 2, 6)};
        worst = std::max(worst, checked_away_from_kinks(stack, [&] { return random_tensor(shape, rng); })
                                    .max_relative_error);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("transition and dense block gradients")
{
    std::mt19937_64 rng(105);
    double worst_transition = 0.0, worst_dense = 0.0, worst_flatten = 0.0;
    for (int t = 0; t < kTrials; ++t) {
        const std::size_t c = pick(rng, 1, 3), n = pick(rng, 2, 3);
        Transition<double> tr(c, pick(rng, 1, 3), rng);
        const Tensor<double>::Shape shape{n, c, pick(rng, 2, 6), pick(rng, 2, 6)};
        worst_transition = std::max(
            worst_transition, checked_away_from_kinks(tr, [&] { return random_tensor(shape, rng); }).max_relative_error);

        if (t % 4 == 0) {
            DenseBlock<double> block(c, pick(rng, 1, 2), pick(rng, 1, 2), rng, 3, 1);
            const Tensor<double>::Shape dshape{n, c, pick(rng, 2, 4), pick(rng, 2, 4)};
            worst_dense = std::max(worst_dense, checked_away_from_kinks(block, [&] { return random_tensor(dshape, rng); })
                                                    .max_relative_error);
        }

        Sequential<double> head;
        head.add<Flatten<double>>();
        head.add<Linear<double>>(c * 4, 3, rng);
        worst_flatten = std::max(worst_flatten, grad_check(head, random_tensor({n, c, 2, 2}, rng)).max_relative_error);
    }
    CHECK(worst_transition < 1e-4);
    CHECK(worst_dense < 1e-4);
    CHECK(worst_flatten < 1e-6);
}

TEST_CASE("full-size dense block layer gradients")
{
    std::mt19937_64 rng(106);
    DenseBlock<double> block(2, 2, 2, rng);  // 5x5 kernels, padding 2
    const auto r = checked_away_from_kinks(block, [&] { return random_tensor({2, 2, 5, 5}, rng); });
    CHECK(r.max_relative_error < 1e-4);
    CHECK(r.checked > 0);
}

TEST_CASE("grad_check notices a 1% gradient error")
{
    std::mt19937_64 rng(107);
    Linear<double> lin(4, 3, rng);
    maskshape::testing::FaultyGradient faulty(lin);
    const auto r = grad_check(faulty, random_tensor({2, 4}, rng));
    CHECK(r.max_relative_error > 1e-3);
    CHECK(grad_check(lin, random_tensor({2, 4}, rng)).max_relative_error < 1e-6);
}
