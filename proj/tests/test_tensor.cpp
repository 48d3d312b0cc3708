#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "ptwin/optim.hpp"
#include "ptwin/tensor.hpp"

using namespace ptwin;
using D = TensorT<double>;

namespace {
D randt(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
    return D::random_uniform(rng, std::move(s), lo, hi);
}
}  // namespace

TEST_CASE("matmul basics") {
    // identity * B == B
    Tensor I = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) I.data()[i * 3 + i] = 1.f;
    Rng rng(7);
    Tensor B = Tensor::random_uniform(rng, {3, 4}, -2, 2);
    Tensor C = matmul(I, B);
    for (std::size_t i = 0; i < B.data().size(); ++i) CHECK(C.data()[i] == doctest::Approx(B.data()[i]));

    Tensor a = Tensor::from({1, 2}, {1, 2});
    Tensor b = Tensor::from({3, 4}, {2, 1});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c.data()[0] == doctest::Approx(11.0));

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), DimensionError);
}

TEST_CASE("matmul gradient equals transposed factor for sum loss") {
    Rng rng(3);
    D a = randt(rng, {3, 4});
    D b = randt(rng, {4, 5});
    a.set_requires_grad();
    b.set_requires_grad();
    TapeT<double>::active().clear();
    backward(sum(matmul(a, b)));
    // d(sum(AB))/dA[i,k] = sum_j B[k,j]
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 4; ++k) {
            double expect = 0.0;
            for (int j = 0; j < 5; ++j) expect += b.data()[k * 5 + j];
            CHECK(a.grad()[i * 4 + k] == doctest::Approx(expect).epsilon(1e-12));
        }
    TapeT<double>::active().clear();
}

TEST_CASE("conv2d shape trace and delta kernel") {
    NoGradGuard ng;
    {
        Tensor x = Tensor::zeros({1, 200, 64, 64});
        Rng rng(1);
        Tensor w = Tensor::random_uniform(rng, {100, 200, 3, 3}, -0.1, 0.1);
        Tensor out = conv2d(x, w, Tensor(), 2, 1);
        CHECK(out.shape() == Shape{1, 100, 32, 32});
        for (float v : out.data()) CHECK(v == 0.0f);  // zero input, no bias
    }
    {
        // delta kernel at center samples x at even coordinates
        Tensor x = Tensor::zeros({1, 1, 4, 4});
        for (int i = 0; i < 16; ++i) x.data()[i] = static_cast<float>(i);
        Tensor w = Tensor::zeros({1, 1, 3, 3});
        w.data()[4] = 1.f;  // center tap
        Tensor out = conv2d(x, w, Tensor(), 2, 1);
        CHECK(out.shape() == Shape{1, 1, 2, 2});
        CHECK(out.data()[0] == x.data()[0 * 4 + 0]);
        CHECK(out.data()[1] == x.data()[0 * 4 + 2]);
        CHECK(out.data()[2] == x.data()[2 * 4 + 0]);
        CHECK(out.data()[3] == x.data()[2 * 4 + 2]);
    }
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 3, 8, 8}), Tensor::zeros({4, 2, 3, 3}), Tensor(), 2, 1),
                    DimensionError);
}

TEST_CASE("conv2d output extent formula over all small sizes") {
    NoGradGuard ng;
    Rng rng(11);
    for (std::int64_t h = 1; h <= 64; h += 7)
        for (std::int64_t w = 1; w <= 64; w += 9) {
            Tensor x = Tensor::random_uniform(rng, {1, 1, h, w}, -1, 1);
            Tensor k = Tensor::random_uniform(rng, {1, 1, 3, 3}, -1, 1);
            Tensor out = conv2d(x, k, Tensor(), 2, 1);
            CHECK(out.dim(2) == (h + 2 - 3) / 2 + 1);
            CHECK(out.dim(3) == (w + 2 - 3) / 2 + 1);
        }
}

TEST_CASE("softmax values and invariants") {
    Tensor z = softmax(Tensor::from({0, 0, 0}, {3}), -1);
    for (float v : z.data()) CHECK(v == doctest::Approx(1.0 / 3));

    Tensor big = softmax(Tensor::from({1000, 1000}, {2}), -1);
    CHECK(big.data()[0] == doctest::Approx(0.5));
    CHECK(big.data()[1] == doctest::Approx(0.5));

    Tensor s = softmax(Tensor::from({1, 2, 3}, {3}), -1);
    CHECK(s.data()[0] == doctest::Approx(0.09003057).epsilon(1e-4));
    CHECK(s.data()[1] == doctest::Approx(0.24472847).epsilon(1e-4));
    CHECK(s.data()[2] == doctest::Approx(0.66524096).epsilon(1e-4));

    // property: every slice sums to one, entries strictly positive
    Rng rng(5);
    for (int rep = 0; rep < 25; ++rep) {
        Tensor x = Tensor::random_uniform(rng, {4, 6}, -30, 30);
        Tensor y = softmax(x, 1);
        for (int r = 0; r < 4; ++r) {
            double s2 = 0.0;
            for (int c = 0; c < 6; ++c) {
                CHECK(y.data()[r * 6 + c] > 0.f);
                s2 += y.data()[r * 6 + c];
            }
            CHECK(std::fabs(s2 - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("activation values") {
    Tensor r = relu(Tensor::from({-1, 2}, {2}));
    CHECK(r.data()[0] == 0.f);
    CHECK(r.data()[1] == 2.f);

    CHECK(sigmoid(Tensor::from({0.f}, {1})).data()[0] == doctest::Approx(0.5));

    // layer_norm of a constant vector is zero before affine
    Tensor g = Tensor::full({4}, 1.f);
    Tensor b = Tensor::zeros({4});
    Tensor ln = layer_norm(Tensor::full({4}, 3.25f), -1, g, b);
    for (float v : ln.data()) CHECK(std::fabs(v) < 1e-5f);
}

TEST_CASE("layer_norm normalizes each slice") {
    Rng rng(9);
    Tensor x = Tensor::random_uniform(rng, {5, 8}, -4, 4);
    Tensor g = Tensor::full({8}, 1.f);
    Tensor b = Tensor::zeros({8});
    Tensor y = layer_norm(x, -1, g, b);
    for (int r = 0; r < 5; ++r) {
        double m = 0, v = 0;
        for (int c = 0; c < 8; ++c) m += y.data()[r * 8 + c];
        m /= 8;
        for (int c = 0; c < 8; ++c) {
            const double d = y.data()[r * 8 + c] - m;
            v += d * d;
        }
        v /= 8;
        CHECK(std::fabs(m) < 1e-5);
        CHECK(std::fabs(v - 1.0) < 1e-4);
    }
}

TEST_CASE("loss values") {
    Rng rng(2);
    Tensor x = Tensor::random_uniform(rng, {7}, -3, 3);
    CHECK(mse_loss(x, x).item() == 0.f);

    Tensor p = Tensor::full({5}, 0.5f);
    Tensor t = Tensor::from({0, 1, 0, 1, 1}, {5});
    CHECK(bce_loss(p, t).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    Tensor pred = Tensor::from({1, 3}, {2});
    Tensor targ = Tensor::from({0, 0}, {2});
    CHECK(mse_loss(pred, targ).item() == doctest::Approx(5.0));

    CHECK_THROWS_AS(mse_loss(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("backward on sum gives ones; non-scalar loss rejected") {
    Rng rng(4);
    D x = D::random_uniform(rng, {3, 3}, -1, 1);
    x.set_requires_grad();
    TapeT<double>::active().clear();
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);

    D y = D::zeros({2, 2});
    y.set_requires_grad();
    TapeT<double>::active().clear();
    D z = add(y, y);
    CHECK_THROWS_AS(backward(z), ContractError);
    TapeT<double>::active().clear();
}

TEST_CASE("backward accumulates across repeated calls without zeroing") {
    D x = D::from({2.0, -1.0}, {2});
    x.set_requires_grad();
    TapeT<double>::active().clear();
    D loss = sum(mul(x, x));
    backward(loss);
    const auto g1 = x.grad();
    backward(loss);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * g1[i]));
    TapeT<double>::active().clear();
}

TEST_CASE("finite differences confirm every primitive") {
    Rng rng(42);
    auto run = [&](const char* name, std::vector<D> ins, std::function<D()> f) {
        auto res = gradcheck::check(f, ins);
        INFO(name << ": worst rel err " << res.worst_rel << " at " << res.where);
        CHECK(res.ok);
    };

    {
        D a = randt(rng, {3, 4}), b = randt(rng, {3, 4});
        run("add", {a, b}, [=] { return sum(mul(add(a, b), add(a, b))); });
        run("sub", {a, b}, [=] { return sum(mul(sub(a, b), add(a, b))); });
        run("mul", {a, b}, [=] { return sum(mul(mul(a, b), a)); });
    }
    {
        D a = randt(rng, {2, 3, 4});
        D bias = randt(rng, {4});
        run("add suffix broadcast", {a, bias}, [=] { return sum(mul(add(a, bias), add(a, bias))); });
        run("mul suffix broadcast", {a, bias}, [=] { return sum(mul(mul(a, bias), a)); });
    }
    {
        D a = randt(rng, {3, 4}), b = randt(rng, {4, 5});
        run("matmul 2d", {a, b}, [=] { return sum(mul(matmul(a, b), matmul(a, b))); });
    }
    {
        D a = randt(rng, {2, 3, 4}), b = randt(rng, {4, 5});
        run("matmul shared rhs", {a, b}, [=] { return sum(mul(matmul(a, b), matmul(a, b))); });
    }
    {
        D a = randt(rng, {2, 2, 3, 4}), b = randt(rng, {2, 2, 4, 3});
        run("matmul batched", {a, b}, [=] { return sum(mul(matmul(a, b), matmul(a, b))); });
    }
    {
        D x = randt(rng, {1, 2, 5, 6}), w = randt(rng, {3, 2, 3, 3}), b = randt(rng, {3});
        run("conv2d s2", {x, w, b}, [=] { return sum(mul(conv2d(x, w, b, 2, 1), conv2d(x, w, b, 2, 1))); });
        run("conv2d s1", {x, w, b}, [=] { return sum(conv2d(x, w, b, 1, 1)); });
    }
    {
        // keep inputs away from the relu kink so central differences are clean
        D x = randt(rng, {3, 4}, 0.2, 1.5);
        D y = randt(rng, {3, 4}, -1.5, -0.2);
        run("relu", {x, y}, [=] { return sum(mul(relu(x), relu(x))); });
        run("relu negative side", {y}, [=] { return sum(relu(y)); });
        D z = randt(rng, {3, 4});
        run("sigmoid", {z}, [=] { return sum(mul(sigmoid(z), sigmoid(z))); });
        run("gelu", {z}, [=] { return sum(mul(gelu(z), gelu(z))); });
    }
    {
        D x = randt(rng, {4, 5});
        run("softmax", {x}, [=] { return sum(mul(softmax(x, -1), softmax(x, -1))); });
        run("softmax axis0", {x}, [=] { return sum(mul(softmax(x, 0), softmax(x, 0))); });
    }
    {
        D x = randt(rng, {3, 6}), g = randt(rng, {6}, 0.5, 1.5), b = randt(rng, {6});
        run("layer_norm", {x, g, b},
            [=] { return sum(mul(layer_norm(x, -1, g, b), layer_norm(x, -1, g, b))); });
    }
    {
        D x = randt(rng, {2, 3, 4, 4});
        D g = randt(rng, {3}, 0.5, 1.5), b = randt(rng, {3});
        auto state = std::make_shared<BatchNormState<double>>();
        state->running_mean = D::zeros({3});
        state->running_var = D::full({3}, 1.0);
        run("batch_norm train", {x, g, b}, [=] {
            auto st = *state;  // copy so running stats are not advanced by probes
            return sum(mul(batch_norm(x, g, b, st, true), batch_norm(x, g, b, st, true)));
        });
        run("batch_norm eval", {x, g, b}, [=] {
            auto st = *state;
            return sum(mul(batch_norm(x, g, b, st, false), batch_norm(x, g, b, st, false)));
        });
    }
    {
        D p = randt(rng, {6}, 0.1, 0.9);
        D t = D::from({1, 0, 1, 1, 0, 0}, {6});
        run("bce_loss", {p}, [=] { return bce_loss(p, t); });
        D a = randt(rng, {6}), b = randt(rng, {6});
        run("mse_loss", {a, b}, [=] { return mse_loss(a, b); });
    }
    {
        D x = randt(rng, {3, 4});
        run("mean", {x}, [=] { return mean(mul(x, x)); });
        run("mean_axis", {x}, [=] { return sum(mul(mean_axis(x, 0), mean_axis(x, 0))); });
        run("reshape", {x}, [=] { return sum(mul(reshape(x, {2, 6}), reshape(x, {2, 6}))); });
        run("permute", {x}, [=] { return sum(mul(permute(x, {1, 0}), permute(x, {1, 0}))); });
        run("slice", {x}, [=] { return sum(mul(slice(x, 1, 1, 2), slice(x, 1, 1, 2))); });
        run("scale", {x}, [=] { return sum(scale(mul(x, x), -2.5)); });
        run("add_scalar", {x}, [=] { return sum(mul(add_scalar(x, 1.5), x)); });
    }
    {
        D a = randt(rng, {2, 3}), b = randt(rng, {2, 2});
        run("concat", {a, b}, [=] { return sum(mul(concat(a, b, 1), concat(a, b, 1))); });
        D e = randt(rng, {1, 3});
        run("expand", {e}, [=] { return sum(mul(expand(e, {4, 3}), expand(e, {4, 3}))); });
    }
    {
        D x = randt(rng, {1, 2, 3, 3});
        run("upsample_nearest2x", {x},
            [=] { return sum(mul(upsample_nearest2x(x), upsample_nearest2x(x))); });
    }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from({1.f, -2.f, 3.f}, {3});
    p.set_requires_grad();
    p.grad();  // allocate zeros
    Adam opt({p});
    opt.step(0.1);
    CHECK(p.data()[0] == 1.f);
    CHECK(p.data()[1] == -2.f);
    CHECK(p.data()[2] == 3.f);
}

TEST_CASE("adam first step moves by about lr") {
    // bias-corrected first step is lr * 1 / (1 + eps), a hair under lr
    D p = D::from({0.0}, {1});
    p.set_requires_grad();
    p.grad()[0] = 1.0;
    AdamT<double> opt({p});
    opt.step(0.1);
    CHECK(p.data()[0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(p.data()[0] > -0.1);
    CHECK(p.data()[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam matches an independent scalar reference over two steps") {
    // engine side (double instantiation)
    D p = D::from({0.7}, {1});
    p.set_requires_grad();
    AdamT<double> opt({p});
    const double g1 = 0.3, g2 = -1.1, lr = 0.05;
    p.grad()[0] = g1;
    opt.step(lr);
    opt.zero_grad();
    p.grad()[0] = g2;
    opt.step(lr);

    // scalar reference, written independently of the optimizer class
    double x = 0.7, m = 0, v = 0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double gs[2] = {g1, g2};
    for (int t = 1; t <= 2; ++t) {
        const double g = gs[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }
    CHECK(std::fabs(p.data()[0] - x) < 1e-10);
}

TEST_CASE("cosine warmup schedule endpoints and midpoint") {
    const std::int64_t total = 1000, warmup = 10;
    CHECK(cosine_warmup_lr(0, total, warmup) == 1e-5);
    CHECK(cosine_warmup_lr(warmup, total, warmup) == 1e-4);
    const std::int64_t mid = warmup + (total - warmup) / 2;
    CHECK(std::fabs(cosine_warmup_lr(mid, total, warmup) - 5e-5) < 1e-9);
    CHECK(cosine_warmup_lr(total, total, warmup) == doctest::Approx(0.0).epsilon(1e-12));
    // ramp is continuous at the joint
    CHECK(std::fabs(cosine_warmup_lr(warmup - 1, total, warmup) -
                    cosine_warmup_lr(warmup, total, warmup)) < 1e-5 * 1.1);
    CHECK_THROWS_AS(cosine_warmup_lr(0, 5, 10), ConfigError);
}

TEST_CASE("forward is deterministic under a fixed seed") {
    auto make = [] {
        Rng rng(123);
        NoGradGuard ng;
        Tensor x = Tensor::random_uniform(rng, {4, 16}, -1, 1);
        Tensor w = Tensor::random_uniform(rng, {16, 16}, -1, 1);
        Tensor y = softmax(matmul(x, w), -1);
        return y;
    };
    Tensor a = make();
    Tensor b = make();
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0);
}

TEST_CASE("batch_norm rejects an empty batch") {
    Tensor g = Tensor::full({2}, 1.f), b = Tensor::zeros({2});
    BatchNormState<float> st;
    st.running_mean = Tensor::zeros({2});
    st.running_var = Tensor::full({2}, 1.f);
    CHECK_THROWS_AS(batch_norm(Tensor::zeros({0, 2, 3, 3}), g, b, st, true), DimensionError);
}
