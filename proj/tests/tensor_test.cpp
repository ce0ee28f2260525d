#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "likra/adam.hpp"
#include "likra/tensor.hpp"
#include "test_util.hpp"

using namespace likra;

TEST_CASE("matmul identity") {
    auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    auto c = matmul(eye, m);
    CHECK(c.data() == std::vector<float>{3, 4, 5, 6});
}

TEST_CASE("matmul hand expansion") {
    auto a = Tensor::from_data({1, 2}, {1, 2});
    auto b = Tensor::from_data({2, 1}, {3, 4});
    auto c = matmul(a, b);
    CHECK(c.data()[0] == doctest::Approx(11).epsilon(1e-7));
}

TEST_CASE("matmul against triple-loop oracle") {
    Rng rng(7);
    std::normal_distribution<double> d(0, 1);
    int m = 4, k = 5, n = 3;
    std::vector<double> a(m * k), b(k * n);
    for (auto& x : a) x = d(rng);
    for (auto& x : b) x = d(rng);
    auto want = test::naive_matmul(a, b, m, k, n);

    std::vector<float> af(a.begin(), a.end()), bf(b.begin(), b.end());
    auto c = matmul(Tensor::from_data({m, k}, af), Tensor::from_data({k, n}, bf));
    for (size_t i = 0; i < want.size(); ++i) {
        CHECK(std::abs(c.data()[i] - want[i]) < 1e-6);
    }
}

TEST_CASE("matmul_nt equals matmul with explicit transpose oracle") {
    Rng rng(11);
    std::normal_distribution<double> d(0, 1);
    int m = 3, k = 4, n = 5;
    std::vector<double> a(m * k), bt(n * k);
    for (auto& x : a) x = d(rng);
    for (auto& x : bt) x = d(rng);
    std::vector<double> b(k * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) b[j * n + i] = bt[i * k + j];
    auto want = test::naive_matmul(a, b, m, k, n);

    std::vector<float> af(a.begin(), a.end()), btf(bt.begin(), bt.end());
    auto c = matmul_nt(Tensor::from_data({m, k}, af), Tensor::from_data({n, k}, btf));
    for (size_t i = 0; i < want.size(); ++i) CHECK(std::abs(c.data()[i] - want[i]) < 1e-6);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), ContractError);
    try {
        matmul(a, b);
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("softmax uniform on constant rows") {
    auto x = Tensor::from_data({1, 3}, {0, 0, 0});
    auto y = softmax_rows(x);
    for (int j = 0; j < 3; ++j) CHECK(y.data()[j] == doctest::Approx(1.0 / 3).epsilon(1e-6));
}

TEST_CASE("softmax stabilized against overflow") {
    auto x = Tensor::from_data({1, 2}, {1000, 0});
    auto y = softmax_rows(x);
    CHECK(std::isfinite(y.data()[0]));
    CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(y.data()[1] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one on random inputs") {
    Rng rng(3);
    std::normal_distribution<double> d(0, 5);
    for (int rep = 0; rep < 20; ++rep) {
        int rows = 1 + static_cast<int>(rng() % 6), cols = 1 + static_cast<int>(rng() % 9);
        std::vector<float> v(static_cast<size_t>(rows) * cols);
        for (auto& x : v) x = static_cast<float>(d(rng));
        auto y = softmax_rows(Tensor::from_data({rows, cols}, v));
        for (int i = 0; i < rows; ++i) {
            double s = 0;
            for (int j = 0; j < cols; ++j) s += y.data()[i * cols + j];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("log_softmax values are non-positive") {
    Rng rng(5);
    std::normal_distribution<double> d(0, 10);
    std::vector<float> v(40);
    for (auto& x : v) x = static_cast<float>(d(rng));
    auto y = log_softmax_rows(Tensor::from_data({8, 5}, v));
    for (float lv : y.data()) CHECK(lv <= 0.0f);
}

TEST_CASE("softmax empty last dimension rejected") {
    CHECK_THROWS_AS(Tensor::zeros({2, 0}), ContractError);
}

TEST_CASE("backward of x squared") {
    auto x = Tensor64::from_data({1}, {3});
    x.set_requires_grad(true);
    auto y = mul(x, x);
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(6).epsilon(1e-12));
}

TEST_CASE("backward of sum of softmax is zero") {
    auto x = Tensor64::from_data({1, 4}, {0.3, -1.2, 2.0, 0.1});
    x.set_requires_grad(true);
    auto loss = sum_all(softmax_rows(x));
    loss.backward();
    for (double g : x.grad()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("backward requires scalar and a fresh graph") {
    auto x = Tensor64::from_data({2}, {1, 2});
    x.set_requires_grad(true);
    auto y = mul(x, x);
    CHECK_THROWS_AS(y.backward(), ContractError);

    auto loss = sum_all(mul(x, x));
    loss.backward();
    CHECK_THROWS_AS(loss.backward(), ContractError);
}

TEST_CASE("gradient accumulates across backward calls until zero_grad") {
    auto x = Tensor64::from_data({1}, {2});
    x.set_requires_grad(true);
    auto l1 = mul(x, x);
    l1.backward();
    auto l2 = mul(x, x);
    l2.backward();
    CHECK(x.grad()[0] == doctest::Approx(8).epsilon(1e-12));
    x.zero_grad();
    CHECK(x.grad()[0] == 0);
}

TEST_CASE("per-op finite-difference checks") {
    Rng rng(17);

    auto randt = [&](std::vector<int> shape) {
        return Tensor64::randn(std::move(shape), rng, 0.8);
    };

    SUBCASE("matmul") {
        auto a = randt({3, 4});
        auto b = randt({4, 2});
        auto r = test::grad_check({{"a", a}, {"b", b}},
                                  [&] { return sum_all(mul(matmul(a, b), matmul(a, b))); });
        CHECK(r.max_rel_err < 1e-6);
    }
    SUBCASE("matmul_nt") {
        auto a = randt({3, 4});
        auto b = randt({5, 4});
        auto r = test::grad_check({{"a", a}, {"b", b}},
                                  [&] { return sum_all(mul(matmul_nt(a, b), matmul_nt(a, b))); });
        CHECK(r.max_rel_err < 1e-6);
    }
    SUBCASE("softmax") {
        auto x = randt({3, 5});
        auto w = randt({3, 5});
        auto r = test::grad_check({{"x", x}},
                                  [&] { return sum_all(mul(softmax_rows(x), w)); });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("causal_softmax") {
        auto x = randt({4, 4});
        auto w = randt({4, 4});
        auto r = test::grad_check({{"x", x}},
                                  [&] { return sum_all(mul(causal_softmax(x), w)); });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("log_softmax") {
        auto x = randt({3, 6});
        auto w = randt({3, 6});
        auto r = test::grad_check({{"x", x}},
                                  [&] { return sum_all(mul(log_softmax_rows(x), w)); });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("gelu") {
        auto x = randt({4, 4});
        auto r = test::grad_check({{"x", x}}, [&] { return sum_all(mul(gelu(x), gelu(x))); });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("layer_norm") {
        auto x = randt({3, 8});
        auto g = randt({8});
        auto b = randt({8});
        auto w = randt({3, 8});
        auto r = test::grad_check({{"x", x}, {"g", g}, {"b", b}},
                                  [&] { return sum_all(mul(layer_norm(x, g, b), w)); });
        CHECK(r.max_rel_err < 1e-4);
    }
    SUBCASE("embedding and nll") {
        auto table = randt({7, 3});
        std::vector<int32_t> ids{1, 4, 2, 4};
        std::vector<int32_t> targets{4, 2, 4, 1};
        std::vector<uint8_t> mask{1, 0, 1, 1};
        auto r = test::grad_check({{"table", table}}, [&] {
            auto e = embedding(table, ids);
            auto logits = matmul_nt(e, table);
            return nll_masked(log_softmax_rows(logits), targets, mask, true);
        });
        CHECK(r.max_rel_err < 1e-5);
    }
    SUBCASE("slice and concat") {
        auto x = randt({3, 6});
        auto r = test::grad_check({{"x", x}}, [&] {
            auto a = slice_cols(x, 0, 2);
            auto b = slice_cols(x, 2, 4);
            auto y = concat_cols<double>({b, a});
            return sum_all(mul(y, y));
        });
        CHECK(r.max_rel_err < 1e-6);
    }
    SUBCASE("add_rowvec and scale") {
        auto x = randt({4, 3});
        auto v = randt({3});
        auto r = test::grad_check({{"x", x}, {"v", v}}, [&] {
            auto y = scale(add_rowvec(x, v), 1.7);
            return sum_all(mul(y, y));
        });
        CHECK(r.max_rel_err < 1e-6);
    }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    auto p = Tensor::from_data({3}, {1, 2, 3});
    p.set_requires_grad(true);
    p.zero_grad();
    AdamOptimizer<float> opt({{"p", p}}, {});
    opt.step();
    CHECK(p.data() == std::vector<float>{1, 2, 3});
}

TEST_CASE("adam first step with unit gradient moves by -lr") {
    AdamConfig<double> cfg;
    cfg.lr = 1e-4;
    auto p = Tensor64::from_data({2}, {0.5, -0.5});
    p.set_requires_grad(true);
    p.grad() = {1.0, 1.0};
    AdamOptimizer<double> opt({{"p", p}}, cfg);
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(0.5 - 1e-4).epsilon(1e-6));
    CHECK(p.data()[1] == doctest::Approx(-0.5 - 1e-4).epsilon(1e-6));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adam converges to the target of a quadratic") {
    AdamConfig<double> cfg;
    cfg.lr = 0.05;
    auto x = Tensor64::from_data({3}, {4.0, -3.0, 2.0});
    x.set_requires_grad(true);
    auto c = Tensor64::from_data({3}, {1.0, 2.0, -1.0});
    AdamOptimizer<double> opt({{"x", x}}, cfg);
    for (int i = 0; i < 400; ++i) {
        opt.zero_grad();
        auto diff = sub(x, c);
        auto loss = sum_all(mul(diff, diff));
        loss.backward();
        opt.step();
    }
    for (int i = 0; i < 3; ++i) CHECK(std::abs(x.data()[i] - c.data()[i]) < 1e-3);
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
    auto p = Tensor::from_data({2}, {1, 1});
    p.set_requires_grad(true);
    p.grad() = {std::numeric_limits<float>::quiet_NaN(), 0.0f};
    AdamOptimizer<float> opt({{"theta", p}}, {});
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("theta"), ContractError);
    // step was aborted: parameters untouched, step count unchanged
    CHECK(p.data() == std::vector<float>{1, 1});
    CHECK(opt.step_count() == 0);
}

TEST_CASE("adam global-norm clip caps the effective gradient") {
    AdamConfig<double> cfg;
    cfg.lr = 1.0;
    cfg.beta1 = 0.0;
    cfg.beta2 = 0.0;
    cfg.eps = 0.0;
    cfg.clip_norm = 1.0;
    auto p = Tensor64::from_data({2}, {0.0, 0.0});
    p.set_requires_grad(true);
    p.grad() = {30.0, 40.0};  // norm 50 -> scaled to unit norm
    AdamOptimizer<double> opt({{"p", p}}, cfg);
    opt.step();
    // with beta1=beta2=0: update = lr * g/|g| elementwise sign-preserving
    CHECK(p.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(p.data()[1] == doctest::Approx(-1.0).epsilon(1e-9));
}
