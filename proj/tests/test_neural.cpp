#include <cmath>
#include <sstream>

#include "blindac/neural.hpp"
#include "blindac/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace blindac;

namespace {

// Flatten/assign helpers for the finite-difference check.
std::vector<double*> param_pointers(Mlp& m) {
    std::vector<double*> out;
    for (auto& w : m.w)
        for (Eigen::Index i = 0; i < w.size(); ++i) out.push_back(w.data() + i);
    for (auto& b : m.b)
        for (Eigen::Index i = 0; i < b.size(); ++i) out.push_back(b.data() + i);
    return out;
}

std::vector<double> grad_values(const Mlp& m, const MlpGrads& g) {
    std::vector<double> out;
    for (std::size_t l = 0; l < m.w.size(); ++l)
        for (Eigen::Index i = 0; i < g.w[l].size(); ++i)
            out.push_back(*(g.w[l].data() + i));
    for (std::size_t l = 0; l < m.b.size(); ++l)
        for (Eigen::Index i = 0; i < g.b[l].size(); ++i)
            out.push_back(*(g.b[l].data() + i));
    return out;
}

// max relative error between analytic gradients and central differences on a
// random weighted-output scalar loss
double gradient_check(Mlp& net, const Eigen::MatrixXd& x, Rng& rng) {
    const Eigen::Index out_dim = net.sizes.back();
    Eigen::MatrixXd weight(out_dim, x.cols());
    for (Eigen::Index i = 0; i < out_dim; ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            weight(i, j) = rng.uniform(-1.0, 1.0);

    auto loss = [&]() {
        return (net.forward(x, nullptr).array() * weight.array()).sum();
    };
    ForwardCache cache;
    net.forward(x, &cache);
    const MlpGrads analytic = net.backward(cache, weight);
    const std::vector<double> analytic_flat = grad_values(net, analytic);

    double max_rel = 0.0;
    const std::vector<double*> params = param_pointers(net);
    for (std::size_t p = 0; p < params.size(); ++p) {
        const double saved = *params[p];
        const double h = 1e-5;
        *params[p] = saved + h;
        const double fp = loss();
        *params[p] = saved - h;
        const double fm = loss();
        *params[p] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic_flat[p]), 1e-6});
        max_rel = std::max(max_rel, std::abs(fd - analytic_flat[p]) / denom);
    }
    return max_rel;
}

}  // namespace

TEST_SUITE("neural_core") {

TEST_CASE("forward basics") {
    SUBCASE("zero weights pass the bias through") {
        Rng rng(1);
        Mlp m = Mlp::make({3, 2}, Activation::tanh_fn, Activation::linear, rng);
        m.w[0].setZero();
        m.b[0] << 0.7, -0.2;
        const Eigen::VectorXd y = m.forward(Eigen::Vector3d(1.0, 2.0, 3.0));
        CHECK(y(0) == 0.7);
        CHECK(y(1) == -0.2);
    }
    SUBCASE("1-1 linear network") {
        Rng rng(1);
        Mlp m = Mlp::make({1, 1}, Activation::tanh_fn, Activation::linear, rng);
        m.w[0](0, 0) = 2.0;
        m.b[0](0) = 1.0;
        Eigen::VectorXd x(1);
        x << 3.0;
        CHECK(m.forward(x)(0) == 7.0);
    }
    SUBCASE("tanh head stays in (-1, 1)") {
        Rng rng(2);
        Mlp m = Mlp::make({4, 8, 1}, Activation::tanh_fn, Activation::tanh_fn, rng);
        for (int i = 0; i < 100; ++i) {
            Eigen::VectorXd x(4);
            for (int j = 0; j < 4; ++j) x(j) = rng.uniform(-100.0, 100.0);
            const double y = m.forward(x)(0);
            CHECK(y > -1.0);
            CHECK(y < 1.0);
        }
    }
    SUBCASE("dimension mismatch is a usage error") {
        Rng rng(1);
        Mlp m = Mlp::make({3, 2}, Activation::tanh_fn, Activation::linear, rng);
        Eigen::VectorXd x(4);
        x.setZero();
        CHECK_THROWS_AS(m.forward(x), UsageError);
    }
}

TEST_CASE("backward matches central finite differences") {
    SUBCASE("reference architecture") {
        Rng rng(3);
        Mlp m = Mlp::make({8, 32, 32, 1}, Activation::tanh_fn, Activation::linear,
                          rng);
        // Output-layer weights of make() are tiny; randomize for a real check.
        for (auto& w : m.w)
            for (Eigen::Index i = 0; i < w.size(); ++i)
                *(w.data() + i) = rng.uniform(-0.5, 0.5);
        Eigen::MatrixXd x(8, 3);
        for (Eigen::Index i = 0; i < x.size(); ++i)
            *(x.data() + i) = rng.uniform(-2.0, 2.0);
        CHECK(gradient_check(m, x, rng) < 1e-4);
    }
    SUBCASE("hand chain rule on the 1-1 linear net") {
        Rng rng(1);
        Mlp m = Mlp::make({1, 1}, Activation::tanh_fn, Activation::linear, rng);
        m.w[0](0, 0) = 2.0;
        m.b[0](0) = 1.0;
        Eigen::MatrixXd x(1, 1);
        x << 3.0;
        ForwardCache cache;
        m.forward(x, &cache);
        Eigen::MatrixXd up(1, 1);
        up << 1.0;
        const MlpGrads g = m.backward(cache, up);
        CHECK(g.w[0](0, 0) == 3.0);
        CHECK(g.b[0](0) == 1.0);
    }
    SUBCASE("zero upstream gradient zeroes every parameter gradient") {
        Rng rng(5);
        Mlp m = Mlp::make({4, 6, 2}, Activation::tanh_fn, Activation::tanh_fn, rng);
        Eigen::MatrixXd x(4, 2);
        x.setRandom();
        ForwardCache cache;
        m.forward(x, &cache);
        const MlpGrads g = m.backward(cache, Eigen::MatrixXd::Zero(2, 2));
        for (double v : grad_values(m, g)) CHECK(v == 0.0);
    }
    SUBCASE("relu derivative") {
        Rng rng(6);
        Mlp m = Mlp::make({3, 5, 1}, Activation::relu, Activation::linear, rng);
        for (auto& w : m.w)
            for (Eigen::Index i = 0; i < w.size(); ++i)
                *(w.data() + i) = rng.uniform(-0.5, 0.5);
        // keep pre-activations away from the kink
        Eigen::MatrixXd x(3, 1);
        x << 1.7, -0.4, 0.9;
        CHECK(gradient_check(m, x, rng) < 1e-4);
    }
}

TEST_CASE("adam") {
    Rng rng(7);
    SUBCASE("zero gradients leave parameters unchanged") {
        Mlp m = Mlp::make({2, 3, 1}, Activation::tanh_fn, Activation::linear, rng);
        const Mlp before = m;
        Adam opt(m);
        opt.step(m, m.zero_grads(), 1e-3);
        for (std::size_t l = 0; l < m.w.size(); ++l) {
            CHECK(m.w[l] == before.w[l]);
            CHECK(m.b[l] == before.b[l]);
        }
    }
    SUBCASE("zero learning rate leaves parameters unchanged") {
        Mlp m = Mlp::make({2, 3, 1}, Activation::tanh_fn, Activation::linear, rng);
        const Mlp before = m;
        Adam opt(m);
        MlpGrads g = m.zero_grads();
        g.w[0].setConstant(0.5);
        opt.step(m, g, 0.0);
        CHECK(m.w[0] == before.w[0]);
    }
    SUBCASE("constant gradient drives the step size toward lr") {
        Mlp m = Mlp::make({1, 1}, Activation::tanh_fn, Activation::linear, rng);
        Adam opt(m);
        MlpGrads g = m.zero_grads();
        g.w[0](0, 0) = 3.7;
        g.b[0](0) = 3.7;
        const double lr = 1e-3;
        double prev = m.w[0](0, 0);
        double step = 0.0;
        for (int i = 0; i < 5000; ++i) {
            opt.step(m, g, lr);
            step = prev - m.w[0](0, 0);
            prev = m.w[0](0, 0);
        }
        CHECK(step == doctest::Approx(lr).epsilon(0.02));
    }
    SUBCASE("non-finite gradients abort") {
        Mlp m = Mlp::make({1, 1}, Activation::tanh_fn, Activation::linear, rng);
        Adam opt(m);
        MlpGrads g = m.zero_grads();
        g.w[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS(opt.step(m, g, 1e-3));
    }
}

TEST_CASE("soft_update") {
    Rng rng(8);
    Mlp target = Mlp::make({2, 4, 1}, Activation::tanh_fn, Activation::linear, rng);
    Mlp online = Mlp::make({2, 4, 1}, Activation::tanh_fn, Activation::linear, rng);
    SUBCASE("coeff 1 copies the online network") {
        Mlp t = target;
        soft_update(t, online, 1.0);
        for (std::size_t l = 0; l < t.w.size(); ++l) CHECK(t.w[l] == online.w[l]);
    }
    SUBCASE("coeff 0 is a no-op") {
        Mlp t = target;
        soft_update(t, online, 0.0);
        for (std::size_t l = 0; l < t.w.size(); ++l) CHECK(t.w[l] == target.w[l]);
    }
    SUBCASE("convex combination") {
        Mlp t = target;
        t.w[0].setZero();
        Mlp o = online;
        o.w[0].setOnes();
        soft_update(t, o, 0.001);
        CHECK(t.w[0](0, 0) == doctest::Approx(0.001).epsilon(1e-12));
    }
    SUBCASE("shape mismatch throws") {
        Mlp small = Mlp::make({2, 3, 1}, Activation::tanh_fn, Activation::linear, rng);
        CHECK_THROWS_AS(soft_update(small, online, 0.5), UsageError);
    }
}

TEST_CASE("ornstein-uhlenbeck noise") {
    SUBCASE("deterministic contraction with sigma = 0") {
        OuNoise n{1.0, 0.2, 0.0};
        Rng rng(1);
        CHECK(n.step(0.5, rng) == doctest::Approx(0.9).epsilon(1e-12));
        n = OuNoise{0.0, 0.2, 0.0};
        for (int i = 0; i < 10; ++i) CHECK(n.step(0.1, rng) == 0.0);
    }
    SUBCASE("geometric contraction rate") {
        OuNoise n{2.0, 0.3, 0.0};
        Rng rng(1);
        double x = 2.0;
        for (int i = 0; i < 20; ++i) {
            const double next = n.step(0.1, rng);
            CHECK(next == doctest::Approx(x * (1.0 - 0.3 * 0.1)).epsilon(1e-12));
            x = next;
        }
    }
    SUBCASE("stationary variance approaches sigma^2 / (2 theta)") {
        OuNoise n{0.0, 0.2, 0.4};
        Rng rng(1234);
        const double dt = 0.05;
        double sum = 0.0, sum2 = 0.0;
        const int steps = 1000000;
        for (int i = 0; i < steps; ++i) {
            const double x = n.step(dt, rng);
            sum += x;
            sum2 += x * x;
        }
        const double var = sum2 / steps - (sum / steps) * (sum / steps);
        const double expected = 0.4 * 0.4 / (2.0 * 0.2);
        CHECK(std::abs(var - expected) / expected < 0.10);
    }
}

TEST_CASE("replay memory") {
    Transition t;
    SUBCASE("fifo eviction at capacity") {
        ReplayMemory mem(400000);
        for (int i = 0; i < 400001; ++i) {
            t.r_prev = double(i);
            mem.push(t);
        }
        CHECK(mem.size() == 400000);
        CHECK(mem.at(0).r_prev == 1.0);  // the first item fell out
        CHECK(mem.at(399999).r_prev == 400000.0);
    }
    SUBCASE("underfilled sampling is signalled") {
        ReplayMemory mem(100);
        Rng rng(1);
        for (int i = 0; i < 63; ++i) mem.push(t);
        CHECK_FALSE(mem.ready(64));
        CHECK_THROWS_AS(mem.sample(64, rng), UsageError);
        mem.push(t);
        CHECK(mem.ready(64));
        CHECK(mem.sample(64, rng).size() == 64);
    }
    SUBCASE("batch indices are distinct") {
        ReplayMemory mem(128);
        for (int i = 0; i < 128; ++i) {
            t.r_prev = double(i);
            mem.push(t);
        }
        Rng rng(2);
        for (int trial = 0; trial < 50; ++trial) {
            const auto batch = mem.sample(64, rng);
            std::vector<double> ids;
            for (const Transition& b : batch) ids.push_back(b.r_prev);
            std::sort(ids.begin(), ids.end());
            CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
        }
    }
    SUBCASE("sampling is uniform (chi-square and 3-sigma)") {
        const int items = 1000;
        ReplayMemory mem(items);
        for (int i = 0; i < items; ++i) {
            t.r_prev = double(i);
            mem.push(t);
        }
        Rng rng(77);
        std::vector<int> counts(items, 0);
        const int batches = 10000;  // 64 * 10000 draws
        for (int b = 0; b < batches; ++b)
            for (const Transition& s : mem.sample(64, rng))
                counts[std::size_t(s.r_prev)]++;
        const double expected = 64.0 * batches / items;
        const double sigma = std::sqrt(expected * (1.0 - 1.0 / items));
        double chi2 = 0.0;
        int beyond3 = 0;
        for (int c : counts) {
            chi2 += (c - expected) * (c - expected) / expected;
            if (std::abs(c - expected) > 3.0 * sigma) ++beyond3;
        }
        // chi-square with 999 dof: mean 999, sd ~44.7
        CHECK(chi2 > 999.0 - 5.0 * 44.7);
        CHECK(chi2 < 999.0 + 5.0 * 44.7);
        // a handful of 3-sigma outliers among 1000 cells is expected noise
        CHECK(beyond3 <= 8);
    }
    SUBCASE("deterministic under a fixed seed") {
        ReplayMemory mem(64);
        for (int i = 0; i < 64; ++i) {
            t.r_prev = double(i);
            mem.push(t);
        }
        Rng a(5), b(5);
        const auto ba = mem.sample(32, a);
        const auto bb = mem.sample(32, b);
        for (std::size_t i = 0; i < ba.size(); ++i)
            CHECK(ba[i].r_prev == bb[i].r_prev);
    }
}

TEST_CASE("model serialization round-trips bit-exact") {
    Rng rng(9);
    Mlp m = Mlp::make({8, 64, 64, 1}, Activation::tanh_fn, Activation::tanh_fn, rng);
    std::stringstream s1(std::ios::in | std::ios::out | std::ios::binary);
    save_mlp(s1, m);
    const std::string bytes1 = s1.str();
    s1.seekg(0);
    const Mlp loaded = load_mlp(s1);
    CHECK(loaded.sizes == m.sizes);
    CHECK(loaded.hidden == m.hidden);
    CHECK(loaded.output == m.output);
    for (std::size_t l = 0; l < m.w.size(); ++l) {
        CHECK(loaded.w[l] == m.w[l]);
        CHECK(loaded.b[l] == m.b[l]);
    }
    std::stringstream s2(std::ios::in | std::ios::out | std::ios::binary);
    save_mlp(s2, loaded);
    CHECK(s2.str() == bytes1);
}

}  // TEST_SUITE
