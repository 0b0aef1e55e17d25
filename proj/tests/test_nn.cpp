#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "ffdc/graph.hpp"
#include "ffdc/mask.hpp"
#include "ffdc/params.hpp"
#include "ffdc/rng.hpp"
#include "test_util.hpp"

using namespace ffdc;

namespace {

Tensor random_tensor(int r, int c, Rng& rng, double scale = 1.0) {
    Tensor t(r, c);
    for (double& x : t.v) x = rng.uniform(-scale, scale);
    return t;
}

BoolMask random_mask(int n, Rng& rng, double density = 0.5) {
    BoolMask m(n);
    for (int i = 0; i < n; ++i) {
        m.set(i, i, true);
        for (int j = 0; j < n; ++j)
            if (j != i && rng.uniform01() < density) m.set(i, j, true);
    }
    return m;
}

// Direct per-row softmax reimplementation, independent of the tape op.
Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMask& mask, int heads) {
    const int n = q.rows;
    const int hd = q.cols / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Tensor out(n, q.cols);
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < n; ++i) {
            std::vector<double> w(n, 0.0);
            double mx = -1e300;
            for (int j = 0; j < n; ++j) {
                if (!mask.get(i, j)) continue;
                double s = 0.0;
                for (int t = 0; t < hd; ++t) s += q.at(i, h * hd + t) * k.at(j, h * hd + t);
                w[j] = s * scale;
                mx = std::max(mx, w[j]);
            }
            double z = 0.0;
            for (int j = 0; j < n; ++j)
                if (mask.get(i, j)) {
                    w[j] = std::exp(w[j] - mx);
                    z += w[j];
                } else {
                    w[j] = 0.0;
                }
            for (int j = 0; j < n; ++j)
                for (int t = 0; t < hd; ++t) out.at(i, h * hd + t) += (w[j] / z) * v.at(j, h * hd + t);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("linear identity and scalar cases") {
    ParamStore store(7);
    store.add("w", 2, 2, ParamInit::zeros);
    store.value("w").at(0, 0) = 1.0;
    store.value("w").at(1, 1) = 1.0;
    store.add("b", 1, 2, ParamInit::zeros);
    Graph g(&store);
    const int y = g.add_row(g.matmul(g.input(Tensor(1, 2, {1.0, 0.0})), g.param("w")), g.param("b"));
    CHECK(g.value(y).at(0, 0) == 1.0);
    CHECK(g.value(y).at(0, 1) == 0.0);

    ParamStore s2(7);
    s2.add("w", 1, 1, ParamInit::zeros);
    s2.value("w").at(0, 0) = 3.0;
    s2.add("b", 1, 1, ParamInit::zeros);
    s2.value("b").at(0, 0) = 1.0;
    Graph g2(&s2);
    const int y2 = g2.add_row(g2.matmul(g2.input(Tensor(1, 1, {2.0})), g2.param("w")), g2.param("b"));
    CHECK(g2.value(y2).at(0, 0) == 7.0);
}

TEST_CASE("linear gradients match central finite differences to 1e-6") {
    Rng rng(11);
    ParamStore store(3);
    store.add("w", 4, 5);
    store.add("b", 1, 5);
    const Tensor x = random_tensor(3, 4, rng);
    const Tensor target = random_tensor(3, 5, rng);
    const auto loss = [&](bool backward) {
        Graph g(&store);
        const int y = g.add_row(g.matmul(g.input(x), g.param("w")), g.param("b"));
        const int l = g.mse_loss(y, target);
        if (backward) g.backward(l);
        return g.value(l).at(0, 0);
    };
    testutil::check_param_gradients(store, loss, 8, rng, 1e-6);
}

TEST_CASE("attention with a single all-ones key returns v") {
    ParamStore store(1);
    Graph g(&store);
    BoolMask mask(1);
    mask.set(0, 0, true);
    const Tensor v = Tensor(1, 4, {0.3, -0.7, 2.0, 0.05});
    const int out = g.attention(g.input(Tensor(1, 4, {1.0, 2.0, 3.0, 4.0})),
                                g.input(Tensor(1, 4, {0.5, 0.5, 0.5, 0.5})), g.input(v), &mask, 2);
    for (int c = 0; c < 4; ++c) CHECK(g.value(out).at(0, c) == doctest::Approx(v.at(0, c)).epsilon(1e-15));
}

TEST_CASE("token invisible to every query cannot influence any output") {
    Rng rng(5);
    const int n = 5, d = 8;
    BoolMask mask(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) mask.set(i, j, j != 3);  // column 3 fully hidden
    // Row 3 keeps visible keys (0..2, 4), so softmax stays well-defined.
    Tensor q = random_tensor(n, d, rng), k = random_tensor(n, d, rng), v = random_tensor(n, d, rng);

    ParamStore store(1);
    Graph g(&store);
    const int out = g.attention(g.input(q), g.input(k), g.input(v), &mask, 2);
    const Tensor base = g.value(out);

    for (int c = 0; c < d; ++c) {
        k.at(3, c) += 42.0;
        v.at(3, c) -= 17.0;
    }
    Graph g2(&store);
    const int out2 = g2.attention(g2.input(q), g2.input(k), g2.input(v), &mask, 2);
    for (size_t i = 0; i < base.v.size(); ++i) CHECK(base.v[i] == g2.value(out2).v[i]);  // bit-identical
}

TEST_CASE("attention matches a direct per-row softmax oracle on 6 random tokens") {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 6, d = 8;
        const Tensor q = random_tensor(n, d, rng), k = random_tensor(n, d, rng), v = random_tensor(n, d, rng);
        const BoolMask mask = random_mask(n, rng);
        ParamStore store(1);
        Graph g(&store);
        const int out = g.attention(g.input(q), g.input(k), g.input(v), &mask, 2);
        const Tensor expect = naive_attention(q, k, v, mask, 2);
        double worst = 0.0;
        for (size_t i = 0; i < expect.v.size(); ++i)
            worst = std::max(worst, std::abs(expect.v[i] - g.value(out).v[i]));
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("attention row with zero visible keys is a fatal mask error") {
    ParamStore store(1);
    Graph g(&store);
    BoolMask mask(2);
    mask.set(0, 0, true);  // row 1 sees nothing
    Rng rng(2);
    const Tensor t = random_tensor(2, 4, rng);
    CHECK_THROWS_AS(g.attention(g.input(t), g.input(t), g.input(t), &mask, 2), std::invalid_argument);
}

TEST_CASE("attention and layer-norm gradients under random masks") {
    Rng rng(23);
    for (int trial = 0; trial < 3; ++trial) {
        const int n = 5, d = 8;
        ParamStore store(100 + trial);
        store.add("q", n, d);
        store.add("k", n, d);
        store.add("v", n, d);
        store.add("g", 1, d, ParamInit::ones);
        store.add("b", 1, d, ParamInit::zeros);
        const BoolMask mask = random_mask(n, rng);
        const Tensor target = random_tensor(n, d, rng);
        const auto loss = [&](bool backward) {
            Graph g(&store);
            const int at = g.attention(g.param("q"), g.param("k"), g.param("v"), &mask, 2);
            const int ln = g.layer_norm(at, g.param("g"), g.param("b"));
            const int l = g.mse_loss(ln, target);
            if (backward) g.backward(l);
            return g.value(l).at(0, 0);
        };
        testutil::check_param_gradients(store, loss, 6, rng, 1e-4);
    }
}

TEST_CASE("tanh mlp composite gradients") {
    Rng rng(31);
    ParamStore store(9);
    store.add("w1", 6, 10);
    store.add("b1", 1, 10);
    store.add("w2", 10, 3);
    store.add("b2", 1, 3);
    const Tensor x = random_tensor(4, 6, rng);
    const Tensor target = random_tensor(4, 3, rng);
    const auto loss = [&](bool backward) {
        Graph g(&store);
        int h = g.tanh_op(g.add_row(g.matmul(g.input(x), g.param("w1")), g.param("b1")));
        h = g.add_row(g.matmul(h, g.param("w2")), g.param("b2"));
        const int l = g.mse_loss(h, target);
        if (backward) g.backward(l);
        return g.value(l).at(0, 0);
    };
    testutil::check_param_gradients(store, loss, 8, rng, 1e-4);
}

TEST_CASE("bce loss values and gradient") {
    ParamStore store(1);
    {
        Graph g(&store);
        const int z = g.input(Tensor(1, 1, {0.0}));
        const int l = g.bce_with_logit(z, 1.0);
        CHECK(g.value(l).at(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    {
        Graph g(&store);
        const int l = g.bce_with_logit(g.input(Tensor(1, 1, {0.0})), 0.0);
        CHECK(g.value(l).at(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    {
        // Direct evaluation oracle: -log(sigmoid(10)).
        const double direct = -std::log(1.0 / (1.0 + std::exp(-10.0)));
        Graph g(&store);
        const int l = g.bce_with_logit(g.input(Tensor(1, 1, {10.0})), 1.0);
        CHECK(g.value(l).at(0, 0) == doctest::Approx(direct).epsilon(1e-10));
        CHECK(g.value(l).at(0, 0) == doctest::Approx(4.5398899e-05).epsilon(1e-3));
    }
    {
        // dL/dz = sigmoid(z) - y, checked against finite differences.
        ParamStore s(3);
        s.add("z", 1, 1, ParamInit::zeros);
        s.value("z").at(0, 0) = 0.7;
        Rng rng(1);
        const auto loss = [&](bool backward) {
            Graph g(&s);
            const int l = g.bce_with_logit(g.param("z"), 1.0);
            if (backward) g.backward(l);
            return g.value(l).at(0, 0);
        };
        testutil::check_param_gradients(s, loss, 1, rng, 1e-6);
        s.zero_grads();
        loss(true);
        const double sig = 1.0 / (1.0 + std::exp(-0.7));
        CHECK(s.grad("z").at(0, 0) == doctest::Approx(sig - 1.0).epsilon(1e-12));
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamStore store(5);
    store.add("w", 3, 3);
    const std::vector<double> before = store.value("w").v;
    store.adam_step(AdamConfig{});
    store.adam_step(AdamConfig{});
    CHECK(store.value("w").v == before);
}

TEST_CASE("adam: one step on f(w)=w^2 strictly decreases |w|") {
    ParamStore store(5);
    store.add("w", 1, 1, ParamInit::zeros);
    store.value("w").at(0, 0) = 1.0;
    store.grad("w").at(0, 0) = 2.0;  // d/dw w^2 at w=1
    AdamConfig cfg;
    cfg.lr = 0.1;
    store.adam_step(cfg);
    CHECK(std::abs(store.value("w").at(0, 0)) < 1.0);
}

TEST_CASE("adam: 200 steps reach the least-squares solution within 1e-3") {
    // min_{a,b} sum_i (a x_i + b - y_i)^2 with y = 2x + 1 exactly.
    const std::vector<double> xs = {0.0, 0.5, 1.0};
    ParamStore store(5);
    store.add("a", 1, 1, ParamInit::zeros);
    store.add("b", 1, 1, ParamInit::zeros);
    AdamConfig cfg;
    cfg.lr = 0.1;
    for (int step = 0; step < 200; ++step) {
        double ga = 0.0, gb = 0.0;
        const double a = store.value("a").at(0, 0), b = store.value("b").at(0, 0);
        for (double x : xs) {
            const double err = a * x + b - (2.0 * x + 1.0);
            ga += 2.0 * err * x;
            gb += 2.0 * err;
        }
        store.grad("a").at(0, 0) = ga;
        store.grad("b").at(0, 0) = gb;
        store.adam_step(cfg);
    }
    CHECK(store.value("a").at(0, 0) == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(store.value("b").at(0, 0) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("adam aborts on non-finite gradients, naming the parameter") {
    ParamStore store(5);
    store.add("w", 1, 1);
    store.add("bad_param", 1, 1);
    store.grad("bad_param").at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
        store.adam_step(AdamConfig{});
        FAIL("expected adam_step to throw");
    } catch (const std::runtime_error& ex) {
        CHECK(std::string(ex.what()).find("bad_param") != std::string::npos);
    }
}

TEST_CASE("identical seed and config give bit-identical parameter trajectories") {
    const auto run = [](uint64_t seed) {
        ParamStore store(seed);
        store.add("w", 4, 4);
        store.add("b", 1, 4);
        Rng rng = Rng::stream(seed, "train");
        AdamConfig cfg;
        for (int step = 0; step < 20; ++step) {
            const Tensor x = random_tensor(2, 4, rng);
            const Tensor t = random_tensor(2, 4, rng);
            Graph g(&store);
            const int y = g.add_row(g.matmul(g.input(x), g.param("w")), g.param("b"));
            const int l = g.mse_loss(y, t);
            g.backward(l);
            store.adam_step(cfg);
        }
        return std::make_pair(store.value("w").v, store.value("b").v);
    };
    const auto a = run(99);
    const auto b = run(99);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);

    // Initialization is keyed by name, not registration order.
    ParamStore s1(42), s2(42);
    s1.add("alpha", 3, 3);
    s1.add("beta", 3, 3);
    s2.add("beta", 3, 3);
    s2.add("alpha", 3, 3);
    CHECK(s1.value("alpha").v == s2.value("alpha").v);
    CHECK(s1.value("beta").v == s2.value("beta").v);
}

TEST_CASE("checkpoint load-then-save is byte-identical") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "ffdc_ckpt_test").string();
    fs::create_directories(dir);
    ParamStore store(1234);
    store.add("w", 5, 7);
    store.add("b", 1, 7);
    store.meta_json = "{\"kind\":\"test\",\"h\":32}";
    const std::string p1 = dir + "/a.ckpt", p2 = dir + "/b.ckpt";
    store.save(p1);
    ParamStore loaded = ParamStore::load(p1);
    CHECK(loaded.value("w").v == store.value("w").v);
    CHECK(loaded.value("b").v == store.value("b").v);
    loaded.save(p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(c1 == c2);
    CHECK(c1.substr(0, 5) == "FFDC1");
}
