#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "bmlp/grad_check.hpp"
#include "bmlp/hip.hpp"

using namespace bmlp;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor::random_uniform(r, c, lo, hi, rng);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && std::memcmp(a.data.data(), b.data.data(), a.numel() * sizeof(double)) == 0;
}

std::vector<ParamRef<double>> scb_refs(ScbWeightsT<double>& w, const std::string& prefix) {
    return {{prefix + ".w1", &w.w1}, {prefix + ".w2", &w.w2}, {prefix + ".gamma", &w.gamma}, {prefix + ".beta", &w.beta}};
}

std::vector<ParamRef<double>> fcb_refs(FcbWeightsT<double>& w, const std::string& prefix) {
    std::vector<ParamRef<double>> refs;
    for (std::size_t h = 0; h < w.heads(); ++h) {
        refs.push_back({prefix + ".w1[" + std::to_string(h) + "]", &w.w1[h]});
        refs.push_back({prefix + ".w2[" + std::to_string(h) + "]", &w.w2[h]});
    }
    refs.push_back({prefix + ".w_o", &w.w_o});
    refs.push_back({prefix + ".gamma", &w.gamma});
    refs.push_back({prefix + ".beta", &w.beta});
    return refs;
}

} // namespace

TEST_CASE("scb_forward: zero second projection is the exact identity") {
    RngStream rng(41);
    ScbWeightsT<double> w(4, 6, 8, rng);
    w.w2.value.set_zero();
    for (int rep = 0; rep < 5; ++rep) {
        Tensor x = random_tensor(4, 8, rng);
        Tensor y = scb_forward(x, w);
        CHECK(bit_equal(x, y));
    }
}

TEST_CASE("scb_forward: single-position sequence") {
    RngStream rng(43);
    ScbWeightsT<double> w(1, 3, 6, rng);
    Tensor x = random_tensor(1, 6, rng);
    Tensor y = scb_forward(x, w);
    // Hand-composed: ln row, transpose to 6x1, two matmuls, transpose back.
    Tensor ln = layer_norm(x, w.gamma.value, w.beta.value);
    Tensor mixed = dense(gelu(dense(transpose(ln), w.w1.value)), w.w2.value);
    Tensor expect = x;
    expect.add_(transpose(mixed));
    CHECK(max_abs_diff(y, expect) < 1e-15);
}

TEST_CASE("scb_forward: matches the step-by-step composition oracle") {
    RngStream rng(47);
    ScbWeightsT<double> w(4, 5, 6, rng);
    Tensor x = random_tensor(4, 6, rng);
    Tensor y = scb_forward(x, w);

    Tensor ln = layer_norm(x, w.gamma.value, w.beta.value);
    Tensor step1 = dense(transpose(ln), w.w1.value);
    Tensor step2 = gelu(step1);
    Tensor step3 = dense(step2, w.w2.value);
    Tensor expect = x;
    expect.add_(transpose(step3));
    CHECK(max_abs_diff(y, expect) < 1e-12);
}

TEST_CASE("fcb_forward: zero output projection is the exact identity") {
    RngStream rng(53);
    FcbWeightsT<double> w(8, 5, 2, rng);
    w.w_o.value.set_zero();
    for (int rep = 0; rep < 5; ++rep) {
        Tensor x = random_tensor(3, 8, rng);
        Tensor y = fcb_forward(x, w);
        CHECK(bit_equal(x, y));
    }
}

TEST_CASE("fcb_forward: H=1 with identity projection reduces to one feature MLP") {
    RngStream rng(59);
    FcbWeightsT<double> w(6, 4, 1, rng);
    w.w_o.value.set_zero();
    for (std::size_t i = 0; i < 6; ++i) w.w_o.value(i, i) = 1.0;
    Tensor x = random_tensor(3, 6, rng);
    Tensor y = fcb_forward(x, w);
    Tensor ln = layer_norm(x, w.gamma.value, w.beta.value);
    Tensor expect = x;
    expect.add_(dense(sigmoid(dense(ln, w.w1[0].value)), w.w2[0].value));
    CHECK(max_abs_diff(y, expect) < 1e-12);
}

TEST_CASE("fcb_forward: H=2 matches the per-head oracle") {
    RngStream rng(61);
    FcbWeightsT<double> w(4, 7, 2, rng);
    Tensor x = random_tensor(3, 4, rng);
    Tensor y = fcb_forward(x, w);

    Tensor ln = layer_norm(x, w.gamma.value, w.beta.value);
    Tensor concat(3, 4);
    for (std::size_t h = 0; h < 2; ++h) {
        Tensor slice(3, 2);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j) slice(i, j) = ln(i, h * 2 + j);
        Tensor head = dense(sigmoid(dense(slice, w.w1[h].value)), w.w2[h].value);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j) concat(i, h * 2 + j) = head(i, j);
    }
    Tensor expect = x;
    expect.add_(dense(concat, w.w_o.value));
    CHECK(max_abs_diff(y, expect) < 1e-12);
}

TEST_CASE("fcb: invalid head count is a configuration error") {
    RngStream rng(67);
    CHECK_THROWS_AS(FcbWeightsT<double>(6, 4, 4, rng), ConfigError);
}

TEST_CASE("pool: singleton, uniform, and exact softmax arithmetic") {
    RngStream rng(71);
    PoolWeightsT<double> w(4, rng);

    SECTION("one real position returns that row") {
        Tensor x = random_tensor(3, 4, rng);
        std::vector<std::uint8_t> mask{0, 0, 1};
        RngStream r(1);
        Tensor e = pool_forward(x, w, mask, 0.0, Mode::eval, r);
        for (std::size_t j = 0; j < 4; ++j) CHECK(e(0, j) == Catch::Approx(x(2, j)).margin(1e-15));
    }
    SECTION("zero weights give the mean of real rows") {
        PoolWeightsT<double> wz(4, rng);
        wz.w_alpha.value.set_zero();
        Tensor x = random_tensor(4, 4, rng);
        std::vector<std::uint8_t> mask{0, 1, 1, 0};
        RngStream r(1);
        Tensor e = pool_forward(x, wz, mask, 0.0, Mode::eval, r);
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(e(0, j) == Catch::Approx(0.5 * (x(1, j) + x(2, j))).margin(1e-12));
    }
    SECTION("logits [ln2, ln1, ln1] give alpha [0.5, 0.25, 0.25]") {
        // Build x so that x * w_alpha produces those logits exactly.
        PoolWeightsT<double> wu(1, rng);
        wu.w_alpha.value(0, 0) = 1.0;
        Tensor x(3, 1);
        x(0, 0) = std::log(2.0);
        x(1, 0) = 0.0;
        x(2, 0) = 0.0;
        std::vector<std::uint8_t> mask{1, 1, 1};
        RngStream r(1);
        PoolCache<double> cache;
        pool_forward(x, wu, mask, 0.0, Mode::eval, r, &cache);
        CHECK(cache.alpha[0] == Catch::Approx(0.5).margin(1e-12));
        CHECK(cache.alpha[1] == Catch::Approx(0.25).margin(1e-12));
        CHECK(cache.alpha[2] == Catch::Approx(0.25).margin(1e-12));
    }
    SECTION("fully masked input is an error") {
        Tensor x = random_tensor(2, 4, rng);
        std::vector<std::uint8_t> mask{0, 0};
        RngStream r(1);
        CHECK_THROWS_AS(pool_forward(x, w, mask, 0.0, Mode::eval, r), InvalidInputError);
    }
}

TEST_CASE("hip_forward: zeroed projections reduce to pooled input") {
    RngStream rng(73);
    const std::size_t L = 5, width = 6;
    std::vector<HipBlockWeightsT<double>> blocks;
    for (int n = 0; n < 2; ++n) {
        HipBlockWeightsT<double> b;
        b.scb = ScbWeightsT<double>(L, 4, width, rng);
        b.fcb = FcbWeightsT<double>(width, 4, 2, rng);
        b.scb.w2.value.set_zero();
        b.fcb.w_o.value.set_zero();
        blocks.push_back(std::move(b));
    }
    PoolWeightsT<double> pw(width, rng);
    Tensor x0 = random_tensor(L, width, rng);
    std::vector<std::uint8_t> mask{0, 1, 1, 1, 1};
    RngStream r(3);
    Tensor e = hip_forward(x0, blocks, pw, mask, 0.0, Mode::eval, r);
    RngStream r2(3);
    Tensor direct = pool_forward(x0, pw, mask, 0.0, Mode::eval, r2);
    CHECK(bit_equal(e, direct));
}

TEST_CASE("hip_forward: equals the sequential composition oracle") {
    RngStream rng(79);
    const std::size_t L = 4, width = 6;
    std::vector<HipBlockWeightsT<double>> blocks;
    for (int n = 0; n < 2; ++n) {
        HipBlockWeightsT<double> b;
        b.scb = ScbWeightsT<double>(L, 5, width, rng);
        b.fcb = FcbWeightsT<double>(width, 3, 2, rng);
        blocks.push_back(std::move(b));
    }
    PoolWeightsT<double> pw(width, rng);
    Tensor x0 = random_tensor(L, width, rng);
    std::vector<std::uint8_t> mask{1, 1, 1, 1};
    RngStream r(5);
    Tensor e = hip_forward(x0, blocks, pw, mask, 0.0, Mode::eval, r);

    Tensor x = x0;
    for (auto& b : blocks) {
        x = scb_forward(x, b.scb);
        x = fcb_forward(x, b.fcb);
    }
    RngStream r2(5);
    Tensor expect = pool_forward(x, pw, mask, 0.0, Mode::eval, r2);
    CHECK(max_abs_diff(e, expect) < 1e-12);
}

TEST_CASE("hip: order sensitivity with and without SCB") {
    RngStream rng(83);
    const std::size_t L = 6, width = 8;
    std::vector<HipBlockWeightsT<double>> blocks(1);
    blocks[0].scb = ScbWeightsT<double>(L, 6, width, rng);
    blocks[0].fcb = FcbWeightsT<double>(width, 6, 2, rng);
    PoolWeightsT<double> pw(width, rng);
    Tensor x0 = random_tensor(L, width, rng);
    std::vector<std::uint8_t> mask(L, 1);

    auto run = [&](const Tensor& x, BlockToggles t) {
        RngStream r(9);
        return hip_forward(x, blocks, pw, mask, 0.0, Mode::eval, r, t);
    };

    Tensor base_full = run(x0, {});
    Tensor base_noscb = run(x0, {.use_scb = false, .use_fcb = true});

    RngStream perm_rng(91);
    bool found_change = false;
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<std::size_t> order(L);
        for (std::size_t i = 0; i < L; ++i) order[i] = i;
        perm_rng.shuffle(order);
        Tensor xp(L, width);
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < width; ++j) xp(i, j) = x0(order[i], j);

        // With SCB, some permutation must move the pooled vector.
        Tensor ep = run(xp, {});
        double diff = 0;
        for (std::size_t j = 0; j < width; ++j) diff += std::abs(ep(0, j) - base_full(0, j));
        if (diff > 1e-6) found_change = true;

        // Without SCB the stack is position-blind.
        Tensor en = run(xp, {.use_scb = false, .use_fcb = true});
        CHECK(max_abs_diff(en, base_noscb) < 1e-12);
    }
    CHECK(found_change);
}

TEST_CASE("hip: alpha sums to one over real positions and eval mode is deterministic") {
    RngStream rng(97);
    const std::size_t L = 7, width = 6;
    std::vector<HipBlockWeightsT<double>> blocks(1);
    blocks[0].scb = ScbWeightsT<double>(L, 4, width, rng);
    blocks[0].fcb = FcbWeightsT<double>(width, 4, 2, rng);
    PoolWeightsT<double> pw(width, rng);
    Tensor x0 = random_tensor(L, width, rng);
    std::vector<std::uint8_t> mask{0, 0, 1, 1, 1, 1, 1};

    RngStream r(11);
    HipCache<double> cache;
    Tensor e1 = hip_forward(x0, blocks, pw, mask, 0.0, Mode::eval, r, {}, &cache);
    double sum = 0;
    for (std::size_t t = 0; t < L; ++t) {
        if (!mask[t])
            CHECK(cache.pool.alpha[t] == 0.0);
        else
            sum += cache.pool.alpha[t];
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);

    RngStream r2(999); // eval ignores the stream
    Tensor e2 = hip_forward(x0, blocks, pw, mask, 0.5, Mode::eval, r2);
    RngStream r3(5);
    Tensor e3 = hip_forward(x0, blocks, pw, mask, 0.5, Mode::eval, r3);
    CHECK(bit_equal(e2, e3));
}

TEST_CASE("hip_backward: zero upstream gradient gives zero gradients") {
    RngStream rng(101);
    const std::size_t L = 4, width = 6;
    std::vector<HipBlockWeightsT<double>> blocks(1);
    blocks[0].scb = ScbWeightsT<double>(L, 3, width, rng);
    blocks[0].fcb = FcbWeightsT<double>(width, 3, 2, rng);
    PoolWeightsT<double> pw(width, rng);
    Tensor x0 = random_tensor(L, width, rng);
    std::vector<std::uint8_t> mask(L, 1);
    RngStream r(13);
    HipCache<double> cache;
    hip_forward(x0, blocks, pw, mask, 0.0, Mode::train, r, {}, &cache);
    Tensor dpool(1, width);
    Tensor dx = hip_backward(dpool, cache, blocks, pw);
    for (double v : dx.data) CHECK(v == 0.0);
    for (double v : blocks[0].scb.w1.grad.data) CHECK(v == 0.0);
    for (double v : pw.w_alpha.grad.data) CHECK(v == 0.0);
}

namespace {

struct HipHarness {
    std::vector<HipBlockWeightsT<double>> blocks;
    PoolWeightsT<double> pool;
    ParamT<double> x0; // treat the input as a parameter to check dX too
    std::vector<std::uint8_t> mask;
    Tensor probe; // fixed projection making the loss a scalar
    double rate = 0.0;
    Mode mode = Mode::eval;
    std::uint64_t drop_seed = 17;

    double loss() {
        RngStream r(drop_seed);
        Tensor e = hip_forward(x0.value, blocks, pool, mask, rate, mode, r);
        double s = 0;
        for (std::size_t j = 0; j < e.cols(); ++j) s += std::sin(e(0, j)) * probe(0, j);
        return s;
    }

    void backward() {
        RngStream r(drop_seed);
        HipCache<double> cache;
        Tensor e = hip_forward(x0.value, blocks, pool, mask, rate, mode, r, {}, &cache);
        Tensor de(1, e.cols());
        for (std::size_t j = 0; j < e.cols(); ++j) de(0, j) = std::cos(e(0, j)) * probe(0, j);
        Tensor dx = hip_backward(de, cache, blocks, pool);
        x0.grad.add_(dx);
    }

    std::vector<ParamRef<double>> refs() {
        std::vector<ParamRef<double>> out;
        for (std::size_t n = 0; n < blocks.size(); ++n) {
            auto s = scb_refs(blocks[n].scb, "scb" + std::to_string(n));
            auto f = fcb_refs(blocks[n].fcb, "fcb" + std::to_string(n));
            out.insert(out.end(), s.begin(), s.end());
            out.insert(out.end(), f.begin(), f.end());
        }
        out.push_back({"pool.w_alpha", &pool.w_alpha});
        out.push_back({"x0", &x0});
        return out;
    }
};

HipHarness make_harness(std::uint64_t seed) {
    RngStream rng(seed);
    const std::size_t L = 4, width = 6;
    HipHarness h;
    h.blocks.resize(1);
    h.blocks[0].scb = ScbWeightsT<double>(L, 5, width, rng);
    h.blocks[0].fcb = FcbWeightsT<double>(width, 4, 2, rng);
    h.pool = PoolWeightsT<double>(width, rng);
    h.x0 = ParamT<double>(Tensor::random_uniform(L, width, -1, 1, rng));
    h.mask = {0, 1, 1, 1};
    h.probe = Tensor::random_uniform(1, width, -1, 1, rng);
    return h;
}

} // namespace

TEST_CASE("hip_backward: finite differences on a tiny configuration") {
    HipHarness h = make_harness(103);
    for (auto& r : h.refs()) r.param->zero_grad();
    h.backward();
    auto rep = grad_check<double>([&] { return h.loss(); }, h.refs(), 1e-5, 24, RngStream(7));
    INFO("worst " << rep.worst_param << " analytic " << rep.worst_analytic << " numeric " << rep.worst_numeric);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("hip_backward: finite differences through a frozen dropout mask") {
    HipHarness h = make_harness(107);
    h.rate = 0.4;
    h.mode = Mode::train;
    for (auto& r : h.refs()) r.param->zero_grad();
    h.backward();
    auto rep = grad_check<double>([&] { return h.loss(); }, h.refs(), 1e-5, 24, RngStream(8));
    INFO("worst " << rep.worst_param << " analytic " << rep.worst_analytic << " numeric " << rep.worst_numeric);
    CHECK(rep.max_rel_err < 1e-4);
}
