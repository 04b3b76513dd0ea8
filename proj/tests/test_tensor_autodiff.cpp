#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck_util.hpp"
#include "miniwm/nn.hpp"
#include "miniwm/tape.hpp"
#include "miniwm/tensor.hpp"

using namespace miniwm;

namespace {

// Reference matmul for validating the Eigen-backed path.
Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
    int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor<double> c({M, N});
    for (int64_t i = 0; i < M; ++i)
        for (int64_t k = 0; k < K; ++k)
            for (int64_t j = 0; j < N; ++j) c[i * N + j] += a[i * K + k] * b[k * N + j];
    return c;
}

}  // namespace

TEST_CASE("broadcasting add/mul match manual expansion") {
    Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> b({3}, {10, 20, 30});
    Tensor<double> c = a + b;
    CHECK(c.shape() == Shape{2, 3});
    CHECK(c[0] == 11);
    CHECK(c[5] == 36);

    Tensor<double> col({2, 1}, {2, 3});
    Tensor<double> d = a * col;
    CHECK(d[0] == 2);
    CHECK(d[3] == 12);
}

TEST_CASE("reduce_to_shape inverts broadcast") {
    Tensor<double> g({2, 3}, {1, 1, 1, 1, 1, 1});
    Tensor<double> r = reduce_to_shape(g, {3});
    CHECK(r.shape() == Shape{3});
    CHECK(r[0] == 2);
    Tensor<double> r2 = reduce_to_shape(g, {2, 1});
    CHECK(r2[0] == 3);
    CHECK(r2[1] == 3);
}

TEST_CASE("matmul agrees with naive implementation") {
    Rng rng(7);
    Tensor<double> a = random_normal<double>({5, 4}, rng);
    Tensor<double> b = random_normal<double>({4, 6}, rng);
    Tensor<double> c = matmul(a, b);
    Tensor<double> ref = naive_matmul(a, b);
    for (int64_t i = 0; i < c.numel(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("batched matmul broadcasting over shared weight") {
    Rng rng(8);
    Tensor<double> a = random_normal<double>({2, 3, 5, 4}, rng);
    Tensor<double> w = random_normal<double>({4, 6}, rng);
    Tensor<double> c = matmul(a, w);
    CHECK(c.shape() == Shape{2, 3, 5, 6});
    // spot-check one batch against 2D matmul
    Tensor<double> a0({5, 4});
    std::copy(a.data() + 1 * 3 * 20 + 2 * 20, a.data() + 1 * 3 * 20 + 3 * 20, a0.data());
    Tensor<double> ref = naive_matmul(a0, w);
    for (int64_t i = 0; i < 30; ++i) CHECK(c[(1 * 3 + 2) * 30 + i] == doctest::Approx(ref[i]));
}

TEST_CASE("permute round trip") {
    Rng rng(9);
    Tensor<double> a = random_normal<double>({2, 3, 4, 5}, rng);
    auto p = permuted(a, {2, 0, 3, 1});
    auto back = permuted(p, inverse_perm<double>({2, 0, 3, 1}));
    CHECK(back.shape() == a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(back[i] == a[i]);
}

TEST_CASE("autodiff: per-op gradients vs finite differences") {
    Rng seed_rng(42);

    auto check_op = [&](const char* tag, auto build, Shape xs) {
        Params<double> P(123);
        Tensor<double>& x = P.create("x", xs, 1.0);
        (void)x;
        auto loss = [&](Params<double>& params,
                        std::map<std::string, Tensor<double>>* grads) -> double {
            Tape<double> tape;
            Ctx<double> ctx{tape, params, true};
            Val<double> y = build(ctx, ctx.p("x"));
            // weight the output so norm-type ops have a non-degenerate loss
            Rng wr(4242);
            Tensor<double> w = random_normal<double>(tape.val(y).shape(), wr);
            Val<double> l = mean_all(square(y * tape.constant(std::move(w))));
            tape.backward(l);
            if (grads) ctx.collect_grads(*grads);
            return tape.val(l).item();
        };
        Rng rng(seed_rng.next_u64());
        auto res = testutil::gradcheck(P, loss, 24, rng, 1e-5);
        INFO(tag << " worst " << res.worst_param << " analytic " << res.analytic_at_worst
                 << " numeric " << res.numeric_at_worst);
        CHECK(res.max_rel_err < 1e-4);
    };

    check_op("tanh", [](Ctx<double>& c, Val<double> x) { (void)c; return tanh(x); }, {3, 4});
    check_op("sigmoid", [](Ctx<double>& c, Val<double> x) { (void)c; return sigmoid(x); }, {3, 4});
    check_op("silu", [](Ctx<double>& c, Val<double> x) { (void)c; return silu(x); }, {3, 4});
    check_op("gelu", [](Ctx<double>& c, Val<double> x) { (void)c; return gelu(x); }, {3, 4});
    check_op("exp", [](Ctx<double>& c, Val<double> x) { (void)c; return exp(mul_scalar(x, 0.3)); }, {3, 4});
    check_op("softmax", [](Ctx<double>& c, Val<double> x) { (void)c; return softmax_lastdim(x); }, {4, 6});
    check_op("layernorm", [](Ctx<double>& c, Val<double> x) { (void)c; return layer_norm_lastdim(x); }, {4, 8});
    check_op("rmsnorm", [](Ctx<double>& c, Val<double> x) { (void)c; return rms_norm_lastdim(x); }, {4, 8});
    check_op("slice", [](Ctx<double>& c, Val<double> x) { (void)c; return slice(x, 1, 2, 3); }, {4, 8});
    check_op("patchify",
             [](Ctx<double>& c, Val<double> x) { (void)c; return patchify(x, 2, 2, 2); },
             {1, 4, 4, 4, 3});
    check_op("d2s",
             [](Ctx<double>& c, Val<double> x) { (void)c; return depth_to_space(x, 2, 2, 1, 2); },
             {1, 2, 2, 2, 8});
    check_op("div",
             [](Ctx<double>& c, Val<double> x) {
                 return x / add_scalar(square(c.p("x")), 2.0);
             },
             {3, 4});
}

TEST_CASE("autodiff: broadcast gradients") {
    Params<double> P(5);
    P.create("a", {2, 3}, 1.0);
    P.create("b", {3}, 1.0);
    auto loss = [&](Params<double>& params, std::map<std::string, Tensor<double>>* grads) {
        Tape<double> tape;
        Ctx<double> ctx{tape, params, true};
        Val<double> y = ctx.p("a") * ctx.p("b") + ctx.p("b");
        Val<double> l = mean_all(square(y));
        tape.backward(l);
        if (grads) ctx.collect_grads(*grads);
        return tape.val(l).item();
    };
    Rng rng(3);
    auto res = testutil::gradcheck(P, loss, 24, rng, 1e-6);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("autodiff: fused losses match compositions and gradcheck") {
    Rng rng(11);
    Tensor<double> target = random_normal<double>({3, 5}, rng);
    Tensor<double> mask({3, 5});
    for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = (i % 2 == 0) ? 1.0 : 0.0;

    Params<double> P(6);
    P.create("x", {3, 5}, 1.0);

    auto mk_loss = [&](int which) {
        return [&, which](Params<double>& params,
                          std::map<std::string, Tensor<double>>* grads) -> double {
            Tape<double> tape;
            Ctx<double> ctx{tape, params, true};
            Val<double> x = ctx.p("x");
            Val<double> l;
            if (which == 0) l = l2_loss(x, target);
            else if (which == 1) l = l1_loss(x, target);
            else if (which == 2) l = masked_mse(x, target, mask);
            else l = cosine_distance_loss(x, target);
            tape.backward(l);
            if (grads) ctx.collect_grads(*grads);
            return tape.val(l).item();
        };
    };

    for (int which : {0, 2, 3}) {
        Rng r2(100 + which);
        auto res = testutil::gradcheck(P, mk_loss(which), 20, r2, 1e-6);
        INFO("loss kind " << which << " worst " << res.worst_param);
        CHECK(res.max_rel_err < 1e-5);
    }

    // value equalities
    {
        Tape<double> tape;
        Ctx<double> ctx{tape, P, false};
        Val<double> x = ctx.p("x");
        double l2 = tape.val(l2_loss(x, target)).item();
        double manual = 0;
        const Tensor<double>& xv = P.at("x");
        for (int64_t i = 0; i < xv.numel(); ++i) {
            double d = xv[i] - target[i];
            manual += d * d;
        }
        CHECK(l2 == doctest::Approx(manual / xv.numel()).epsilon(1e-12));
    }
}

TEST_CASE("autodiff: attention and linear modules gradcheck") {
    Params<double> P(77);
    Attention<double> attn(P, "attn", 8, 2);
    Linear<double> lin(P, "lin", 8, 8);
    Rng rng(13);
    Tensor<double> input = random_normal<double>({2, 5, 8}, rng);

    auto loss = [&](Params<double>& params, std::map<std::string, Tensor<double>>* grads) {
        Tape<double> tape;
        Ctx<double> ctx{tape, params, true};
        Val<double> x = tape.constant(input);
        Val<double> y = attn(ctx, lin(ctx, x));
        Val<double> l = mean_all(square(y));
        tape.backward(l);
        if (grads) ctx.collect_grads(*grads);
        return tape.val(l).item();
    };
    Rng rng2(17);
    auto res = testutil::gradcheck(P, loss, 40, rng2, 1e-5);
    INFO("worst " << res.worst_param << " analytic " << res.analytic_at_worst << " numeric "
                  << res.numeric_at_worst);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("embedding gather accumulates duplicate index grads") {
    Params<double> P(9);
    EmbeddingTable<double> emb(P, "emb", 4, 3);
    auto loss = [&](Params<double>& params, std::map<std::string, Tensor<double>>* grads) {
        Tape<double> tape;
        Ctx<double> ctx{tape, params, true};
        Val<double> rows = emb(ctx, {1, 1, 2});
        Val<double> l = sum_all(rows);
        tape.backward(l);
        if (grads) ctx.collect_grads(*grads);
        return tape.val(l).item();
    };
    std::map<std::string, Tensor<double>> grads;
    loss(P, &grads);
    const Tensor<double>& g = grads.at("emb.table");
    CHECK(g[1 * 3 + 0] == 2.0);  // row 1 used twice
    CHECK(g[2 * 3 + 0] == 1.0);
    CHECK(g[0] == 0.0);
}

TEST_CASE("rng determinism and normal moments") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng r(99);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double z = r.normal();
        s += z;
        s2 += z * z;
    }
    double m = s / n;
    double var = s2 / n - m * m;
    CHECK(std::abs(m) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}
