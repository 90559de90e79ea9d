#include "doctest.h"

#include "styleadapt/errors.hpp"
#include "styleadapt/tensor.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace styleadapt;

namespace {

// Central finite differences against the analytic gradient of a scalar-
// valued graph builder, checked entrywise on every parameter.
void gradcheck(const std::vector<Tensor>& params, const std::function<Tensor()>& build,
               double h = 1e-6, double tol = 1e-6) {
    Tensor loss = build();
    zero_grad(params);
    backward(loss);
    std::vector<Matrix> analytic;
    for (const auto& p : params) analytic.push_back(p->grad);

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (long i = 0; i < p->val.rows(); ++i) {
            for (long j = 0; j < p->val.cols(); ++j) {
                double saved = p->val(i, j);
                p->val(i, j) = saved + h;
                double up = build()->scalar();
                p->val(i, j) = saved - h;
                double down = build()->scalar();
                p->val(i, j) = saved;
                double fd = (up - down) / (2.0 * h);
                double an = analytic[pi](i, j);
                double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
                INFO("param ", pi, " entry (", i, ",", j, ") fd=", fd, " an=", an);
                CHECK(std::fabs(fd - an) / denom < tol);
            }
        }
    }
}

}  // namespace

TEST_CASE("matmul/linear/relu gradients") {
    Rng rng(1);
    Tensor x = parameter(init_normal(3, 4, 1.0, rng), "x");
    Tensor w = parameter(init_normal(4, 5, 1.0, rng), "w");
    Tensor b = parameter(init_normal(1, 5, 1.0, rng), "b");
    Tensor w2 = parameter(init_normal(5, 2, 1.0, rng), "w2");
    Matrix lossw = init_normal(3, 2, 1.0, rng);
    gradcheck({x, w, b, w2}, [&] {
        Tensor h = relu(linear(x, w, b));
        Tensor out = matmul(h, w2);
        return weighted_sum(out, lossw);
    });
}

TEST_CASE("mul/sub/scale/exp gradients") {
    Rng rng(2);
    Tensor a = parameter(init_normal(2, 3, 0.5, rng), "a");
    Tensor b = parameter(init_normal(2, 3, 0.5, rng), "b");
    Matrix w = init_normal(2, 3, 1.0, rng);
    gradcheck({a, b},
              [&] { return weighted_sum(exp_elem(mul(sub(a, b), scale(add(a, b), 0.7))), w); });
}

TEST_CASE("layer_norm gradients") {
    Rng rng(3);
    Tensor x = parameter(init_normal(4, 6, 1.0, rng), "x");
    Tensor g = parameter(init_normal(1, 6, 0.5, rng), "g");
    Tensor b = parameter(init_normal(1, 6, 0.5, rng), "b");
    Matrix w = init_normal(4, 6, 1.0, rng);
    gradcheck({x, g, b}, [&] { return weighted_sum(layer_norm(x, g, b), w); }, 1e-6, 5e-6);
}

TEST_CASE("attention gradients (causal + key mask)") {
    Rng rng(4);
    long batch = 2, tq = 3, d = 8;
    int heads = 2;
    Tensor q = parameter(init_normal(batch * tq, d, 0.7, rng), "q");
    Tensor k = parameter(init_normal(batch * tq, d, 0.7, rng), "k");
    Tensor v = parameter(init_normal(batch * tq, d, 0.7, rng), "v");
    Matrix mask = Matrix::Ones(batch, tq);
    mask(1, 2) = 0.0;  // padded key
    Matrix w = init_normal(batch * tq, d, 1.0, rng);
    gradcheck(
        {q, k, v},
        [&] { return weighted_sum(attention(q, k, v, batch, tq, tq, heads, true, mask), w); },
        1e-6, 5e-6);
}

TEST_CASE("cross attention gradients (tq != tk)") {
    Rng rng(5);
    long batch = 2, tq = 2, tk = 4, d = 8;
    Tensor q = parameter(init_normal(batch * tq, d, 0.7, rng), "q");
    Tensor k = parameter(init_normal(batch * tk, d, 0.7, rng), "k");
    Tensor v = parameter(init_normal(batch * tk, d, 0.7, rng), "v");
    Matrix mask = Matrix::Ones(batch, tk);
    mask(0, 3) = 0.0;
    Matrix w = init_normal(batch * tq, d, 1.0, rng);
    gradcheck(
        {q, k, v},
        [&] { return weighted_sum(attention(q, k, v, batch, tq, tk, 2, false, mask), w); }, 1e-6,
        5e-6);
}

TEST_CASE("embedding gradients scatter to used rows") {
    Rng rng(6);
    Tensor table = parameter(init_normal(7, 4, 1.0, rng), "table");
    std::vector<int> ids{1, 3, 3, 0};
    Matrix w = init_normal(4, 4, 1.0, rng);
    gradcheck({table}, [&] { return weighted_sum(embedding(table, ids), w); });

    zero_grad({table});
    backward(weighted_sum(embedding(table, ids), w));
    CHECK(table->grad.row(5).norm() == 0.0);  // unused row
    CHECK(table->grad.row(3).norm() > 0.0);
}

TEST_CASE("nll_rows matches manual cross entropy and its gradient") {
    Rng rng(7);
    Tensor logits = parameter(init_normal(3, 5, 1.0, rng), "logits");
    std::vector<int> targets{2, 0, 4};
    Matrix w(3, 1);
    w << 0.3, 1.1, -0.4;

    Tensor nll = nll_rows(logits, targets);
    for (long i = 0; i < 3; ++i) {
        Eigen::VectorXd logp = log_softmax_vector(logits->val.row(i).transpose());
        CHECK(nll->val(i, 0) ==
              doctest::Approx(-logp(targets[static_cast<std::size_t>(i)])).epsilon(1e-12));
    }
    gradcheck({logits}, [&] { return weighted_sum(nll_rows(logits, targets), w); });

    SUBCASE("label smoothing") {
        gradcheck({logits}, [&] { return weighted_sum(nll_rows(logits, targets, 0.1), w); });
    }
    SUBCASE("ignored rows contribute nothing") {
        std::vector<bool> ignore{false, true, false};
        Tensor masked = nll_rows(logits, targets, 0.0, &ignore);
        CHECK(masked->val(1, 0) == 0.0);
    }
}

TEST_CASE("structural ops: slice/concat/gather/window/colmax gradients") {
    Rng rng(8);
    Tensor x = parameter(init_normal(5, 4, 1.0, rng), "x");
    Matrix w3 = init_normal(3, 4, 1.0, rng);
    gradcheck({x}, [&] { return weighted_sum(slice_rows(x, 1, 3), w3); });

    Tensor y = parameter(init_normal(2, 4, 1.0, rng), "y");
    Matrix w7 = init_normal(7, 4, 1.0, rng);
    gradcheck({x, y}, [&] { return weighted_sum(vconcat({x, y}), w7); });

    Matrix w58 = init_normal(5, 8, 1.0, rng);
    Tensor z = parameter(init_normal(5, 4, 1.0, rng), "z");
    gradcheck({x, z}, [&] { return weighted_sum(hconcat({x, z}), w58); });

    Matrix w44 = init_normal(4, 4, 1.0, rng);
    gradcheck({x}, [&] { return weighted_sum(gather_rows(x, {0, 2, 2, 4}), w44); });

    Matrix w_win = init_normal(4, 8, 1.0, rng);
    gradcheck({x}, [&] { return weighted_sum(window_concat(x, 2), w_win); });

    Matrix w_cm = init_normal(1, 4, 1.0, rng);
    gradcheck({x}, [&] { return weighted_sum(col_max(x), w_cm); });
}

TEST_CASE("no-grad guard suppresses recording") {
    Rng rng(9);
    Tensor x = parameter(init_normal(2, 2, 1.0, rng), "x");
    NoGradGuard guard;
    Tensor y = relu(matmul(x, x));
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
}

TEST_CASE("frozen leaves receive no gradient but pass it through") {
    Rng rng(10);
    Tensor frozen = parameter(init_normal(3, 3, 1.0, rng), "frozen");
    frozen->requires_grad = false;
    Tensor trainable = parameter(init_normal(3, 3, 1.0, rng), "trainable");
    Tensor loss = sum_all(matmul(frozen, relu(matmul(trainable, frozen))));
    zero_grad({trainable});
    backward(loss);
    CHECK(frozen->grad.size() == 0);
    CHECK(trainable->grad.norm() > 0.0);
}

TEST_CASE("adam minimizes a quadratic") {
    Tensor p = parameter(Matrix::Constant(1, 1, 5.0), "p");
    AdamOptimizer opt({p}, 0.1, 0.0);
    for (int i = 0; i < 500; ++i) {
        opt.zero_grad();
        Tensor loss = weighted_sum(mul(p, p), Matrix::Ones(1, 1));
        backward(loss);
        opt.step();
    }
    CHECK(std::fabs(p->val(0, 0)) < 1e-2);
}

TEST_CASE("rng determinism and derivation") {
    Rng a(42), b(42);
    for (int i = 0; i < 10; ++i) CHECK(a.uniform() == b.uniform());
    Rng c = Rng(42).derive("x");
    Rng d = Rng(42).derive("x");
    Rng e = Rng(42).derive("y");
    CHECK(c.uniform() == d.uniform());
    CHECK(c.uniform() != e.uniform());
}

TEST_CASE("categorical sampling respects the distribution") {
    Rng rng(11);
    Eigen::VectorXd probs(3);
    probs << 0.2, 0.5, 0.3;
    std::vector<long> counts(3, 0);
    for (int i = 0; i < 20000; ++i) ++counts[static_cast<std::size_t>(rng.categorical(probs))];
    CHECK(std::fabs(counts[1] / 20000.0 - 0.5) < 0.02);
    CHECK(std::fabs(counts[0] / 20000.0 - 0.2) < 0.02);
}

TEST_CASE("checksums are content-sensitive") {
    Matrix m = Matrix::Zero(2, 2);
    std::uint64_t h1 = matrix_checksum(m);
    m(1, 1) = 1e-300;
    CHECK(matrix_checksum(m) != h1);
}

TEST_CASE("shape violations raise contract errors") {
    Tensor a = constant(Matrix::Zero(2, 3));
    CHECK_THROWS_AS((void)matmul(a, a), ContractError);
    CHECK_THROWS_AS((void)slice_rows(a, 1, 5), ContractError);
    CHECK_THROWS_AS(backward(a), ContractError);
}
