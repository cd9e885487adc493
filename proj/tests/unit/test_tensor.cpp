#include <cmath>
#include <numbers>

#include "doctest.h"
#include "gradcheck.hpp"
#include "stonet/checkpoint.hpp"
#include "stonet/errors.hpp"
#include "stonet/optim.hpp"
#include "stonet/random.hpp"

using namespace stonet;
using stonet::testing::check_gradients;
using stonet::testing::max_rel_error;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = true, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor construction keeps shape and data consistent") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  Tensor alias = t;
  alias.mutable_data()[0] = 9;
  CHECK(t.at(0) == 9);
  Tensor copy = t.detach();
  copy.mutable_data()[0] = 1;
  CHECK(t.at(0) == 9);
}

TEST_CASE("matmul examples") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  CHECK(vec(matmul(eye, m)) == std::vector<double>{1, 2, 3, 4});

  Tensor a({2, 2}, {1, 0, 0, 0});
  Tensor b({2, 1}, {5, 7});
  CHECK(vec(matmul(a, b)) == std::vector<double>{5, 0});

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3] x [2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul backward of sum(A B)") {
  Tensor A({1, 2}, {1, 2}, true);
  Tensor B({2, 1}, {3, 4}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(matmul(A, B)));
  }
  CHECK(vec(Tensor({1, 2}, {A.grad()[0], A.grad()[1]})) == std::vector<double>{3, 4});
  CHECK(B.grad()[0] == doctest::Approx(1));
  CHECK(B.grad()[1] == doctest::Approx(2));
  auto checks = check_gradients([&] { return sum(matmul(A, B)); }, {{"A", A}, {"B", B}});
  CHECK(max_rel_error(checks) < 1e-5);
}

TEST_CASE("elementwise examples and broadcasting") {
  Tensor a({2}, {1, 2});
  CHECK(vec(add(a, Tensor({2}, {0, 0}))) == std::vector<double>{1, 2});
  CHECK(vec(mul(Tensor({2}, {2, 3}), Tensor({2}, {4, 5}))) == std::vector<double>{8, 15});
  CHECK(vec(sub(Tensor({2}, {2, 3}), Tensor({2}, {4, 5}))) == std::vector<double>{-2, -2});
  CHECK(vec(scale(a, 3)) == std::vector<double>{3, 6});

  Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row({3}, {10, 20, 30});
  CHECK(vec(add(m, row)) == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(vec(add(row, m)) == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK_THROWS_AS(add(m, Tensor::zeros({2})), DimensionError);
  CHECK_THROWS_AS(add(m, Tensor::zeros({3, 2})), DimensionError);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3, 4}), Tensor::zeros({3, 1})), DimensionError);

  Tensor x({1}, {3}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(mul(x, x)));
  }
  CHECK(x.grad()[0] == doctest::Approx(6));
}

TEST_CASE("activation examples") {
  CHECK(activate(Tensor::scalar(0), Activation::kRelu).item() == 0);
  CHECK(vec(activate(Tensor({2}, {-1, 2}), Activation::kRelu)) == std::vector<double>{0, 2});
  CHECK(activate(Tensor::scalar(0.3), Activation::kTanh).item() == doctest::Approx(std::tanh(0.3)));
  CHECK(activate(Tensor::scalar(0), Activation::kGelu).item() == 0);
  CHECK(parse_activation("gelu") == Activation::kGelu);
  CHECK_THROWS_AS(parse_activation("swish"), ParameterError);

  for (auto act : {Activation::kRelu, Activation::kTanh, Activation::kGelu, Activation::kIdentity}) {
    Tensor x({1}, {0.5}, true);
    auto checks = check_gradients([&] { return sum(activate(x, act)); }, {{"x", x}});
    CHECK(checks[0].rel_error < 1e-6);
  }
}

TEST_CASE("every primitive matches central differences on random inputs") {
  Rng rng(11);
  const double tol = 1e-4;
  auto check = [&](const char* what, const std::function<Tensor()>& f, const ParameterList& params) {
    INFO(what);
    CHECK(max_rel_error(check_gradients(f, params)) < tol);
  };
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), c = random_tensor({3, 4}, rng);
  Tensor row = random_tensor({4}, rng);
  Tensor w = random_tensor({3, 4}, rng, false);  // fixed weights so sums are not degenerate
  auto weighted = [&](const Tensor& t) { return sum(mul(t, w)); };

  check("matmul", [&] { return sum(matmul(a, b)); }, {{"a", a}, {"b", b}});
  check("add", [&] { return weighted(add(a, c)); }, {{"a", a}, {"c", c}});
  check("add broadcast", [&] { return weighted(add(a, row)); }, {{"a", a}, {"row", row}});
  check("sub broadcast", [&] { return weighted(sub(row, a)); }, {{"a", a}, {"row", row}});
  check("mul", [&] { return weighted(mul(a, c)); }, {{"a", a}, {"c", c}});
  check("mul broadcast", [&] { return weighted(mul(a, row)); }, {{"a", a}, {"row", row}});
  check("scale", [&] { return weighted(scale(a, -1.7)); }, {{"a", a}});
  check("tanh", [&] { return weighted(activate(a, Activation::kTanh)); }, {{"a", a}});
  check("gelu", [&] { return weighted(activate(a, Activation::kGelu)); }, {{"a", a}});
  check("relu", [&] { return weighted(activate(a, Activation::kRelu)); }, {{"a", a}});
  check("abs", [&] { return weighted(abs(a)); }, {{"a", a}});
  check("mean", [&] { return mean(mul(a, c)); }, {{"a", a}, {"c", c}});
  Tensor r31 = random_tensor({3, 1}, rng, false), r81 = random_tensor({8, 1}, rng, false);
  Tensor r44 = random_tensor({4, 4}, rng, false), r43 = random_tensor({4, 3}, rng, false);
  Tensor r38 = random_tensor({3, 8}, rng, false), r26 = random_tensor({2, 6}, rng, false);
  check("reshape", [&] { return sum(matmul(reshape(a, {4, 3}), r31)); }, {{"a", a}});
  check("sin_cos", [&] { return sum(mul(reshape(sin_cos_interleave(reshape(a, {6, 2})), {3, 8}), r38)); },
        {{"a", a}});
  check("concat_cols", [&] {
    const Tensor parts[] = {a, c};
    return sum(matmul(concat_cols(parts), r81));
  }, {{"a", a}, {"c", c}});
  const std::vector<std::size_t> idx = {2, 0, 2, 1};
  const std::vector<double> wts = {0.5, -1.0, 2.0, 1.5};
  check("gather_rows", [&] { return sum(mul(gather_rows(a, idx), r44)); }, {{"a", a}});
  Tensor src = random_tensor({4, 4}, rng);
  check("scatter_add_rows", [&] { return weighted(scatter_add_rows(src, idx, 3, wts)); }, {{"src", src}});
  const std::vector<std::size_t> rep = {0, 2};
  Tensor rows = random_tensor({2, 4}, rng);
  check("replace_rows", [&] { return weighted(replace_rows(a, rep, rows)); }, {{"a", a}, {"rows", rows}});
  Tensor mats = random_tensor({4, 9}, rng), vecs = random_tensor({4, 3}, rng);
  check("row_matvec", [&] { return sum(mul(row_matvec(mats, vecs), r43)); }, {{"mats", mats}, {"vecs", vecs}});
  Tensor ea = random_tensor({5, 2}, rng), eb = random_tensor({3, 3}, rng);
  const std::vector<std::size_t> srows = {0, 1, 2, 1, 0}, seg = {0, 0, 1, 1, 1};
  const std::vector<double> sw = {0.5, 1.0, -0.3, 0.7, 1.1};
  check("segment_outer_sum", [&] { return sum(mul(segment_outer_sum(ea, eb, srows, seg, sw, 2), r26)); },
        {{"ea", ea}, {"eb", eb}});
}

TEST_CASE("sin_cos_interleave layout and bounds") {
  Tensor ang({1, 2}, {0.0, std::numbers::pi / 2});
  auto out = vec(sin_cos_interleave(ang));
  CHECK(out[0] == doctest::Approx(0));
  CHECK(out[1] == doctest::Approx(1));
  CHECK(out[2] == doctest::Approx(1));
  CHECK(out[3] == doctest::Approx(0).epsilon(1e-12));
}

TEST_CASE("segment_outer_sum equals a materialized outer-product oracle") {
  Rng rng(7);
  Tensor a = random_tensor({6, 3}, rng, false), b = random_tensor({4, 2}, rng, false);
  const std::vector<std::size_t> rows = {3, 0, 1, 1, 2, 3}, seg = {1, 0, 1, 2, 2, 0};
  const std::vector<double> w = {1, 2, 3, 4, 5, 6};
  Tensor out = segment_outer_sum(a, b, rows, seg, w, 3);
  std::vector<double> ref(3 * 6, 0.0);
  for (std::size_t e = 0; e < 6; ++e)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) ref[seg[e] * 6 + i * 2 + j] += w[e] * a.at(e, i) * b.at(rows[e], j);
  for (std::size_t k = 0; k < ref.size(); ++k) CHECK(out.data()[k] == doctest::Approx(ref[k]).epsilon(1e-14));
}

TEST_CASE("backward contracts") {
  SUBCASE("constant loss leaves gradients absent") {
    Tensor p({2}, {1, 2}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(Tensor({2}, {3, 4}));
    backward(loss);
    CHECK_FALSE(p.has_grad());
  }
  SUBCASE("sum(W x) gives the outer-product structure") {
    Rng rng(3);
    Tensor W = random_tensor({2, 3}, rng);
    Tensor x = random_tensor({3, 1}, rng, false);
    Tape tape;
    {
      TapeScope scope(tape);
      backward(sum(matmul(W, x)));
    }
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(W.grad()[i * 3 + j] == doctest::Approx(x.at(j)));
    W.clear_grad();
    CHECK(max_rel_error(check_gradients([&] { return sum(matmul(W, x)); }, {{"W", W}})) < 1e-5);
  }
  SUBCASE("second backward on a consumed tape throws") {
    Tensor p({1}, {2}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(mul(p, p));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), ContractError);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tensor p({2}, {1, 2}, true);
    Tape tape;
    TapeScope scope(tape);
    CHECK_THROWS_AS(backward(scale(p, 2)), ContractError);
  }
  SUBCASE("no tape records outside a scope") {
    Tensor p({2}, {1, 2}, true);
    Tensor y = mul(p, p);
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("gradient accumulation is additive") {
  Rng rng(5);
  Tensor a = random_tensor({3, 3}, rng);
  auto f = [&] { return sum(activate(a, Activation::kTanh)); };
  auto g = [&] { return sum(mul(a, a)); };
  auto grad_of = [&](const std::function<Tensor()>& fn) {
    a.clear_grad();
    Tape tape;
    TapeScope scope(tape);
    backward(fn());
    return std::vector<double>(a.grad().begin(), a.grad().end());
  };
  auto gf = grad_of(f), gg = grad_of(g), gsum = grad_of([&] { return add(f(), g()); });
  for (std::size_t i = 0; i < gsum.size(); ++i) CHECK(gsum[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-14));
}

TEST_CASE("forward is deterministic") {
  Rng r1(9), r2(9);
  Mlp m1({3, 5, 2}, Activation::kRelu, Activation::kIdentity, r1);
  Mlp m2({3, 5, 2}, Activation::kRelu, Activation::kIdentity, r2);
  Tensor x({4, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 2, 3});
  CHECK(vec(m1.forward(x)) == vec(m2.forward(x)));
  CHECK(vec(m1.forward(x)) == vec(m1.forward(x)));
}

TEST_CASE("linear initialization bounds") {
  Rng rng(1);
  Linear lin(16, 8, rng);
  for (double w : lin.weight().data()) CHECK(std::abs(w) <= 0.25);
  for (double b : lin.bias().data()) CHECK(b == 0.0);
}

TEST_CASE("adam examples") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p({2}, {1, -1}, true);
    p.zero_grad();
    AdamState st;
    adam_step({{"p", p}}, st);
    CHECK(vec(p) == std::vector<double>{1, -1});
    CHECK(st.step == 1);
  }
  SUBCASE("first bias-corrected step moves by lr") {
    Tensor p = Tensor::scalar(0.5, true);
    p.zero_grad();
    p.mutable_grad()[0] = 1.0;
    AdamState st;
    st.lr = 0.1;
    adam_step({{"p", p}}, st);
    CHECK(p.item() == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(p.grad()[0] == 0.0);
  }
  SUBCASE("minimizes a quadratic") {
    Tensor w = Tensor::scalar(0.0, true);
    AdamState st;
    st.lr = 0.1;
    for (int i = 0; i < 100; ++i) {
      Tape tape;
      TapeScope scope(tape);
      Tensor diff = sub(w, Tensor::scalar(3.0));
      backward(sum(mul(diff, diff)));
      adam_step({{"w", w}}, st);
    }
    CHECK(std::abs(w.item() - 3.0) < 0.1);
    CHECK(st.step == 100);
  }
  SUBCASE("missing gradient names the parameter") {
    Tensor p({1}, {0}, true);
    AdamState st;
    try {
      adam_step({{"decoder.theta", p}}, st);
      FAIL("expected ContractError");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("decoder.theta") != std::string::npos);
    }
  }
}

TEST_CASE("checkpoint round trip and layout") {
  Rng rng(2);
  Tensor a = random_tensor({2, 3}, rng), s = Tensor::scalar(4.5);
  ParameterList params = {{"layer.weight", a}, {"scale", s}};
  const std::string bytes = serialize_tensors(params);
  CHECK(bytes.substr(0, 8) == "STONETCK");
  CHECK(static_cast<unsigned char>(bytes[8]) == kCheckpointVersion);
  CHECK(bytes.size() == 13 + (4 + 12 + 4 + 16 + 48) + (4 + 5 + 4 + 8));
  auto back = deserialize_tensors(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "layer.weight");
  CHECK(back[0].tensor.shape() == Shape{2, 3});
  CHECK(vec(back[0].tensor) == vec(a));
  CHECK(back[1].tensor.item() == 4.5);

  Tensor target = Tensor::zeros({2, 3});
  assign_parameters({{"layer.weight", target}}, back);
  CHECK(vec(target) == vec(a));
  CHECK_THROWS_AS(assign_parameters({{"missing", target}}, back), DataError);
  CHECK_THROWS_AS(assign_parameters({{"scale", target}}, back), DataError);
  CHECK_THROWS_AS(deserialize_tensors("STONETCX"), DataError);
  CHECK_THROWS_AS(deserialize_tensors(bytes.substr(0, bytes.size() - 1)), DataError);
}

TEST_CASE("derived seeds are stable and distinct") {
  CHECK(derive_seed(1, "data") == derive_seed(1, "data"));
  CHECK(derive_seed(1, "data") != derive_seed(1, "init"));
  CHECK(derive_seed(1, "data") != derive_seed(2, "data"));
}
