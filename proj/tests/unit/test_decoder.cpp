#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "stonet/checkpoint.hpp"
#include "stonet/decoder.hpp"
#include "stonet/errors.hpp"
#include "stonet/model.hpp"

using namespace stonet;
using stonet::testing::check_gradients;
using stonet::testing::max_rel_error;

namespace {

struct Fixture {
  PointSet points;
  NeighborGraph graph;
  EncoderState state;
  std::vector<double> history = {-0.2, -0.1, 0.0};
};

Fixture make_fixture(std::size_t d, std::size_t n = 8, std::uint64_t seed = 1) {
  std::mt19937_64 gen(seed);
  Fixture f;
  f.points = stonet::testing::random_point_set(DomainKind::kPlane, n, gen);
  f.graph = build_epsilon_graph(f.points, 0.45);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(3 * n * d);
  for (auto& x : v) x = u(gen);
  f.state.v_enc = Tensor({3 * n, d}, v);
  f.state.frames = 3;
  f.state.points = f.points;
  f.state.graph = f.graph;
  return f;
}

DecoderConfig small_decoder(std::size_t d = 3) {
  DecoderConfig c;
  c.d = d;
  c.branch_width = 4;
  c.xi_hidden = 3;
  c.trunk_hidden = 5;
  return c;
}

QueryBatch node_queries(const Fixture& f, std::initializer_list<double> times) {
  QueryBatch q;
  for (double t : times)
    for (std::size_t i = 0; i < f.points.size(); ++i)
      q.add(f.points.point(i), t, 0, query_neighbors(f.points, f.graph, f.points.point(i)));
  return q;
}

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("query neighborhoods are closed eps-balls") {
  PointSet pts(DomainKind::kPlane, {0, 0, 0.3, 0, 2, 0});
  auto g = build_epsilon_graph(pts, 0.5);
  CHECK(query_neighbors(pts, g, pts.point(0)) == std::vector<std::size_t>{0, 1});
  CHECK(query_neighbors(pts, g, pts.point(2)) == std::vector<std::size_t>{2});
  const double x[] = {0.2, 0.1};
  CHECK(query_neighbors(pts, g, x) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("trunk examples") {
  Rng rng(1);
  auto f = make_fixture(3);
  Decoder dec(small_decoder(), rng);
  auto q = node_queries(f, {0.5});
  std::vector<std::size_t> all(q.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  CHECK(vec(dec.trunk_eval(0, q, f.history, all)) == vec(dec.trunk_eval(0, q, f.history, all)));

  auto& g = dec.groups()[0];
  ParameterList trunk;
  g.trunk.collect(trunk, "trunk");
  auto saved = snapshot(trunk);
  zero_parameters(trunk);
  for (double v : vec(dec.trunk_eval(0, q, f.history, all))) CHECK(v == 0.0);
  assign_parameters(trunk, saved);

  DecoderConfig tc = small_decoder();
  tc.activation = Activation::kTanh;
  Rng rng2(2);
  Decoder smooth(tc, rng2);
  ParameterList eta;
  smooth.groups()[0].trunk.collect(eta, "trunk");
  auto checks = check_gradients([&] { return sum(smooth.trunk_eval(0, q, f.history, all)); }, eta);
  CHECK(max_rel_error(checks) < 1e-4);

  auto early = node_queries(f, {-0.5});
  CHECK_THROWS_AS(dec.trunk_eval(0, early, f.history, all), ContractError);
  DecoderConfig ic = small_decoder();
  ic.allow_interpolation = true;
  Rng rng3(3);
  Decoder interp(ic, rng3);
  CHECK_NOTHROW(interp.trunk_eval(0, early, f.history, all));
}

TEST_CASE("branch examples") {
  SUBCASE("zero xi and theta give zero features") {
    Rng rng(4);
    auto f = make_fixture(3);
    Decoder dec(small_decoder(), rng);
    auto& g = dec.groups()[0];
    zero_parameters({{"h", g.xi_head}, {"t", g.theta}});
    auto q = node_queries(f, {0.3});
    std::vector<std::size_t> all(q.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (double v : vec(dec.branch_eval(0, f.state, f.history, q, all))) CHECK(v == 0.0);
  }
  SUBCASE("single neighbor and timestamp with unit weights replicates v_enc") {
    DecoderConfig c = small_decoder(2);
    c.activation = Activation::kIdentity;
    Rng rng(5);
    Decoder dec(c, rng);
    Fixture f = make_fixture(2, 3);
    f.state.frames = 1;
    f.state.v_enc = Tensor({3, 2}, {1, 2, 3, 4, 5, 6});
    std::vector<double> hist = {0.0};
    auto& g = dec.groups()[0];
    const std::size_t H = c.xi_hidden, d = 2, r = 2, s = c.branch_width;
    zero_parameters({{"h", g.xi_head}, {"t", g.theta}});
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t k = 0; k < r; ++k) g.xi_head.mutable_data()[(H * d + k) * (s * r) + i * r + k] = 1.0;
    QueryBatch q;
    const double x[] = {0.9, 0.9};
    q.add(x, 0.5, 0, {1});
    const std::size_t only[] = {0};
    auto feats = vec(dec.branch_eval(0, f.state, hist, q, only));
    for (std::size_t i = 0; i < s; ++i) {
      CHECK(feats[i * r + 0] == doctest::Approx(3));
      CHECK(feats[i * r + 1] == doctest::Approx(4));
    }
  }
  SUBCASE("duplicating every neighbor leaves the mean unchanged") {
    Rng rng(6);
    auto f = make_fixture(3);
    Decoder dec(small_decoder(), rng);
    QueryBatch a, b;
    const double x[] = {0.4, 0.6};
    auto nbrs = ball_query(f.points, x, 0.6);
    REQUIRE(!nbrs.empty());
    auto doubled = nbrs;
    doubled.insert(doubled.end(), nbrs.begin(), nbrs.end());
    a.add(x, 0.4, 0, nbrs);
    b.add(x, 0.4, 0, doubled);
    const std::size_t only[] = {0};
    auto fa = vec(dec.branch_eval(0, f.state, f.history, a, only));
    auto fb = vec(dec.branch_eval(0, f.state, f.history, b, only));
    for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fa[i] == doctest::Approx(fb[i]).epsilon(1e-13));
  }
  SUBCASE("spatio-temporal normalization divides by the pair count") {
    DecoderConfig c = small_decoder();
    c.activation = Activation::kIdentity;
    Rng r1(7), r2(7);
    Decoder spatial(c, r1);
    c.norm = BranchNorm::kSpatioTemporal;
    Decoder st(c, r2);
    auto f = make_fixture(3);
    zero_parameters({{"t1", spatial.groups()[0].theta}, {"t2", st.groups()[0].theta}});
    auto q = node_queries(f, {0.2});
    const std::size_t only[] = {2};
    auto a = vec(spatial.branch_eval(0, f.state, f.history, q, only));
    auto b = vec(st.branch_eval(0, f.state, f.history, q, only));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i] / 3.0).epsilon(1e-13));
  }
}

TEST_CASE("decode examples") {
  SUBCASE("zero combination weights give zero output") {
    Rng rng(8);
    auto f = make_fixture(3);
    Decoder dec(small_decoder(), rng);
    zero_parameters({{"c", dec.groups()[0].c}});
    for (double v : vec(dec.decode(f.state, f.history, node_queries(f, {0.5})))) CHECK(v == 0.0);
  }
  SUBCASE("unit branch and trunk with one-hot c") {
    DecoderConfig c = small_decoder();
    c.activation = Activation::kIdentity;
    c.trunk_hidden = 0;
    Rng rng(9);
    Decoder dec(c, rng);
    auto& g = dec.groups()[0];
    zero_parameters({{"h", g.xi_head}, {"c", g.c}, {"w", g.trunk.layers()[0].weight()}});
    std::fill(g.theta.mutable_data().begin(), g.theta.mutable_data().end(), 1.0);
    std::fill(g.trunk.layers()[0].bias().mutable_data().begin(), g.trunk.layers()[0].bias().mutable_data().end(), 1.0);
    const std::size_t r = 3, i = 2, k = 1;
    g.c.mutable_data()[i * r + k] = 1.0;
    auto f = make_fixture(3);
    auto out = dec.decode(f.state, f.history, node_queries(f, {0.5}));
    for (std::size_t q = 0; q < out.dim(0); ++q)
      for (std::size_t j = 0; j < r; ++j) CHECK(out.at(q, j) == (j == k ? 1.0 : 0.0));
  }
  SUBCASE("query order permutes outputs") {
    Rng rng(10);
    auto f = make_fixture(3);
    Decoder dec(small_decoder(), rng);
    auto q = node_queries(f, {0.3, 0.9});
    QueryBatch rev;
    for (std::size_t i = q.size(); i-- > 0;)
      rev.add(std::span<const double>(q.coords.data() + 2 * i, 2), q.times[i], 0, q.neighbors[i]);
    auto a = dec.decode(f.state, f.history, q), b = dec.decode(f.state, f.history, rev);
    for (std::size_t i = 0; i < q.size(); ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(a.at(i, j) == b.at(q.size() - 1 - i, j));
  }
  SUBCASE("width checks") {
    DecoderConfig c = small_decoder();
    c.trunk_width = 5;
    Rng rng(11);
    CHECK_THROWS_AS(Decoder(c, rng), ParameterError);
    Rng rng2(12);
    Decoder dec(small_decoder(), rng2);
    auto f = make_fixture(4);
    CHECK_THROWS_AS(dec.decode(f.state, f.history, node_queries(f, {0.5})), ContractError);
    EncoderState empty;
    CHECK_THROWS_AS(dec.decode(empty, f.history, QueryBatch{}), ContractError);
  }
  SUBCASE("decoder groups own equal slices of the horizon") {
    DecoderConfig c = small_decoder();
    c.groups = 3;
    Rng rng(13);
    Decoder dec(c, rng);
    CHECK(dec.group_of(0.1) == 0);
    CHECK(dec.group_of(1.0 / 3.0) == 0);
    CHECK(dec.group_of(0.34) == 1);
    CHECK(dec.group_of(1.0) == 2);
    CHECK(dec.group_of(1.7) == 2);
    auto f = make_fixture(3);
    auto q = node_queries(f, {0.2, 0.5, 0.9});
    auto out = dec.decode(f.state, f.history, q);
    // zeroing group 1 only zeroes its queries
    zero_parameters({{"c", dec.groups()[1].c}});
    auto partial = dec.decode(f.state, f.history, q);
    const std::size_t n = f.points.size();
    for (std::size_t i = 0; i < q.size(); ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        if (i / n == 1) {
          CHECK(partial.at(i, j) == 0.0);
        } else {
          CHECK(partial.at(i, j) == out.at(i, j));
        }
      }
  }
}

TEST_CASE("decoder output is continuous in time") {
  DecoderConfig c = small_decoder();
  c.activation = Activation::kTanh;
  Rng rng(14);
  Decoder dec(c, rng);
  auto f = make_fixture(3);
  const double t = 0.4;
  auto base = dec.decode(f.state, f.history, node_queries(f, {t}));
  for (double delta : {1e-3, 1e-4, 1e-5}) {
    auto moved = dec.decode(f.state, f.history, node_queries(f, {t + delta}));
    double worst = 0;
    for (std::size_t i = 0; i < base.numel(); ++i) worst = std::max(worst, std::abs(moved.data()[i] - base.data()[i]));
    CHECK(worst / delta < 100.0);
  }
}

TEST_CASE("decoder parameters do not depend on the node count") {
  ModelConfig mc;
  mc.d = 4;
  StoNet a(mc, 3), b(mc, 3);
  CHECK(serialize_tensors(a.decoder_parameters()) == serialize_tensors(b.decoder_parameters()));
  auto f16 = make_fixture(4, 16), f64 = make_fixture(4, 64);
  // the same decoder serves both states
  CHECK(a.decoder().decode(f16.state, f16.history, node_queries(f16, {0.5})).dim(0) == 16);
  CHECK(a.decoder().decode(f64.state, f64.history, node_queries(f64, {0.5})).dim(0) == 64);
}

TEST_CASE("projection examples") {
  Rng rng(15);
  Linear p(2, 1, rng);
  std::copy_n(std::vector<double>{1, 1}.begin(), 2, p.weight().mutable_data().begin());
  CHECK(p.forward(Tensor({1, 2}, {2, 3})).item() == 5.0);
  zero_parameters({{"w", p.weight()}});
  CHECK(p.forward(Tensor({1, 2}, {2, 3})).item() == 0.0);
}

TEST_CASE("forecast examples") {
  ModelConfig mc;
  mc.d = 4;
  mc.d_a = 4;
  mc.a_hidden = 6;
  mc.branch_width = 4;
  mc.n_in = 3;
  mc.n_out = 2;
  StoNet model(mc, 5);
  std::mt19937_64 gen(2);
  PointSet pts = stonet::testing::random_point_set(DomainKind::kPlane, 10, gen);
  auto graph = build_epsilon_graph(pts, 0.4);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> vals(5 * 10);
  for (auto& v : vals) v = u(gen);
  auto series = make_series(pts, {0.0, 0.1, 0.2, 0.3, 0.4}, 1, vals);
  const double mean[] = {0.1}, sd[] = {0.5};
  model.set_normalization(mean, sd, 0.2);
  auto history = series.slice_times(0, 3);
  const std::vector<double> horizon = {0.3, 0.4};

  SUBCASE("matches the batched decode and projection") {
    auto fc = model.forecast(history, horizon, pts, graph);
    const std::size_t start[] = {0};
    auto batch = model.make_batch(series, start, graph);
    auto out = model.forward(batch, pts, graph);
    for (std::size_t i = 0; i < fc.values.size(); ++i)
      CHECK(fc.values[i] == doctest::Approx(model.denormalize(out.prediction.data()[i], 0)).epsilon(1e-12));
  }
  SUBCASE("repeated query points agree") {
    const double x[] = {0.5, 0.5};
    PointSet q = PointSet(DomainKind::kPlane, {0.5, 0.5, 0.2, 0.2});
    auto fc = model.forecast(history, horizon, q, graph);
    PointSet twice(DomainKind::kPlane, {0.5, 0.5, 0.2, 0.2});
    auto again = model.forecast(history, horizon, twice, graph);
    CHECK(fc.values == again.values);
    (void)x;
  }
  SUBCASE("zero combination weights predict the projector bias") {
    zero_parameters({{"c", model.decoder().groups()[0].c}});
    model.projector().bias().mutable_data()[0] = 0.3;
    auto fc = model.forecast(history, horizon, pts, graph);
    for (double v : fc.values) CHECK(v == doctest::Approx(model.denormalize(0.3, 0)));
  }
  SUBCASE("unseen query points give finite values") {
    PointSet unseen(DomainKind::kPlane, {0.33, 0.71, 0.9, 0.1});
    auto fc = model.forecast(history, horizon, unseen, graph);
    for (double v : fc.values) CHECK(std::isfinite(v));
  }
  SUBCASE("contracts") {
    const std::vector<double> stale = {0.1};
    CHECK_THROWS_AS(model.forecast(history, stale, pts, graph), ContractError);
    CHECK_THROWS_AS(model.forecast(series.slice_times(0, 0), horizon, pts, graph), ContractError);
  }
}
