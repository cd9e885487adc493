#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "stonet/checkpoint.hpp"
#include "stonet/errors.hpp"
#include "stonet/train.hpp"

using namespace stonet;

namespace {

Linear identity_projector(std::size_t d = 1) {
  Rng rng(0);
  Linear p(d, 1, rng);
  auto w = p.weight().mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = i == 0 ? 1.0 : 0.0;
  return p;
}

Tensor col(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n, 1}, std::move(v));
}

LossConfig loss_cfg(double alpha, std::size_t n_in, std::size_t n_out) {
  LossConfig c;
  c.alpha = alpha;
  c.n_in = n_in;
  c.n_out = n_out;
  return c;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<double> v(n);
  for (auto& x : v) x = u(gen);
  return v;
}

PointSet grid_points(std::size_t side) {
  std::vector<double> xy;
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j) {
      xy.push_back((static_cast<double>(i) + 0.5) / static_cast<double>(side));
      xy.push_back((static_cast<double>(j) + 0.5) / static_cast<double>(side));
    }
  return PointSet(DomainKind::kPlane, xy);
}

ModelConfig tiny_model(std::size_t n_in, std::size_t n_out) {
  ModelConfig mc;
  mc.d = 4;
  mc.d_t = 2;
  mc.d_a = 8;
  mc.a_hidden = 8;
  mc.branch_width = 4;
  mc.xi_hidden = 4;
  mc.trunk_hidden = 8;
  mc.n_in = n_in;
  mc.n_out = n_out;
  return mc;
}

ObservationSeries constant_series(const PointSet& pts, std::size_t frames, double value) {
  std::vector<double> times(frames);
  for (std::size_t t = 0; t < frames; ++t) times[t] = 0.01 * static_cast<double>(t);
  return make_series(pts, times, 1, std::vector<double>(frames * pts.size(), value));
}

}  // namespace

TEST_CASE("loss: perfect fit is zero") {
  const auto p = identity_projector();
  const Tensor v = col({1, -2, 3, 0.5});
  const std::vector<std::uint8_t> mask = {1, 1};
  const auto l = composite_loss(v, v, v, v, mask, p, loss_cfg(0.5, 2, 2), 2);
  CHECK(l.total.item() == 0.0);
}

TEST_CASE("loss: hand-evaluated example") {
  const auto p = identity_projector();
  const std::vector<std::uint8_t> mask = {1};
  const auto l = composite_loss(col({2}), col({1}), col({0}), col({0}), mask, p, loss_cfg(0.5, 1, 1), 1);
  CHECK(l.total.item() == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(l.reconstruction == doctest::Approx(2.0));
  CHECK(l.prediction == doctest::Approx(1.0));
}

TEST_CASE("loss: alpha zero is the prediction term alone") {
  std::mt19937_64 gen(3);
  const auto p = identity_projector();
  const Tensor ve = col(random_vec(6, gen)), vd = col(random_vec(4, gen));
  const Tensor ti = col(random_vec(6, gen)), to = col(random_vec(4, gen));
  const std::vector<std::uint8_t> mask = {1, 1};
  const auto l = composite_loss(ve, vd, ti, to, mask, p, loss_cfg(0.0, 3, 2), 2);
  double mae = 0.0;
  for (std::size_t i = 0; i < 4; ++i) mae += std::fabs(vd.at(i) - to.at(i));
  CHECK(l.total.item() == doctest::Approx(mae / 4).epsilon(1e-14));
}

TEST_CASE("loss: linear in alpha") {
  std::mt19937_64 gen(4);
  Rng rng(2);
  Linear p(3, 2, rng);
  const std::size_t n = 5, n_in = 2, n_out = 3, windows = 2;
  const Tensor ve({windows * n_in * n, 3}, random_vec(windows * n_in * n * 3, gen));
  const Tensor vd({windows * n_out * n, 3}, random_vec(windows * n_out * n * 3, gen));
  const Tensor ti({windows * n_in * n, 2}, random_vec(windows * n_in * n * 2, gen));
  const Tensor to({windows * n_out * n, 2}, random_vec(windows * n_out * n * 2, gen));
  const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 1, 0};
  const double l0 = composite_loss(ve, vd, ti, to, mask, p, loss_cfg(0.0, n_in, n_out), n).total.item();
  const auto l1 = composite_loss(ve, vd, ti, to, mask, p, loss_cfg(1.0, n_in, n_out), n);
  const double rec_only = l1.total.item() - l1.prediction;
  for (double alpha : {0.0, 0.1, 0.5, 2.0, 7.25}) {
    const double la = composite_loss(ve, vd, ti, to, mask, p, loss_cfg(alpha, n_in, n_out), n).total.item();
    CHECK(std::fabs(l0 + alpha * rec_only - la) <= 1e-12);
  }
}

TEST_CASE("loss: gradients reach both terms") {
  Rng rng(5);
  Linear p(1, 1, rng);
  Tape tape;
  TapeScope scope(tape);
  const Tensor ve({2, 1}, {1.0, 2.0}, true), vd({2, 1}, {0.5, -1.0}, true);
  const std::vector<std::uint8_t> mask = {1};
  const auto l = composite_loss(ve, vd, col({0, 0}), col({3, 3}), mask, p, loss_cfg(0.5, 1, 1), 2);
  tape.backward(l.total);
  REQUIRE(ve.has_grad());
  REQUIRE(vd.has_grad());
  CHECK(std::fabs(ve.grad()[0]) > 0.0);
  CHECK(std::fabs(vd.grad()[1]) > 0.0);
}

TEST_CASE("loss: masking") {
  const auto p = identity_projector();
  const std::size_t n = 2;
  const Tensor ve = col({0, 0}), ti = col({0, 0});
  const Tensor vd = col({1, 1, 4, 4, 100, 100});
  const Tensor to = col({0, 0, 0, 0, 0, 0});

  SUBCASE("masked frames contribute nothing and the normalizer counts present frames") {
    const std::vector<std::uint8_t> mask = {1, 1, 0};
    const auto l = composite_loss(ve, vd, ti, to, mask, p, loss_cfg(0.5, 1, 3), n);
    CHECK(l.prediction == doctest::Approx((1 + 1 + 4 + 4) / 4.0));
  }
  SUBCASE("per-term contribution does not grow under masking") {
    const std::vector<std::uint8_t> all = {1, 1, 1}, some = {1, 0, 1};
    const double full = composite_loss(ve, vd, ti, to, all, p, loss_cfg(0, 1, 3), n).prediction;
    const double part = composite_loss(ve, vd, ti, to, some, p, loss_cfg(0, 1, 3), n).prediction;
    // first frame: 2 entries of |1| over 3*2 present entries vs 2*2
    CHECK(2.0 / 6.0 <= full);
    CHECK(2.0 / 4.0 <= part);
    CHECK(part == doctest::Approx((2 + 200) / 4.0));
  }
  SUBCASE("all masked is an error") {
    const std::vector<std::uint8_t> none = {0, 0, 0};
    CHECK_THROWS_AS(composite_loss(ve, vd, ti, to, none, p, loss_cfg(0.5, 1, 3), n), DataError);
  }
  SUBCASE("negative alpha") {
    const std::vector<std::uint8_t> all = {1, 1, 1};
    CHECK_THROWS_AS(composite_loss(ve, vd, ti, to, all, p, loss_cfg(-1, 1, 3), n), ParameterError);
  }
  SUBCASE("shape mismatch") {
    const std::vector<std::uint8_t> two = {1, 1};
    CHECK_THROWS_AS(composite_loss(ve, vd, ti, to, two, p, loss_cfg(0.5, 1, 3), n), DimensionError);
  }
}

TEST_CASE("metrics: examples") {
  SUBCASE("exact prediction") {
    const std::vector<double> v = {1, -2, 3};
    const auto m = compute_metrics(v, v);
    CHECK(m.mae == 0.0);
    CHECK(m.rmse == 0.0);
    CHECK(m.mape == 0.0);
  }
  SUBCASE("single entry") {
    const std::vector<double> pred = {3}, truth = {2};
    const auto m = compute_metrics(pred, truth);
    CHECK(m.mae == 1.0);
    CHECK(m.rmse == 1.0);
    CHECK(m.mape == 0.5);
  }
  SUBCASE("zero truth is excluded from mape") {
    const std::vector<double> pred = {1, 2}, truth = {0, 2};
    const auto m = compute_metrics(pred, truth);
    CHECK(m.mape == 0.0);
    CHECK(m.mape_excluded == 1);
    CHECK(m.mae == 0.5);
  }
  SUBCASE("misaligned") {
    const std::vector<double> a = {1, 2}, b = {1};
    CHECK_THROWS_AS(compute_metrics(a, b), DimensionError);
  }
}

TEST_CASE("metrics: agree with the naive oracle and rmse >= mae") {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<std::size_t> len(1, 200);
  std::bernoulli_distribution zero(0.1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = len(gen);
    auto pred = random_vec(n, gen), truth = random_vec(n, gen);
    for (auto& t : truth)
      if (zero(gen)) t = 0.0;
    const auto m = compute_metrics(pred, truth);
    const auto o = stonet::testing::oracle_metrics(pred, truth);
    CHECK(std::fabs(m.mae - o.mae) <= 1e-12);
    CHECK(std::fabs(m.rmse - o.rmse) <= 1e-12);
    CHECK(std::fabs(m.mape - o.mape) <= 1e-12);
    CHECK(m.mape_excluded == o.excluded);
    CHECK(m.rmse >= m.mae - 1e-15);
    CHECK(std::isfinite(m.mape));
  }
}

TEST_CASE("metrics over series: per horizon") {
  const PointSet pts(DomainKind::kPlane, {0.1, 0.1, 0.9, 0.9});
  const auto truth = make_series(pts, {1, 2}, 1, {1, 1, 2, 2});
  const auto pred = make_series(pts, {1, 2}, 1, {1, 2, 4, 2});
  const auto r = metrics(pred, truth);
  REQUIRE(r.per_horizon.size() == 2);
  CHECK(r.per_horizon[0].mae == 0.5);
  CHECK(r.per_horizon[1].mae == 1.0);
  CHECK(r.aggregate.mae == 0.75);
  CHECK(r.aggregate.count == 4);
}

TEST_CASE("persistence baseline") {
  const PointSet pts(DomainKind::kPlane, {0.2, 0.3, 0.7, 0.1, 0.5, 0.5});
  SUBCASE("constant series") {
    const auto hist = constant_series(pts, 4, 2.5);
    const std::vector<double> ht = {0.04, 0.05, 0.06};
    const auto future = constant_series(pts, 3, 2.5);
    const auto r = metrics(persistence_baseline(hist, ht), make_series(pts, ht, 1, future.values));
    CHECK(r.aggregate.mae == 0.0);
  }
  SUBCASE("slope one gives (k+1)/2") {
    for (std::size_t k : {1u, 3u, 12u}) {
      std::vector<double> hv, tv, ht;
      for (std::size_t t = 0; t < 5; ++t) hv.insert(hv.end(), 3, static_cast<double>(t));
      for (std::size_t j = 1; j <= k; ++j) {
        ht.push_back(4.0 + static_cast<double>(j));
        tv.insert(tv.end(), 3, 4.0 + static_cast<double>(j));
      }
      const auto hist = make_series(pts, {0, 1, 2, 3, 4}, 1, hv);
      const auto p1 = persistence_baseline(hist, ht);
      const auto p2 = persistence_baseline(hist, ht);
      CHECK(p1.values == p2.values);
      const auto r = metrics(p1, make_series(pts, ht, 1, tv));
      CHECK(r.aggregate.mae == doctest::Approx((static_cast<double>(k) + 1) / 2).epsilon(1e-14));
    }
  }
  SUBCASE("skips absent trailing frames") {
    auto hist = make_series(pts, {0, 1, 2}, 1, {1, 1, 1, 2, 2, 2, 9, 9, 9});
    hist.mask[2] = 0;
    const std::vector<double> ht = {3};
    const auto p = persistence_baseline(hist, ht);
    CHECK(p.values == std::vector<double>{2, 2, 2});
  }
}

TEST_CASE("time split and windows") {
  const auto s = split_time(120);
  CHECK(s.train_end == 84);
  CHECK(s.val_end == 102);
  CHECK(s.total == 120);
  CHECK_THROWS_AS(split_time(10, 0.9, 0.1), ParameterError);

  CHECK(window_starts(0, 10, 4) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  CHECK(window_starts(2, 10, 4, 3) == std::vector<std::size_t>{2, 5});
  CHECK(window_starts(0, 3, 4).empty());
  CHECK_THROWS_AS(window_starts(0, 10, 4, 0), ParameterError);
}

TEST_CASE("label masks") {
  const std::vector<std::size_t> starts = {0, 5, 9, 20};
  const auto none = label_masks(starts, 12, 0.0, 1);
  CHECK(none == std::vector<std::uint8_t>(48, 1));

  const auto m = label_masks(starts, 12, 2.0 / 12.0, 7);
  REQUIRE(m.size() == 48);
  bool differ = false;
  for (std::size_t w = 0; w < starts.size(); ++w) {
    std::size_t present = 0;
    for (std::size_t k = 0; k < 12; ++k) present += m[w * 12 + k];
    CHECK(present == 10);
    if (w > 0 && !std::equal(m.begin() + static_cast<long>(w * 12), m.begin() + static_cast<long>(w * 12 + 12),
                             m.begin()))
      differ = true;
  }
  CHECK(differ);
  CHECK(label_masks(starts, 12, 2.0 / 12.0, 7) == m);
}

TEST_CASE("normalization buffers") {
  const auto pts = grid_points(2);
  std::vector<double> v;
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t s = 0; s < 4; ++s) v.push_back(static_cast<double>(t < 5 ? s : 100));
  std::vector<double> times(10);
  for (std::size_t t = 0; t < 10; ++t) times[t] = 0.5 * static_cast<double>(t);
  const auto series = make_series(pts, times, 1, v);
  StoNet model(tiny_model(2, 3), 1);
  fit_normalization(model, series, 5);
  CHECK(model.normalize(1.5, 0) == doctest::Approx(0.0));
  CHECK(model.denormalize(1.0, 0) == doctest::Approx(1.5 + std::sqrt(1.25)));
  CHECK(model.time_scale() == doctest::Approx(1.5));

  fit_normalization(model, constant_series(pts, 6, 3.0), 6);
  CHECK(model.denormalize(0.0, 0) == 3.0);
  CHECK(model.denormalize(1.0, 0) == 4.0);
}

TEST_CASE("train: zero epochs leaves parameters unchanged") {
  const auto pts = grid_points(4);
  const auto graph = build_epsilon_graph(pts, 0.3);
  StoNet model(tiny_model(2, 2), 3);
  const auto before = snapshot(model.parameters());
  TrainConfig tc;
  tc.epochs = 0;
  const auto r = train(model, constant_series(pts, 30, 1.0), graph, tc);
  CHECK(r.log.empty());
  CHECK(r.best_epoch == 0);
  const auto after = model.parameters();
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto a = before[i].tensor.data(), b = after[i].tensor.data();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
}

TEST_CASE("train: constant field is learned") {
  const auto pts = grid_points(4);
  const auto graph = build_epsilon_graph(pts, 0.3);
  const auto series = constant_series(pts, 40, 0.75);
  StoNet model(tiny_model(3, 3), 5);
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch = 4;
  tc.lr = 1e-2;
  tc.patience = 0;
  tc.windows_per_epoch = 4;
  const auto r = train(model, series, graph, tc);
  const auto split = split_time(series.n_times());
  const auto test = window_starts(split.val_end, series.n_times(), 6);
  REQUIRE_FALSE(test.empty());
  const auto rep = evaluate_windows(model, series, graph, test, 8);
  INFO("best epoch " << r.best_epoch);
  CHECK(rep.aggregate.mae < 1e-3);
}

TEST_CASE("train: loss trends down on a heat dataset") {
  PdeSpec spec;
  spec.nx = spec.ny = 16;
  spec.source.amplitude = 20;
  InitialCondition init;
  const auto movie = simulate(spec, initial_field(spec, init, 1), 150 * 5, 5);
  const auto pts = random_points(spec, DomainKind::kPlane, 16, 2);
  const auto series = sample_nodes(movie, spec, pts);
  const auto graph = build_epsilon_graph(pts, default_epsilon(pts));
  StoNet model(tiny_model(4, 4), 1);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch = 4;
  tc.lr = 3e-3;
  tc.patience = 0;
  tc.windows_per_epoch = 16;
  std::vector<double> losses;
  train(model, series, graph, tc, [&](const EpochRecord& e) { losses.push_back(e.train_loss); });
  REQUIRE(losses.size() == 20);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    first += losses[i];
    last += losses[15 + i];
  }
  CHECK(last <= first);
}

TEST_CASE("train: divergence restores finite parameters") {
  const auto pts = grid_points(3);
  const auto graph = build_epsilon_graph(pts, 0.4);
  StoNet model(tiny_model(2, 2), 9);
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch = 2;
  tc.lr = 1e300;
  std::vector<double> v;
  std::mt19937_64 gen(1);
  const auto series = make_series(pts, [] {
    std::vector<double> t(30);
    for (std::size_t i = 0; i < 30; ++i) t[i] = static_cast<double>(i);
    return t;
  }(), 1, random_vec(30 * 9, gen));
  CHECK_THROWS_AS(train(model, series, graph, tc), DivergenceError);
  for (const auto& p : model.parameters())
    for (double x : p.tensor.data()) REQUIRE(std::isfinite(x));
}

TEST_CASE("train: contracts") {
  const auto pts = grid_points(3);
  const auto graph = build_epsilon_graph(pts, 0.4);
  StoNet model(tiny_model(4, 4), 1);
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train(model, constant_series(pts, 10, 1.0), graph, tc), DataError);
  tc.batch = 0;
  CHECK_THROWS_AS(train(model, constant_series(pts, 60, 1.0), graph, tc), ParameterError);
}

TEST_CASE("epoch record format") {
  EpochRecord r;
  r.epoch = 3;
  r.train_loss = 0.5;
  r.val_mae = 0.25;
  r.val_rmse = 0.3;
  r.lr = 1e-3;
  r.wall_ms = 12.34;
  CHECK(format_epoch(r) == "3,0.5,0.25,0.3,0.001,12.3");
}

TEST_CASE("train: node subsampling") {
  const auto pts = grid_points(4);
  const auto graph = build_epsilon_graph(pts, 0.3);
  const auto series = constant_series(pts, 30, 1.0);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch = 2;
  tc.windows_per_epoch = 4;
  tc.node_fraction = 0.5;
  StoNet a(tiny_model(2, 2), 4), b(tiny_model(2, 2), 4);
  const auto ra = train(a, series, graph, tc);
  const auto rb = train(b, series, graph, tc);
  REQUIRE(ra.log.size() == 2);
  CHECK(ra.log.back().train_loss == rb.log.back().train_loss);
  CHECK(std::isfinite(ra.log.back().val_mae));
  tc.node_fraction = 0.0;
  CHECK_THROWS_AS(train(a, series, graph, tc), ParameterError);
  tc.node_fraction = 1.5;
  CHECK_THROWS_AS(train(a, series, graph, tc), ParameterError);
}
