#include <doctest.h>

#include "amh/datagen.hpp"
#include "amh/evalkit.hpp"
#include "amh/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

using namespace amh;

namespace {

Tensor random_mask(Index h, Index w, double density, Rng& rng) {
  std::bernoulli_distribution b(density);
  Tensor t(1, h, w);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = b(rng);
  return t;
}

// Predictions quantised to `levels` (or zero), loosely correlated with gt.
Tensor leveled_prediction(const Tensor& gt, const std::vector<double>& levels, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, levels.size() - 1);
  std::bernoulli_distribution zero(0.4), bump(0.5);
  Tensor p(gt.shape());
  for (Index i = 0; i < p.size(); ++i) {
    if (zero(rng) && gt.values()[i] == 0) continue;
    std::size_t k = pick(rng);
    if (gt.values()[i] != 0 && bump(rng)) k = std::max(k, pick(rng));
    p.values()[i] = levels[k];
  }
  return p;
}

}  // namespace

TEST_CASE("hand-enumerated micro dataset") {
  // tolerance 0: only exact pixel hits count.
  // image A: gt at g1..g4 (row 0); predictions g1 .9, g2 .6, g3 .3, g4 0, three off-gt pixels at .3
  Tensor gtA(1, 4, 4), pA(1, 4, 4);
  for (Index x = 0; x < 4; ++x) gtA(0, 0, x) = 1;
  pA(0, 0, 0) = 0.9;
  pA(0, 0, 1) = 0.6;
  pA(0, 0, 2) = 0.3;
  pA(0, 2, 0) = pA(0, 2, 2) = pA(0, 3, 3) = 0.3;
  // image B: gt at h1, h2; predictions m1 .9 (off-gt), h1 .6, h2 .3, m2 .3 (off-gt)
  Tensor gtB(1, 4, 4), pB(1, 4, 4);
  gtB(0, 1, 1) = gtB(0, 1, 2) = 1;
  pB(0, 3, 0) = 0.9;
  pB(0, 1, 1) = 0.6;
  pB(0, 1, 2) = 0.3;
  pB(0, 2, 3) = 0.3;

  // thresholds in (0, .3]:  A P 3/6 R 3/4 F 3/5;   B P 2/4 R 2/2 F 2/3
  // thresholds in (.3, .6]: A P 2/2 R 2/4 F 2/3;   B P 1/2 R 1/2 F 1/2
  // thresholds in (.6, .9]: A P 1/1 R 1/4 F 2/5;   B P 0/1 R 0   F 0
  // above .9:               A P 1   R 0   F 0;     B P 1   R 0   F 0
  const EvalResult r = evaluate({pA, pB}, {gtA, gtB}, 0.0);
  CHECK(r.ods == (3.0 / 5 + 2.0 / 3) / 2);
  CHECK(r.ods_threshold == 0.01);
  CHECK(r.ois == 2.0 / 3);
  // curve (R, P): (7/8, 1/2) (1/2, 3/4) (1/8, 1/2) (0, 1); envelope 1, 3/4, 3/4, 1/2
  // area = (1 + 3/4)/2 * 1/8 + 3/4 * 3/8 + (3/4 + 1/2)/2 * 3/8
  CHECK(r.ap == 0.625);
  REQUIRE(r.curve.size() == 99);
  CHECK(r.curve[0].precision == 0.5);
  CHECK(r.curve[0].recall == 0.875);
  CHECK(r.curve[50].precision == 0.75);
  CHECK(r.curve[50].recall == 0.5);
}

TEST_CASE("perfect predictor scores 1") {
  Rng rng(1);
  std::vector<Tensor> gts;
  for (int i = 0; i < 5; ++i) gts.push_back(random_mask(12, 9, 0.1, rng));
  gts[2].values().setZero();
  const EvalResult r = evaluate(gts, gts);
  CHECK(r.ods == 1.0);
  CHECK(r.ois == 1.0);
  CHECK(r.ap == 1.0);
}

TEST_CASE("property: OIS >= ODS on fuzzed inputs") {
  Rng rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<Tensor> preds, gts;
    const int n = 1 + trial % 5;
    for (int i = 0; i < n; ++i) {
      gts.push_back(random_mask(10, 10, 0.15, rng));
      preds.push_back(random_tensor({1, 10, 10}, rng, 0.0, 1.0));
    }
    const EvalResult r = evaluate(preds, gts, 0.02 * (trial % 3));
    CHECK(r.ois >= r.ods);
    for (const auto& c : r.curve) {
      CHECK(c.precision >= 0);
      CHECK(c.precision <= 1);
      CHECK(c.recall >= 0);
      CHECK(c.recall <= 1);
    }
    CHECK(r.ap >= 0);
    CHECK(r.ap <= 1);
  }
}

TEST_CASE("property: monotone rescaling leaves ODS and OIS unchanged") {
  // levels 0.1 apart stay more than one threshold step apart under every g below, so each level
  // set is cut by the same thresholds before and after rescaling
  const std::vector<double> levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  Rng rng(3);
  std::uniform_real_distribution<double> gamma_dist(0.5, 2.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Tensor> preds, gts, warped;
    const double gamma = gamma_dist(rng);
    for (int i = 0; i < 4; ++i) {
      gts.push_back(random_mask(8, 8, 0.2, rng));
      preds.push_back(leveled_prediction(gts.back(), levels, rng));
      Tensor w = preds.back();
      for (Index k = 0; k < w.size(); ++k) {
        const double x = w.values()[k];
        if (x > 0) w.values()[k] = 0.02 + 0.96 * std::pow(x, gamma);
      }
      warped.push_back(w);
    }
    const EvalResult a = evaluate(preds, gts, 0.0), b = evaluate(warped, gts, 0.0);
    CHECK(a.ods == b.ods);
    CHECK(a.ois == b.ois);
  }
}

TEST_CASE("property: evaluation is invariant to image order") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> preds, gts;
    for (int i = 0; i < 6; ++i) {
      gts.push_back(random_mask(9, 11, 0.1, rng));
      preds.push_back(random_tensor({1, 9, 11}, rng, 0.0, 1.0));
    }
    const EvalResult a = evaluate(preds, gts, 0.01);
    std::vector<std::size_t> order{0, 1, 2, 3, 4, 5};
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Tensor> p2, g2;
    for (auto i : order) {
      p2.push_back(preds[i]);
      g2.push_back(gts[i]);
    }
    const EvalResult b = evaluate(p2, g2, 0.01);
    CHECK(a.ods == b.ods);
    CHECK(a.ois == b.ois);
    CHECK(a.ap == b.ap);
  }
}

TEST_CASE("thresholds are strictly increasing inside (0,1)") {
  const auto t = thresholds(99);
  REQUIRE(t.size() == 99);
  CHECK(t.front() == 0.01);
  CHECK(t.back() == 0.99);
  for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] > t[i - 1]);
}

TEST_CASE("correspondence") {
  Rng rng(5);
  const Tensor gt = random_mask(20, 20, 0.1, rng);
  const MatchCounts same = correspond(gt, gt, 0.0075);
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);

  const MatchCounts empty = correspond(Tensor(1, 20, 20), gt, 0.0075);
  CHECK(empty.tp == 0);
  CHECK(empty.fn == static_cast<std::size_t>(gt.values().sum()));

  // a 1 px shift with a 2 px radius on 100x100 matches everything
  Tensor g(1, 100, 100), p(1, 100, 100);
  for (Index y = 10; y < 90; ++y) {
    g(0, y, 50) = 1;
    p(0, y, 51) = 1;
  }
  const MatchCounts shifted = correspond(p, g, 2.0 / std::hypot(100.0, 100.0));
  CHECK(shifted.tp == 80);
  CHECK(shifted.fp == 0);
  CHECK(shifted.fn == 0);
  CHECK(correspond(p, g, 0.5 / std::hypot(100.0, 100.0)).tp == 0);
}

TEST_CASE("correspondence is one-to-one") {
  Tensor g(1, 5, 5), p(1, 5, 5);
  g(0, 2, 2) = 1;
  p(0, 2, 1) = p(0, 2, 3) = 1;
  const MatchCounts m = correspond(p, g, 0.5);
  CHECK(m.tp == 1);
  CHECK(m.fp == 1);
  CHECK(m.fn == 0);
}

TEST_CASE("precision and recall conventions for empty sets") {
  CHECK(prf({0, 0, 3}).precision == 1.0);
  CHECK(prf({0, 0, 3}).recall == 0.0);
  CHECK(prf({0, 0, 3}).f == 0.0);
  CHECK(prf({0, 2, 0}).recall == 1.0);
  CHECK(prf({0, 2, 0}).precision == 0.0);
  CHECK(prf({0, 0, 0}).f == 1.0);
  CHECK(prf({3, 1, 1}).f == doctest::Approx(0.75));
}

TEST_CASE("nms: zeros, isolated peaks, ridges") {
  CHECK(nms_thin(Tensor(1, 7, 7)).values().isZero(0));

  Tensor peak(1, 9, 9);
  peak(0, 4, 4) = 0.8;
  CHECK(nms_thin(peak)(0, 4, 4) == 0.8);

  Tensor ridge(1, 15, 15);
  for (Index y = 0; y < 15; ++y)
    for (Index x = 6; x <= 8; ++x) ridge(0, y, x) = 0.7;
  const Tensor thin = nms_thin(ridge);
  for (Index y = 2; y < 13; ++y) {
    int width = 0;
    for (Index x = 0; x < 15; ++x) width += thin(0, y, x) > 0;
    CHECK(width >= 1);
    CHECK(width <= 2);
  }
}

TEST_CASE("property: nms output never exceeds its input and is nearly idempotent") {
  Rng rng(6);
  std::size_t changed = 0, total = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor map = gaussian_blur(random_tensor({1, 32, 32}, rng, 0.0, 1.0), 1.5);
    const Tensor once = nms_thin(map);
    CHECK(((once.values() <= map.values())).all());
    const Tensor twice = nms_thin(once);
    for (Index i = 0; i < once.size(); ++i) changed += once.values()[i] != twice.values()[i];
    total += static_cast<std::size_t>(once.size());
  }
  CHECK(static_cast<double>(changed) < 0.01 * static_cast<double>(total));
}

TEST_CASE("ordered mean and average precision helpers") {
  CHECK(ordered_mean({}) == 0.0);
  CHECK(ordered_mean({0.3, 0.1, 0.2}) == ordered_mean({0.2, 0.3, 0.1}));
  CHECK(average_precision({}) == 0.0);
  // one point at (R .5, P .8): flat from 0 to .5
  CHECK(average_precision({{0.5, 0.8, 0.5, 0.0}}) == doctest::Approx(0.4));
}

TEST_CASE("result serialisation") {
  Rng rng(7);
  const Tensor gt = random_mask(8, 8, 0.2, rng);
  const EvalResult r = evaluate({random_tensor({1, 8, 8}, rng, 0.0, 1.0)}, {gt}, 0.0, 9);
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("curve").size() == 9);
  CHECK(j.at("ods").get<double>() == r.ods);
  CHECK(r.to_table().rfind("ODS ", 0) == 0);
  CHECK_THROWS(evaluate({}, {}));
  CHECK_THROWS(evaluate({gt}, {gt, gt}));
  CHECK_THROWS_AS(nms_thin(Tensor(2, 4, 4)), ShapeError);
}
