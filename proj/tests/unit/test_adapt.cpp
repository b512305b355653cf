#include <doctest.h>

#include <algorithm>

#include "helpers.hpp"
#include "jdapt/adapt.hpp"
#include "jdapt/errors.hpp"

using namespace jdapt;
using namespace jdapt::adapt;

namespace {

DomainOptions quick(std::uint64_t seed) {
  DomainOptions o;
  o.train.epochs = 10;
  o.train.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("identical distributions are not separable") {
  const Matrix g = testutil::gaussian(2000, 6, 1);
  const Matrix t = testutil::gaussian(2000, 6, 2);
  const auto r = train_domain_classifier(g, t, quick(3));
  CHECK(r.heldout_size > 0);
  CHECK(r.heldout_accuracy >= 0.4);
  CHECK(r.heldout_accuracy <= 0.6);
}

TEST_CASE("shifted distributions are separable") {
  const Matrix g = testutil::gaussian(1000, 6, 4);
  const Matrix t = testutil::gaussian(1000, 6, 5).array() + 10.0;
  const auto r = train_domain_classifier(g, t, quick(6));
  CHECK(r.heldout_accuracy > 0.99);
  const Vector pg = r.model.target_probability(g.topRows(50));
  const Vector pt = r.model.target_probability(t.topRows(50));
  CHECK(pg.maxCoeff() < pt.minCoeff());
  CHECK(pg.minCoeff() > 0.0);
  CHECK(pt.maxCoeff() < 1.0);
}

TEST_CASE("domain training is deterministic and checks widths") {
  const Matrix g = testutil::gaussian(200, 4, 7);
  const Matrix t = testutil::gaussian(150, 4, 8).array() + 1.0;
  const auto a = train_domain_classifier(g, t, quick(1));
  const auto b = train_domain_classifier(g, t, quick(1));
  CHECK(a.model.net.parameters() == b.model.net.parameters());
  CHECK(a.heldout_accuracy == b.heldout_accuracy);
  CHECK_THROWS_AS(train_domain_classifier(g, testutil::gaussian(10, 5, 1), quick(1)), ShapeError);
}

TEST_CASE("odds weight examples") {
  const WeightClamp c{0.05, 20.0};
  CHECK(odds_weight(0.5, c) == doctest::Approx(1.0));
  CHECK(odds_weight(0.2, c) == doctest::Approx(0.25));
  CHECK(odds_weight(0.999, c) == 20.0);
  CHECK(odds_weight(1e-6, c) == 0.05);
  CHECK(odds_weight(1.0, c) == 20.0);
}

TEST_CASE("odds weights are monotone and bounded") {
  const WeightClamp c{0.05, 20.0};
  double prev = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double w = odds_weight(i / 1000.0, c);
    CHECK(w >= prev);
    CHECK(w >= c.w_min);
    CHECK(w <= c.w_max);
    prev = w;
  }
}

TEST_CASE("clamp bounds are validated") {
  CHECK_THROWS_AS((WeightClamp{0.0, 20.0}.validate()), ValidationError);
  CHECK_THROWS_AS((WeightClamp{2.0, 1.0}.validate()), ValidationError);
}

TEST_CASE("importance weights follow the classifier probability") {
  const Matrix g = testutil::gaussian(300, 4, 9);
  const Matrix t = testutil::gaussian(300, 4, 10).array() + 1.5;
  const auto r = train_domain_classifier(g, t, quick(2));
  std::vector<std::string> ids;
  for (int i = 0; i < 300; ++i) ids.push_back("g" + std::to_string(i));
  const WeightClamp c{0.05, 20.0};
  const auto w = importance_weights(r.model, g, ids, c);
  const Vector p = r.model.target_probability(g);
  REQUIRE(w.size() == 300);
  for (int i = 0; i < 300; ++i) {
    CHECK(w.values[i] == doctest::Approx(odds_weight(p(i), c)));
    for (int j = i + 1; j < std::min(300, i + 20); ++j)
      if (p(i) > p(j)) CHECK(w.values[i] >= w.values[j]);
  }
  CHECK(w.at("g7") == w.values[7]);
  CHECK_THROWS_AS(w.at("nope"), ValidationError);
}

TEST_CASE("weights round-trip through NDJSON") {
  ImportanceWeights w;
  w.ids = {"a", "b\"q", "c"};
  w.values = {0.05, 1.0 / 3.0, 19.999999999};
  const auto back = weights_from_ndjson(weights_to_ndjson(w), w.clamp);
  CHECK(back.ids == w.ids);
  CHECK(back.values == w.values);
  CHECK_THROWS_AS(weights_from_ndjson("{\"id\":1}\n", w.clamp), ParseError);
}

TEST_CASE("adaptation to a scaled copy recovers the scale") {
  const Matrix s = testutil::gaussian(500, 1, 11);
  const Matrix t = 3.0 * s;
  const auto m = fit_adaptation(s, t, {.lambda = 0.0});
  CHECK(m.transform(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("adaptation of identical data is near identity") {
  const Matrix s = testutil::gaussian(500, 6, 12);
  const auto m = fit_adaptation(s, s, {.lambda = 1.0});
  CHECK(testutil::max_abs(m.transform - Matrix::Identity(6, 6)) < 1e-10);
}

TEST_CASE("adapted covariance matches the target") {
  Matrix mix = testutil::random_spd(6, 2);
  const Matrix s = testutil::gaussian(800, 6, 13) * mix;
  const Matrix t = testutil::gaussian(600, 6, 14, 0.3);
  const auto m = fit_adaptation(s, t, {.lambda = 0.0});
  const Matrix cm = testutil::naive_covariance(linalg::apply_coral(m, s));
  const Matrix ct = testutil::naive_covariance(t);
  CHECK(testutil::max_abs(cm - ct) < 1e-6);
}

TEST_CASE("weighted adaptation ignores zero-weight rows") {
  Matrix s = testutil::gaussian(400, 3, 15);
  std::vector<double> w(400, 1.0);
  for (int i = 300; i < 400; ++i) {
    s.row(i) *= 50.0;
    w[i] = 0.0;
  }
  const Matrix t = testutil::gaussian(300, 3, 16, 2.0);
  const auto weighted = fit_adaptation(s, w, t, {.lambda = 1.0});
  const auto head = fit_adaptation(Matrix(s.topRows(300)), t, {.lambda = 1.0});
  CHECK(testutil::max_abs(weighted.transform - head.transform) < 1e-9);
}
