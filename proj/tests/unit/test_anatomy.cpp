#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "ict/anatomy.hpp"

using namespace ict;

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

std::vector<double> unit(Rng& rng, std::size_t d) {
  std::vector<double> u(d);
  double n = 0;
  for (auto& x : u) n += (x = rng.normal()) * x;
  for (auto& x : u) x /= std::sqrt(n);
  return u;
}

ExampleRecord attention_record(std::size_t layers, std::size_t heads, std::vector<float> rows, SegmentMap segments) {
  ExampleRecord rec;
  rec.example_id = "a";
  const std::size_t n = rows.size() / (layers * heads);
  rec.attention_rows = Tensor({layers, heads, n}, std::move(rows));
  rec.segments = segments;
  return rec;
}

}  // namespace

TEST_CASE("attention_score") {
  SUBCASE("uniform single-head row") {
    const auto rec = attention_record(1, 1, {0.25f, 0.25f, 0.25f, 0.25f}, SegmentMap{{0, 2}, {2, 3}, {3, 3}});
    const auto p = attention_score(rec);
    CHECK(p.scores[0][0] == doctest::Approx(0.5));
    CHECK(p.scores[0][1] == doctest::Approx(0.25));
    CHECK(p.scores[0][2] == doctest::Approx(0.0));
    CHECK(p.scores[0][3] == doctest::Approx(0.25));
  }
  SUBCASE("two heads average the single-head profiles") {
    const SegmentMap seg{{0, 1}, {1, 2}, {2, 3}};
    const std::vector<float> r1{0.7f, 0.1f, 0.1f, 0.1f}, r2{0.1f, 0.2f, 0.3f, 0.4f};
    std::vector<float> both = r1;
    both.insert(both.end(), r2.begin(), r2.end());
    const auto p = attention_score(attention_record(1, 2, both, seg));
    const auto p1 = attention_score(attention_record(1, 1, r1, seg));
    const auto p2 = attention_score(attention_record(1, 1, r2, seg));
    for (std::size_t s = 0; s < kSegmentCount; ++s) {
      CHECK(p.scores[0][s] == doctest::Approx((p1.scores[0][s] + p2.scores[0][s]) / 2));
    }
  }
  SUBCASE("random valid rows give bucket sums of one and head order does not matter") {
    Rng rng(1);
    testing::TraceSpec spec;
    spec.records = 20;
    spec.heads = 3;
    spec.seq_len = 11;
    auto set = testing::random_trace(rng, spec);
    for (auto& rec : set.records) {
      const auto p = attention_score(rec);
      for (const auto& layer : p.scores) {
        CHECK(std::accumulate(layer.begin(), layer.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
        for (double x : layer) CHECK(x >= 0.0);
      }
      auto swapped = rec;
      auto& a = *swapped.attention_rows;
      for (std::size_t l = 0; l < spec.layers; ++l) {
        auto h0 = a.row(l, 0), h2 = a.row(l, 2);
        std::swap_ranges(h0.begin(), h0.end(), h2.begin());
      }
      const auto q = attention_score(swapped);
      for (std::size_t l = 0; l < spec.layers; ++l) {
        for (std::size_t s = 0; s < kSegmentCount; ++s) CHECK(q.scores[l][s] == doctest::Approx(p.scores[l][s]));
      }
    }
  }
  SUBCASE("missing payload or overlapping segments throw") {
    ExampleRecord bare;
    CHECK_THROWS_AS(attention_score(bare), std::invalid_argument);
    auto rec = attention_record(1, 1, {0.5f, 0.5f}, SegmentMap{{0, 2}, {1, 2}, {2, 2}});
    CHECK_THROWS_AS(attention_score(rec), std::invalid_argument);
  }
}

TEST_CASE("fit_output_probe") {
  SUBCASE("outputs set by sign(h . u) recover u") {
    Rng rng(2);
    const std::size_t n = 300, d = 6;
    const auto u = unit(rng, d);
    Tensor h = testing::random_tensor(rng, {n, d});
    std::vector<Label> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += h(i, j) * u[j];
      // keep a margin so the direction is well determined
      if (std::abs(dot) < 0.3) {
        for (std::size_t j = 0; j < d; ++j) h(i, j) = static_cast<float>(h(i, j) + (dot >= 0 ? 0.5 : -0.5) * u[j]);
        dot += dot >= 0 ? 0.5 : -0.5;
      }
      y[i] = dot > 0 ? 1 : 0;
    }
    const auto probe = fit_output_probe(h, y);
    CHECK(probe.cv_accuracy == 1.0);
    CHECK(cosine(probe.w_probe, u) > 0.99);
  }
  SUBCASE("shuffled outputs sit near chance") {
    Rng rng(3);
    Tensor h = testing::random_tensor(rng, {200, 5});
    std::vector<Label> y(200);
    for (auto& v : y) v = rng.coin();
    const auto probe = fit_output_probe(h, y, {}, 1);
    CHECK(probe.cv_accuracy >= 0.35);
    CHECK(probe.cv_accuracy <= 0.65);
  }
  SUBCASE("scaling features by c with l2 scaled by c^2 classifies identically") {
    Rng rng(4);
    Tensor h = testing::random_tensor(rng, {80, 4});
    std::vector<Label> y(80);
    for (std::size_t i = 0; i < 80; ++i) y[i] = h(i, 0) + 0.8 * rng.normal() > 0;
    Tensor hs = h;
    for (auto& v : hs.values()) v *= 2.0f;
    const std::vector<double> g1{1.0}, g4{4.0};
    const auto a = fit_output_probe(h, y, g1), b = fit_output_probe(hs, y, g4);
    for (std::size_t i = 0; i < 80; ++i) {
      double za = 0, zb = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        za += a.w_probe[j] * h(i, j);
        zb += b.w_probe[j] * hs(i, j);
      }
      CHECK((za > 0) == (zb > 0));
    }
  }
  SUBCASE("single-class outputs throw") {
    Tensor h({10, 2});
    CHECK_THROWS_AS(fit_output_probe(h, std::vector<Label>(10, 1)), std::invalid_argument);
  }
}

TEST_CASE("value vector similarity") {
  Rng rng(5);
  const std::size_t layers = 4, dm = 512, d = 16;
  const auto u = unit(rng, d);
  std::vector<Tensor> values;
  for (std::size_t l = 0; l < layers; ++l) values.push_back(testing::random_tensor(rng, {dm, d}, 0.3));
  OutputProbe probe;
  probe.w_probe = u;

  SUBCASE("exact parallel, antiparallel and orthogonal vectors") {
    std::vector<Tensor> m{Tensor({3, 2}, {1, 0, -2, 0, 0, 5})};
    OutputProbe p;
    p.w_probe = {3, 0};
    const auto ranked = rank_value_vectors(m, p.w_probe);
    REQUIRE(ranked.size() == 3);
    CHECK(ranked[0].cosine == doctest::Approx(1.0));
    CHECK(ranked[1].cosine == doctest::Approx(0.0));
    CHECK(ranked[2].cosine == doctest::Approx(-1.0));
  }
  SUBCASE("three planted near-parallel vectors in layer L-1 are the top three") {
    const std::size_t planted[] = {17, 200, 411};
    for (auto idx : planted) {
      auto row = values[layers - 1].row(idx);
      for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(2.0 * u[j] + 0.01 * rng.normal());
    }
    const auto report = value_vector_similarity(values, probe);
    REQUIRE(report.top_vectors.size() == 3);
    for (const auto& t : report.top_vectors) {
      CHECK(t.layer == layers - 1);
      CHECK(std::find(std::begin(planted), std::end(planted), t.index) != std::end(planted));
      CHECK(t.cosine > 0.99);
    }
    CHECK(report.per_layer_top_counts == std::vector<std::size_t>{0, 0, 0, 3});
    SUBCASE("counts ignore positive rescaling of the probe") {
      OutputProbe scaled = probe;
      for (auto& x : scaled.w_probe) x *= 7.0;
      CHECK(value_vector_similarity(values, scaled).per_layer_top_counts == report.per_layer_top_counts);
    }
    SUBCASE("per-layer scope takes the quota inside each layer") {
      const auto per_layer = value_vector_similarity(values, probe, TopScope::per_layer);
      CHECK(per_layer.per_layer_top_counts == std::vector<std::size_t>{1, 1, 1, 1});
    }
  }
  SUBCASE("top counts sum to ceil(0.001 L d_m) and cosines are bounded") {
    const auto report = value_vector_similarity(values, probe);
    const auto total = std::accumulate(report.per_layer_top_counts.begin(), report.per_layer_top_counts.end(), 0ul);
    CHECK(total == 3);
    for (const auto& t : rank_value_vectors(values, probe.w_probe)) {
      CHECK(t.cosine >= -1.0);
      CHECK(t.cosine <= 1.0);
    }
  }
  SUBCASE("zero-norm vectors are reported and excluded; a zero probe throws") {
    auto row = values[0].row(5);
    std::fill(row.begin(), row.end(), 0.0f);
    std::vector<TopVector> zero;
    const auto ranked = rank_value_vectors(values, probe.w_probe, &zero);
    CHECK(ranked.size() == layers * dm - 1);
    REQUIRE(zero.size() == 1);
    CHECK(zero[0].index == 5);
    OutputProbe empty;
    empty.w_probe.assign(d, 0.0);
    CHECK_THROWS_AS(value_vector_similarity(values, empty), std::invalid_argument);
  }
}

TEST_CASE("top_singular_vector") {
  Rng rng(6);
  const auto u = unit(rng, 8);
  SUBCASE("100 copies of u give u up to the sign convention") {
    const std::vector<std::vector<double>> stack(100, u);
    const auto v = top_singular_vector(stack);
    CHECK(std::abs(cosine(v, u)) > 1 - 1e-6);
    const auto big = std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    CHECK(*big > 0);
  }
  SUBCASE("two orthogonal clusters follow the 99-vector cluster") {
    std::vector<double> w(8, 0.0);
    // w orthogonal to u by Gram-Schmidt on a random vector
    const auto r = unit(rng, 8);
    double dot = 0;
    for (int i = 0; i < 8; ++i) dot += r[i] * u[i];
    for (int i = 0; i < 8; ++i) w[i] = r[i] - dot * u[i];
    std::vector<std::vector<double>> stack;
    for (int i = 0; i < 99; ++i) {
      auto x = u;
      for (auto& e : x) e += 0.01 * rng.normal();
      stack.push_back(x);
    }
    stack.push_back(w);
    CHECK(std::abs(cosine(top_singular_vector(stack), u)) > 0.99);
  }
  SUBCASE("output has unit norm") {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<std::vector<double>> stack;
      for (int i = 0; i < 5; ++i) stack.push_back(unit(rng, 6));
      const auto v = top_singular_vector(stack);
      double n = 0;
      for (double x : v) n += x * x;
      CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(top_singular_vector(std::vector<std::vector<double>>{u}), std::invalid_argument);
    CHECK_THROWS_AS(top_singular_vector(std::vector<std::vector<double>>(3, std::vector<double>(4, 0.0))),
                    std::invalid_argument);
  }
}

TEST_CASE("vocabulary projection") {
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0f;
  const std::vector<std::string> vocab{"zero", "one", "two", "three"};
  CHECK(vocab_projection(std::vector<double>{0, 0, 1, 0}, eye, vocab, 1) == std::vector<std::string>{"two"});
  SUBCASE("positive scaling keeps the ranking") {
    const std::vector<double> v{0.3, -1.0, 0.8, 0.1}, scaled{0.9, -3.0, 2.4, 0.3};
    CHECK(vocab_projection(v, eye, vocab, 4) == vocab_projection(scaled, eye, vocab, 4));
  }
  SUBCASE("a highest-scoring \\u2705 token is filtered") {
    const std::vector<std::string> v2{"zero", "\\u2705", "two", "three"};
    const auto top = vocab_projection(std::vector<double>{0, 1.0, 0.5, 0}, eye, v2, 1);
    CHECK(top == std::vector<std::string>{"two"});
    CHECK_THROWS_AS(vocab_projection(std::vector<double>{0, 1, 0, 0}, eye, v2, 4), std::invalid_argument);
  }
  SUBCASE("escape artifact rule") {
    CHECK(is_escape_artifact("\\u2705"));
    CHECK(is_escape_artifact("\\u00e9\\u00e9"));
    CHECK(is_escape_artifact("\x01\x02"));
    CHECK_FALSE(is_escape_artifact("True"));
    CHECK_FALSE(is_escape_artifact("caf\xc3\xa9"));
    CHECK_FALSE(is_escape_artifact("\\u27"));
  }
}

TEST_CASE("analyze_anatomy on a random trace reports every field") {
  Rng rng(7);
  testing::TraceSpec spec;
  spec.records = 40;
  spec.layers = 3;
  spec.hidden = 6;
  spec.ffn_rows = 10;
  spec.vocab = 8;
  auto set = testing::random_trace(rng, spec);
  set.vocab[5] = "\\u2705";
  const auto report = analyze_anatomy(set);
  CHECK(report.attention.scores.size() == 3);
  CHECK(report.values.per_layer_top_counts.size() == 3);
  CHECK(report.peak_attention_layer < 3);
  CHECK(report.peak_value_layer < 3);
  CHECK(report.values.vocab_projections.count("probe") == 1);
  const auto json = to_json(report);
  CHECK(json.find("peak_attention_layer") != std::string::npos);
  CHECK(json.find("\"aligned\"") != std::string::npos);
}
