#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "ict/layer_weights.hpp"
#include "ict/tuning.hpp"

using namespace ict;
using testing::informative_questions;

TEST_CASE("surrogate gradient matches central differences") {
  Rng rng(1);
  for (std::size_t informative : {2u, 9u}) {
    const auto qs = informative_questions(rng, 60, 7, 5, informative);
    for (double l2 : {0.0, 0.3}) {
      std::vector<double> w(5);
      for (auto& x : w) x = rng.normal();
      std::vector<double> grad;
      surrogate_loss(qs, w, l2, &grad);
      for (std::size_t i = 0; i < w.size(); ++i) {
        auto hi = w, lo = w;
        hi[i] += 1e-4;
        lo[i] -= 1e-4;
        const double numeric = (surrogate_loss(qs, hi, l2) - surrogate_loss(qs, lo, l2)) / 2e-4;
        CHECK(std::abs(grad[i] - numeric) <= 1e-3 * std::max(std::abs(numeric), 1e-3));
      }
    }
  }
}

TEST_CASE("tuning finds the informative layer") {
  Rng rng(2);
  const std::size_t star = 3;
  const auto qs = informative_questions(rng, 500, 10, 6, star);
  TuneConfig cfg;
  const auto w = tune_weights(qs, cfg);
  REQUIRE(w.w.size() == 6);
  CHECK(std::max_element(w.w.begin(), w.w.end()) - w.w.begin() == star);
  CHECK(w.training_meta.final_loss < w.training_meta.initial_loss);
  CHECK(w.training_meta.n_heldout == 500);
  CHECK(w.training_meta.iterations == 1000);
  CHECK(w.training_meta.lr == 0.01);

  // Grid-search oracle over one-hot weights agrees.
  std::size_t best = 0;
  double best_loss = INFINITY;
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<double> e(6, 0.0);
    e[i] = 1.0;
    const double loss = surrogate_loss(qs, e, 0.0);
    if (loss < best_loss) {
      best_loss = loss;
      best = i;
    }
  }
  CHECK(best == star);
}

TEST_CASE("final loss never exceeds initial loss") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto qs = informative_questions(rng, 20 + rng.below(40), 1 + rng.below(6), 3, rng.below(5));
    TuneConfig cfg;
    cfg.iterations = 200;
    cfg.lr = trial % 2 ? 0.5 : 0.01;
    const auto w = tune_weights(qs, cfg);
    CHECK(w.training_meta.final_loss <= w.training_meta.initial_loss);
  }
}

TEST_CASE("uninformative bits cannot push the loss below chance") {
  Rng rng(4);
  const auto noise = tune_weights(informative_questions(rng, 500, 10, 6, 99), TuneConfig{});
  const auto signal = tune_weights(informative_questions(rng, 500, 10, 6, 2), TuneConfig{});
  CHECK(noise.training_meta.final_loss > std::log(2.0) - 0.05);
  CHECK(signal.training_meta.final_loss < noise.training_meta.final_loss - 0.1);
}

TEST_CASE("zero iterations return the uniform initialization") {
  Rng rng(5);
  const auto qs = informative_questions(rng, 30, 4, 4, 1);
  TuneConfig cfg;
  cfg.iterations = 0;
  const auto w = tune_weights(qs, cfg);
  CHECK(w.w == LayerWeights::uniform(4).w);
  CHECK(w.training_meta.final_loss == w.training_meta.initial_loss);
}

TEST_CASE("tuning is bitwise deterministic and respects n_heldout") {
  Rng rng(6);
  const auto qs = informative_questions(rng, 80, 5, 4, 0);
  TuneConfig cfg;
  cfg.n_heldout = 50;
  cfg.seed = 11;
  cfg.iterations = 300;
  const auto a = tune_weights(qs, cfg);
  const auto b = tune_weights(qs, cfg);
  CHECK(a.w == b.w);
  CHECK(a.training_meta.n_heldout == 50);
  CHECK(select_heldout(qs, cfg).size() == 50);
  SUBCASE("surrogate loss on the held-out subset reproduces final_loss") {
    CHECK(surrogate_loss(select_heldout(qs, cfg), a.w, cfg.l2) == a.training_meta.final_loss);
  }
}

TEST_CASE("tuning input errors") {
  CHECK_THROWS_AS(tune_weights({}, TuneConfig{}), std::invalid_argument);
  Rng rng(7);
  auto qs = informative_questions(rng, 5, 3, 4, 0);
  qs[2].agreements[1].bits.pop_back();
  CHECK_THROWS_AS(tune_weights(qs, TuneConfig{}), std::invalid_argument);
  auto ok = informative_questions(rng, 5, 3, 4, 0);
  TuneConfig cfg;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(tune_weights(ok, cfg), std::invalid_argument);
}

TEST_CASE("apply_transfer") {
  Rng rng(8);
  testing::TraceSpec spec;
  spec.layers = 5;
  spec.records = 30;
  spec.paths_per_group = 5;
  const auto set = testing::random_trace(rng, spec);
  const auto qs = collect_questions(set);

  SUBCASE("uniform weights reproduce plain SC+IC") {
    const auto results = apply_transfer(LayerWeights::uniform(4), qs);
    REQUIRE(results.size() == qs.size());
    for (std::size_t i = 0; i < qs.size(); ++i) {
      CHECK(results[i].chosen == vote_sc_ic(qs[i].paths).chosen);
      CHECK(results[i].method == Method::sc_ic_transfer);
    }
  }
  SUBCASE("positive scaling keeps every choice") {
    LayerWeights w;
    w.w = {0.3, -0.2, 0.9, 0.1};
    LayerWeights scaled = w;
    for (auto& x : scaled.w) x *= 4.0;
    const auto a = apply_transfer(w, qs), b = apply_transfer(scaled, qs);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].chosen == b[i].chosen);
  }
  SUBCASE("mismatched layer count throws") {
    CHECK_THROWS_AS(apply_transfer(LayerWeights::uniform(6), qs), std::invalid_argument);
  }
}

TEST_CASE("layer weights JSON round-trips bit-for-bit") {
  Rng rng(9);
  LayerWeights w;
  for (int i = 0; i < 7; ++i) w.w.push_back(rng.normal() / 3.0);
  w.source_dataset = "coin";
  w.training_meta = {0.01, 1000, 500, 42, 0.0, 0.6931471805599453, 0.123456789012345};
  const auto back = layer_weights_from_json(to_json(w));
  CHECK(back.w == w.w);
  CHECK(back.source_dataset == "coin");
  CHECK(back.training_meta.seed == 42);
  CHECK(back.training_meta.initial_loss == w.training_meta.initial_loss);
  CHECK(back.training_meta.final_loss == w.training_meta.final_loss);
  CHECK(to_json(back) == to_json(w));
  CHECK_THROWS(layer_weights_from_json("{\"w\": [1.0, \"x\"]}"));
  CHECK_THROWS(layer_weights_from_json("not json"));
}

TEST_CASE("uniform weights") {
  const auto w = LayerWeights::uniform(4);
  CHECK(w.w == std::vector<double>(4, 0.25));
}
