#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bandit.hpp"
#include "tcts/scheduler.hpp"
#include "tcts/tasks.hpp"

using namespace tcts;
using namespace tcts::sched;

TEST_CASE("feature masks parse and shrink dimensions") {
  CHECK(FeatureMask{}.latency_dim() == 7);
  auto m = parse_feature_mask("iii");
  CHECK(m.drop_valid_loss);
  CHECK(m.latency_dim() == 5);  // dimension shrinks by 2
  auto m2 = parse_feature_mask("i,iv");
  CHECK(m2.latency_dim() == 4);
  CHECK(feature_mask_to_string(m2) == "i,iv");
  CHECK_THROWS_AS(parse_feature_mask("v"), std::invalid_argument);
}

TEST_CASE("latency features: ratios, zero history, progress") {
  LatencyFeatures f(10.0, 12.0, 100);
  auto v = f.extract(10, 12, 3.5, 50);
  REQUIRE(v.size() == 7);
  CHECK(v[0] == doctest::Approx(1.0));  // average-length sentence
  CHECK(v[1] == doctest::Approx(1.0));
  CHECK(v[2] == doctest::Approx(3.5));
  CHECK(v[3] == 0.0);  // empty history
  CHECK(v[4] == 0.0);
  CHECK(v[5] == 0.0);
  CHECK(v[6] == doctest::Approx(0.5));  // 50/100

  f.record_train_loss(2.0);
  f.record_train_loss(4.0);
  f.record_validation(1.5);
  auto v2 = f.extract(5, 6, 1.0, 100);
  CHECK(v2[3] == doctest::Approx(3.0));  // arithmetic mean over completed steps
  CHECK(v2[4] == doctest::Approx(1.5));  // previous-episode validation loss
  CHECK(v2[5] == doctest::Approx(1.5));
  CHECK(v2[6] == doctest::Approx(1.0));
}

TEST_CASE("latency features honor the ablation mask") {
  LatencyFeatures f(10.0, 10.0, 10, parse_feature_mask("iii"));
  auto v = f.extract(10, 10, 0.5, 5);
  REQUIRE(v.size() == 5);
  CHECK(v[0] == doctest::Approx(1.0));
  CHECK(v[2] == doctest::Approx(0.5));
  CHECK(v[4] == doctest::Approx(0.5));  // progress moved up
}

TEST_CASE("horizon features: four parts with task labels") {
  auto panel = tasks::make_synthetic_series(3, 3, 120, 2);
  HorizonFeatures hf(3, 20);
  tasks::SeriesExample ex{1, 40};
  auto v = hf.extract(panel, ex);
  REQUIRE(static_cast<int>(v.size()) == hf.dim());
  REQUIRE(v.size() == 12);  // 5 + 2 + 1 + 1 + 3
  for (double x : v) CHECK(std::isfinite(x));
  CHECK(v[7] == 0.0);  // previous-iteration loss before any iteration
  CHECK(v[8] == 0.0);
  CHECK(v[9] == doctest::Approx(panel.label(1, 40, 1)));
  CHECK(v[10] == doctest::Approx(panel.label(1, 40, 2)));
  CHECK(v[11] == doctest::Approx(panel.label(1, 40, 3)));
  hf.record_iteration(0.25, -0.01);
  auto v2 = hf.extract(panel, ex);
  CHECK(v2[7] == doctest::Approx(0.25));
  CHECK(v2[8] == doctest::Approx(-0.01));
}

TEST_CASE("policy distribution: uniform at zero weights, normalized, shift invariant") {
  PolicyConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = 4;
  cfg.n_tasks = 5;
  Policy p(cfg);
  auto d = p.distribution({0.1, -0.2, 0.3});
  double s = 0.0;
  for (double v : d) {
    CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(v > 0.0);
    s += v;
  }
  CHECK(std::fabs(s - 1.0) <= 1e-12);

  // logits [1,1,...,1] via the output bias: still uniform
  for (auto& v : p.params()[3]->values()) v = 1.0;
  auto d2 = p.distribution({0.1, -0.2, 0.3});
  for (double v : d2) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));

  CHECK_THROWS_AS(p.distribution({1.0}), std::invalid_argument);
}

TEST_CASE("policy distribution worked example: logits [ln 2, 0]") {
  PolicyConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = 3;
  cfg.n_tasks = 2;
  Policy p(cfg);  // zero weights; hidden output is zero, so logits = b2
  p.named_params("")["b2"]->values() = {std::log(2.0), 0.0};
  auto d = p.distribution({0.4, 0.6});
  CHECK(d[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("sampling: degenerate and uniform frequencies, buffer growth") {
  PolicyConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden = 2;
  cfg.n_tasks = 3;
  Policy p(cfg);
  p.named_params("")["b2"]->values() = {40.0, 0.0, 0.0};
  auto rng = Rng::substream(7, "sample");
  int hits = 0;
  for (int i = 0; i < 10000; ++i) hits += p.sample({1.0}, rng) == 0;
  CHECK(static_cast<double>(hits) / 10000.0 >= 0.999);
  CHECK(p.buffer_size() == 10000);
  p.clear_buffer();
  CHECK(p.buffer_size() == 0);

  p.named_params("")["b2"]->values() = {0.0, 0.0, 0.0};
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 100000; ++i) ++counts[p.sample({1.0}, rng)];
  for (int c : counts) {
    CHECK(std::fabs(c / 100000.0 - 1.0 / 3.0) <= 0.02);
  }
}

TEST_CASE("reinforce: zero reward leaves parameters untouched") {
  PolicyConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = 4;
  cfg.n_tasks = 3;
  Policy p(cfg);
  auto rng = Rng::substream(1, "init");
  p.init_params(rng);
  auto before = p.named_params("")["w2"]->values();
  auto srng = Rng::substream(2, "s");
  p.sample({0.5, -0.5}, srng);
  p.reinforce_update(0.0, 0.05);
  CHECK(p.named_params("")["w2"]->values() == before);
  CHECK(p.buffer_size() == 0);
}

TEST_CASE("reinforce hand example: logits move by (+0.5 eta, -0.5 eta)") {
  // zero W1/b1 make the hidden layer silent; only b2 can move, and its
  // gradient equals the softmax logit gradient (1-p0, -p1).
  PolicyConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = 4;
  cfg.n_tasks = 2;
  Policy p(cfg);
  const double eta = 0.01;
  auto srng = Rng::substream(3, "s");
  // force action 0 into the buffer: with equal logits sample may pick either,
  // so retry until action 0 is drawn with a fresh policy each time
  while (true) {
    p.clear_buffer();
    if (p.sample({1.0, 2.0}, srng) == 0) break;
  }
  p.reinforce_update(1.0, eta);
  auto b2 = p.named_params("")["b2"]->values();
  CHECK(b2[0] == doctest::Approx(0.5 * eta).epsilon(1e-12));
  CHECK(b2[1] == doctest::Approx(-0.5 * eta).epsilon(1e-12));
}

TEST_CASE("reinforce sign property: positive reward raises chosen-action mass") {
  PolicyConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = 8;
  cfg.n_tasks = 4;

  SUBCASE("single buffered pair: exact increase") {
    Policy p(cfg);
    auto rng = Rng::substream(11, "init");
    p.init_params(rng);
    std::vector<double> f = {0.2, -0.7, 1.1};
    auto srng = Rng::substream(12, "s");
    size_t a = p.sample(f, srng);
    double before = p.distribution(f)[a];
    p.reinforce_update(0.8, 0.05);
    CHECK(p.distribution(f)[a] >= before);
  }

  SUBCASE("multiple pairs at small learning rate: buffered log-likelihood ascends") {
    // With several buffered pairs the per-action probabilities can trade off
    // against each other (opposing actions interact through the shared output
    // bias), so the guaranteed quantity is the summed log-likelihood of the
    // buffered actions: the update is gradient ascent on exactly that.
    Policy p(cfg);
    auto rng = Rng::substream(13, "init");
    p.init_params(rng);
    auto srng = Rng::substream(14, "s");
    std::vector<std::vector<double>> feats;
    std::vector<size_t> acts;
    for (int i = 0; i < 6; ++i) {
      std::vector<double> f = {srng.uniform(-1, 1), srng.uniform(-1, 1), srng.uniform(-1, 1)};
      feats.push_back(f);
      acts.push_back(p.sample(f, srng));
    }
    auto loglik = [&] {
      double s = 0.0;
      for (size_t i = 0; i < feats.size(); ++i)
        s += std::log(p.distribution(feats[i])[acts[i]]);
      return s;
    };
    double before = loglik();
    p.reinforce_update(1.0, 1e-2);
    CHECK(loglik() > before);

    // aligned buffers (one action repeated) do keep that action rising
    p.clear_buffer();
    std::vector<double> f0 = {0.3, 0.3, -0.2};
    double pa = p.distribution(f0)[1];
    for (int r = 0; r < 4; ++r) {
      p.sample(f0, srng);
    }
    // overwrite buffer with a fixed action by re-sampling until aligned
    p.clear_buffer();
    int found = 0;
    while (found < 4) {
      if (p.sample(f0, srng) == 1) {
        ++found;
      } else {
        p.clear_buffer();
        found = 0;
      }
    }
    p.reinforce_update(0.5, 1e-3);
    CHECK(p.distribution(f0)[1] >= pa);
  }
}

TEST_CASE("reinforce on an empty buffer is a counted no-op") {
  PolicyConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden = 2;
  cfg.n_tasks = 2;
  Policy p(cfg);
  CHECK(p.empty_update_count() == 0);
  p.reinforce_update(1.0, 0.1);
  CHECK(p.empty_update_count() == 1);
}

TEST_CASE("shaped reward") {
  CHECK(shaped_reward(0.5, 0.5) == 0.0);
  CHECK(shaped_reward(-1.2, -1.5) == doctest::Approx(0.3));
  // improving validation loss -> strictly positive rewards
  std::vector<double> vals = {-2.0, -1.8, -1.5, -1.1};
  for (size_t i = 1; i < vals.size(); ++i) CHECK(shaped_reward(vals[i], vals[i - 1]) > 0.0);
}

TEST_CASE("histogram CSV round trip") {
  std::vector<std::vector<double>> h = {{0.5, 0.25, 0.25}, {0.9, 0.05, 0.05}};
  auto path = (std::filesystem::temp_directory_path() / "tcts_hist.csv").string();
  write_histogram_csv(path, h);
  auto back = read_histogram_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0][0] == doctest::Approx(0.5));
  CHECK(back[1][2] == doctest::Approx(0.05));
  std::filesystem::remove(path);
}

TEST_CASE("bandit: policy converges to the paying arm") {
  for (uint64_t seed : {1ull, 2ull}) {
    auto res = bandit::run(seed, 500, 1024, 0.05);
    CHECK(res.episodes_to_target > 0);
    CHECK(res.episodes_to_target <= 500);
  }
}

TEST_CASE("bandit histograms stabilize: small TV between consecutive episodes") {
  auto res = bandit::run(3, 120, 1024, 0.05);
  for (size_t e = 10; e + 1 < res.histograms.size(); ++e) {
    CHECK(bandit::tv_distance(res.histograms[e], res.histograms[e + 1]) < 0.05);
  }
}

TEST_CASE("policy checkpoint round trip") {
  PolicyConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden = 6;
  cfg.n_tasks = 3;
  Policy p(cfg);
  auto rng = Rng::substream(21, "init");
  p.init_params(rng);
  Policy q(cfg);
  std::map<std::string, ad::TensorPtr> named;
  for (auto& [k, v] : p.named_params("pol/")) named[k] = v;
  q.load_params(named, "pol/");
  std::vector<double> f = {0.1, 0.2, 0.3, 0.4};
  CHECK(p.distribution(f) == q.distribution(f));
}
