#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tcts/metrics.hpp"
#include "tcts/tasks.hpp"

using namespace tcts;
using namespace tcts::tasks;

TEST_CASE("task sets carry the right offsets") {
  auto lat = latency_task_set(13);
  CHECK(lat.size() == 13);
  CHECK(lat[0].delta() == 0);
  CHECK(lat[12].delta() == 12);
  auto hor = horizon_task_set(3);
  CHECK(hor.size() == 3);
  CHECK(hor[2].sigma() == 3);
}

TEST_CASE("synthetic transduction follows the dependency formula") {
  // d=0: y_t = 2 x_t mod vocab, no future dependency
  auto c0 = make_synthetic_transduction(7, 50, 10, 0);
  for (const auto& p : c0.train) {
    for (size_t t = 0; t < p.src.size(); ++t) {
      CHECK(p.tgt[t] == (2 * p.src[t]) % 10);
    }
  }
  // d=2 hand check on every pair, including the clamped tail positions:
  // y_t = (x_t + x_{min(t+2, L)}) mod vocab. For x=[1,2,3,4] this gives
  // y = [4, 6, 7, 8]; note positions 3 and 4 both clamp to x_4.
  auto c2 = make_synthetic_transduction(7, 50, 10, 2);
  for (const auto& p : c2.train) {
    int L = static_cast<int>(p.src.size());
    for (int t = 1; t <= L; ++t) {
      int j = std::min(t + 2, L);
      CHECK(p.tgt[t - 1] == (p.src[t - 1] + p.src[j - 1]) % 10);
    }
  }
}

TEST_CASE("synthetic transduction d=2 worked sequence") {
  std::vector<int> x = {1, 2, 3, 4};
  std::vector<int> want = {4, 6, 7, 8};  // formula (pairs (1,3),(2,4),(3,4),(4,4))
  for (int t = 1; t <= 4; ++t) {
    int j = std::min(t + 2, 4);
    CHECK((x[t - 1] + x[j - 1]) % 10 == want[t - 1]);
  }
}

TEST_CASE("synthetic corpora are deterministic and length-bounded") {
  auto a = make_synthetic_transduction(42, 100, 16, 2);
  auto b = make_synthetic_transduction(42, 100, 16, 2);
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].src == b.train[i].src);
    CHECK(a.train[i].tgt == b.train[i].tgt);
    CHECK(a.train[i].src.size() == a.train[i].tgt.size());
    CHECK(a.train[i].src.size() >= 5);
    CHECK(a.train[i].src.size() <= 20);
  }
  auto c = make_synthetic_transduction(43, 100, 16, 2);
  bool all_same = true;
  for (size_t i = 0; i < a.train.size() && all_same; ++i)
    all_same = a.train[i].src == c.train[i].src;
  CHECK_FALSE(all_same);
}

TEST_CASE("corpus round trip through TSV") {
  auto c = make_synthetic_transduction(5, 30, 12, 1);
  auto dir = std::filesystem::temp_directory_path() / "tcts_corpus_test";
  save_corpus(c, dir.string());
  auto back = load_corpus(dir.string());
  CHECK(back.vocab == c.vocab);
  REQUIRE(back.train.size() == c.train.size());
  for (size_t i = 0; i < c.train.size(); ++i) {
    CHECK(back.train[i].src == c.train[i].src);
    CHECK(back.train[i].tgt == c.train[i].tgt);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic series: positivity, labels, determinism") {
  auto p = make_synthetic_series(11, 4, 200, 2);
  CHECK(p.instruments() == 4);
  for (int i = 0; i < 4; ++i) {
    for (const auto& r : p.records[static_cast<size_t>(i)]) {
      CHECK(r.close > 0.0);
      CHECK(r.open > 0.0);
      CHECK(r.high >= std::max(r.open, r.close));
      CHECK(r.low <= std::min(r.open, r.close));
      CHECK(r.volume > 0.0);
    }
  }
  // label identity: y * p_{t+k-1} + p_{t+k-1} = p_{t+k}
  for (int k : {1, 2, 3}) {
    for (int t = 0; t < p.days - k; ++t) {
      if (!p.label_defined(0, t, k)) continue;
      double y = p.label(0, t, k);
      double prev = p.records[0][static_cast<size_t>(t + k - 1)].close;
      double next = p.records[0][static_cast<size_t>(t + k)].close;
      CHECK(y * prev + prev == doctest::Approx(next).epsilon(1e-9));
    }
  }
  auto q = make_synthetic_series(11, 4, 200, 2);
  CHECK(q.records[2][77].close == p.records[2][77].close);
  CHECK(q.records[1][5].volume == p.records[1][5].volume);
}

TEST_CASE("noiseless series: oracle recovers labels exactly, RankIC 1.0") {
  SeriesGenParams gp;
  gp.noise = 0.0;
  auto p = make_synthetic_series(3, 6, 300, 2, &gp);
  std::vector<metrics::PanelPrediction> panel;
  int test_begin = p.split_begin(2);
  for (int t = test_begin + 2; t < p.days - 3; ++t) {
    for (int i = 0; i < p.instruments(); ++i) {
      if (!p.label_defined(i, t, 2)) continue;
      double pred = p.oracle_prediction(i, t, 2);
      double y = p.label(i, t, 2);
      CHECK(pred == doctest::Approx(y).epsilon(1e-9));
      panel.push_back({t, i, pred, y});
    }
  }
  REQUIRE(!panel.empty());
  CHECK(metrics::rank_ic(panel) == doctest::Approx(1.0));
}

TEST_CASE("split hygiene: chronological, no label leakage across splits") {
  auto p = make_synthetic_series(9, 3, 100, 2);
  CHECK(p.train_days == 70);
  CHECK(p.valid_days == 15);
  CHECK(p.split_begin(1) == 70);
  CHECK(p.split_begin(2) == 85);
  // a label whose target day crosses the split boundary is undefined
  CHECK_FALSE(p.label_defined(0, 69, 1));
  CHECK_FALSE(p.label_defined(0, 84, 3));
  CHECK(p.label_defined(0, 68, 1));
  CHECK(p.label_defined(0, 5, 3));
  CHECK_THROWS_AS(p.label(0, 69, 1), std::out_of_range);
}

TEST_CASE("train-split feature means are zero after normalization") {
  auto p = make_synthetic_series(21, 3, 150, 2);
  for (int i = 0; i < p.instruments(); ++i) {
    for (int f = 0; f < 5; ++f) {
      double m = 0;
      for (int d = 0; d < p.train_days; ++d)
        m += p.features[static_cast<size_t>(i)][static_cast<size_t>(d)][static_cast<size_t>(f)];
      m /= p.train_days;
      CHECK(std::fabs(m) < 1e-9);
    }
  }
}

TEST_CASE("csv ingest: happy path and rejects") {
  auto dir = std::filesystem::temp_directory_path() / "tcts_csv_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "panel.csv").string();
  {
    std::ofstream os(path);
    os << "date,symbol,open,close,high,low,volume\n";
    for (int d = 0; d < 3; ++d) {
      os << (20200101 + d) << ",AAA," << 10 + d << "," << 11 + d << "," << 12 + d
         << "," << 9 + d << ",1000\n";
    }
  }
  auto p = ingest_csv(path);
  CHECK(p.instruments() == 1);
  CHECK(p.days == 3);
  CHECK(p.records[0][1].close == doctest::Approx(12.0));

  {
    std::ofstream os(path);
    os << "date,symbol,open,close,high,low,volume\n";
    os << "20200101,AAA,10,-11,12,9,1000\n";
  }
  CHECK_THROWS_WITH_AS(ingest_csv(path), doctest::Contains("line 2"),
                       std::runtime_error);

  {
    std::ofstream os(path);
    os << "date,symbol,open,shut,high,low,volume\n";
  }
  CHECK_THROWS_WITH_AS(ingest_csv(path), doctest::Contains("shut"), std::runtime_error);

  {
    std::ofstream os(path);
    os << "date,symbol,open,close,high,low,volume\n";
    os << "20200101,AAA,10,eleven,12,9,1000\n";
  }
  CHECK_THROWS_WITH_AS(ingest_csv(path), doctest::Contains("close"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("series CSV round trip") {
  auto p = make_synthetic_series(2, 2, 60, 1);
  auto path = (std::filesystem::temp_directory_path() / "tcts_series_rt.csv").string();
  save_series_csv(p, path);
  auto q = ingest_csv(path);
  CHECK(q.instruments() == p.instruments());
  CHECK(q.days == p.days);
  for (int d = 0; d < p.days; ++d) {
    CHECK(q.records[1][static_cast<size_t>(d)].close ==
          doctest::Approx(p.records[1][static_cast<size_t>(d)].close).epsilon(1e-9));
  }
  std::filesystem::remove(path);
}

TEST_CASE("batch assembly: latency") {
  auto c = make_synthetic_transduction(1, 20, 8, 1);
  std::vector<std::pair<size_t, TaskSpec>> asg;
  for (size_t i = 0; i < 6; ++i) asg.push_back({i, TaskSpec{Family::latency, 3}});
  auto b = assemble_batch(c.train, asg);
  CHECK(b.items.size() == 6);
  CHECK(b.skipped == 0);
  CHECK(b.items[2].task.index == 3);
  CHECK(b.items[2].pair == &c.train[2]);
}

TEST_CASE("batch assembly: horizon skips undefined labels and counts them") {
  auto p = make_synthetic_series(4, 2, 100, 2);
  std::vector<std::pair<SeriesExample, TaskSpec>> asg;
  // day 69 is the last training day: horizon-1 label would cross the split
  asg.push_back({{0, 69}, TaskSpec{Family::horizon, 1}});
  asg.push_back({{0, 40}, TaskSpec{Family::horizon, 1}});
  asg.push_back({{1, 40}, TaskSpec{Family::horizon, 3}});
  auto b = assemble_batch(p, asg);
  CHECK(b.items.size() == 2);
  CHECK(b.skipped == 1);
  // horizon k=1 on prices p=[100,110,121] at t=1 -> 0.10
  CHECK(b.items[0].label == doctest::Approx(p.label(0, 40, 1)));
  double manual = p.records[0][41].close / p.records[0][40].close - 1.0;
  CHECK(b.items[0].label == doctest::Approx(manual));
}

TEST_CASE("horizon label worked example") {
  // p = [100, 110, 121]: y^(1) at t=1 is 110/100 - 1 except indices here are
  // 0-based: label(inst=0, day=0, k=1) = p_1/p_0 - 1
  SeriesPanel p;
  p.symbols = {"A"};
  p.records = {{{1, 100, 100, 100, 100, 1}, {2, 110, 110, 110, 110, 1},
                {3, 121, 121, 121, 121, 1}}};
  p.days = 3;
  p.train_days = 3;
  p.valid_days = 0;
  CHECK(p.label(0, 0, 1) == doctest::Approx(0.10));
  CHECK(p.label(0, 0, 2) == doctest::Approx(0.10));
  CHECK(p.label(0, 1, 1) == doctest::Approx(0.10));
}

TEST_CASE("example enumeration respects the lookback window") {
  auto p = make_synthetic_series(8, 2, 100, 2);
  auto ex = enumerate_examples(p, 60, 0);
  for (const auto& e : ex) {
    CHECK(e.day >= 59);
    CHECK(e.day < 70);
  }
  CHECK(ex.size() == 2 * (70 - 59));
  auto val = enumerate_examples(p, 60, 1);
  CHECK(val.size() == 2 * 15);
}
