#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tcts::tasks {

enum class Family { latency, horizon };

// One temporally correlated task. For the latency family index m means
// wait-m (offset delta = m-1 extra source tokens). For the horizon family
// index k means predicting the k-th future day (sigma = k).
struct TaskSpec {
  Family family = Family::latency;
  int index = 1;

  int delta() const { return index - 1; }
  int sigma() const { return index; }
  bool operator==(const TaskSpec&) const = default;
};

std::vector<TaskSpec> latency_task_set(int m_max);  // wait-1 .. wait-M
std::vector<TaskSpec> horizon_task_set(int k_max);  // T_1 .. T_K

// ---------------------------------------------------------------------------
// Transduction corpora
// ---------------------------------------------------------------------------

struct SentencePair {
  std::vector<int> src, tgt;
};

struct ParallelCorpus {
  int vocab = 0;  // token ids in [0, vocab)
  std::vector<SentencePair> train, valid, test;

  const std::vector<SentencePair>& split(const std::string& name) const;
};

// Deterministic synthetic corpus with an explicit future dependency:
//   y_t = (x_t + x_{min(t+d, Lx)}) mod vocab   (1-based positions)
// so target position t depends on source position t+d. Lengths are uniform
// in [5, 20]; valid/test sizes are 10% of `size` each (at least 16).
ParallelCorpus make_synthetic_transduction(uint64_t seed, size_t size, int vocab,
                                           int dependency);

// Line format: space-separated source ids, TAB, space-separated target ids.
void save_corpus(const ParallelCorpus& corpus, const std::string& dir);
ParallelCorpus load_corpus(const std::string& dir);

// ---------------------------------------------------------------------------
// Time-series panels
// ---------------------------------------------------------------------------

struct DailyRecord {
  int date = 0;
  double open = 0, close = 0, high = 0, low = 0, volume = 0;
};

struct SeriesGenParams {
  int horizon = 2;          // returns on day t carry beta * signal_{t-horizon}
  double beta = 0.02;       // planted signal strength
  double rho = 0.9;         // AR(1) coefficient of the latent signal
  double noise = 0.01;      // return noise std; 0 makes labels exactly recoverable
  double base_volume = 1e6;
};

struct SeriesPanel {
  std::vector<std::string> symbols;
  std::vector<std::vector<DailyRecord>> records;             // [inst][day]
  std::vector<std::vector<std::array<double, 5>>> features;  // z-scored per inst
  int days = 0;
  int train_days = 0, valid_days = 0;  // chronological: train < valid < test

  // Synthetic-only generator state, kept for oracle tests. signal[i][t]
  // is the latent value observable through volume on day t.
  std::optional<SeriesGenParams> gen;
  std::vector<std::vector<double>> signal;

  int instruments() const { return static_cast<int>(records.size()); }
  int split_of_day(int day) const;  // 0 train, 1 valid, 2 test
  int split_begin(int split) const;
  int split_end(int split) const;

  // y^(k)_t = p_{t+k}/p_{t+k-1} - 1, defined only when day t+k stays inside
  // the split that day t belongs to.
  bool label_defined(int inst, int day, int k) const;
  double label(int inst, int day, int k) const;

  // Noiseless-exact predictor built from the generating coefficients.
  double oracle_prediction(int inst, int day, int k) const;
};

SeriesPanel make_synthetic_series(uint64_t seed, int instruments, int days,
                                  int horizon_signal,
                                  const SeriesGenParams* params = nullptr,
                                  double train_frac = 0.70,
                                  double valid_frac = 0.15);

// CSV schema: date,symbol,open,close,high,low,volume. All instruments must
// share one date grid; prices must be positive; malformed rows are rejected
// with their line number and column name.
SeriesPanel ingest_csv(const std::string& path, double train_frac = 0.70,
                       double valid_frac = 0.15);

void save_series_csv(const SeriesPanel& panel, const std::string& path);

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

struct TransBatchItem {
  const SentencePair* pair = nullptr;
  TaskSpec task;
};

struct TransBatch {
  std::vector<TransBatchItem> items;
  size_t skipped = 0;
};

TransBatch assemble_batch(const std::vector<SentencePair>& data,
                          const std::vector<std::pair<size_t, TaskSpec>>& assignments);

struct SeriesExample {
  int inst = 0;
  int day = 0;  // window covers days [day-L+1, day]
};

struct SeriesBatchItem {
  SeriesExample example;
  TaskSpec task;
  double label = 0.0;
};

struct SeriesBatch {
  std::vector<SeriesBatchItem> items;
  size_t skipped = 0;
};

SeriesBatch assemble_batch(const SeriesPanel& panel,
                           const std::vector<std::pair<SeriesExample, TaskSpec>>& assignments);

// Days in `split` with a full lookback window of length L; labels are checked
// per-task at batch time.
std::vector<SeriesExample> enumerate_examples(const SeriesPanel& panel, int window,
                                              int split);

}  // namespace tcts::tasks
