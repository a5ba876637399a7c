#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace tcts::metrics {

// Read/write trace of an incremental decode: g[t] is the number of source
// tokens read when target position t+1 (1-based) was decided.
struct ReadWriteTrace {
  std::vector<int> g;
  int src_len = 0;

  int tgt_len() const { return static_cast<int>(g.size()); }
  void validate() const;  // non-decreasing, 1 <= g <= src_len, non-empty
};

ReadWriteTrace waitk_trace(int k, int src_len, int tgt_len);

// AP = (1/|x||y|) * sum_t g(t)
double average_proportion(const ReadWriteTrace& trace);

// AL = (1/tau) * sum_{t<=tau} (g(t) - (t-1)/(|y|/|x|)),
// tau = min{t : g(t) = |x|}. Throws if g never reaches |x|.
double average_lagging(const ReadWriteTrace& trace);

// Corpus BLEU over token sequences: clipped n-gram precision up to max_n,
// geometric mean, multiplicative brevity penalty, scaled to [0,100].
// smooth_eps > 0 substitutes an epsilon for zero precisions.
double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references,
                   int max_n = 4, double smooth_eps = 0.0);

struct PanelPrediction {
  int date = 0;
  int instrument = 0;
  double predicted = 0.0;
  double label = 0.0;
};

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// Cross-sectional Spearman per date, averaged over the dates that have at
// least two instruments. Throws when no date qualifies.
double rank_ic(const std::vector<PanelPrediction>& panel);

// Per-date ICs, for ICIR and reporting. Dates with fewer than two
// instruments are skipped.
std::vector<double> daily_rank_ics(const std::vector<PanelPrediction>& panel);

// mean(ics) / population std(ics). Throws on fewer than 2 entries or zero std.
double icir(const std::vector<double>& daily_ics);

double mse(const std::vector<double>& preds, const std::vector<double>& labels);

}  // namespace tcts::metrics
