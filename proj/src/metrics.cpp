#include "tcts/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace tcts::metrics {

void ReadWriteTrace::validate() const {
  if (g.empty()) throw std::invalid_argument("trace: empty");
  if (src_len < 1) throw std::invalid_argument("trace: src_len < 1");
  int prev = 0;
  for (int v : g) {
    if (v < 1 || v > src_len) {
      throw std::invalid_argument("trace: g out of [1, |x|]");
    }
    if (v < prev) throw std::invalid_argument("trace: g not non-decreasing");
    prev = v;
  }
}

ReadWriteTrace waitk_trace(int k, int src_len, int tgt_len) {
  ReadWriteTrace t;
  t.src_len = src_len;
  t.g.resize(static_cast<size_t>(tgt_len));
  for (int i = 0; i < tgt_len; ++i) t.g[static_cast<size_t>(i)] = std::min(i + k, src_len);
  return t;
}

double average_proportion(const ReadWriteTrace& trace) {
  trace.validate();
  double s = 0.0;
  for (int v : trace.g) s += v;
  return s / (static_cast<double>(trace.src_len) * trace.tgt_len());
}

double average_lagging(const ReadWriteTrace& trace) {
  trace.validate();
  int tau = -1;
  for (size_t t = 0; t < trace.g.size(); ++t) {
    if (trace.g[t] == trace.src_len) {
      tau = static_cast<int>(t) + 1;
      break;
    }
  }
  if (tau < 0) {
    throw std::invalid_argument("average_lagging: g never reaches |x| (malformed trace)");
  }
  const double rate = static_cast<double>(trace.tgt_len()) / trace.src_len;
  double s = 0.0;
  for (int t = 1; t <= tau; ++t) {
    s += trace.g[static_cast<size_t>(t - 1)] - (t - 1) / rate;
  }
  return s / tau;
}

namespace {

// n-gram key packed from token ids; tokens are small non-negative ints here.
struct NgramCounter {
  std::unordered_map<std::string, int> counts;
  void add(const std::vector<int>& seq, int n) {
    if (static_cast<int>(seq.size()) < n) return;
    std::string key;
    for (size_t i = 0; i + n <= seq.size(); ++i) {
      key.clear();
      for (int j = 0; j < n; ++j) {
        key += std::to_string(seq[i + static_cast<size_t>(j)]);
        key += ',';
      }
      ++counts[key];
    }
  }
};

}  // namespace

double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references,
                   int max_n, double smooth_eps) {
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: corpus size mismatch");
  }
  std::vector<long long> clipped(static_cast<size_t>(max_n), 0);
  std::vector<long long> total(static_cast<size_t>(max_n), 0);
  long long hyp_len = 0, ref_len = 0;
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    hyp_len += static_cast<long long>(hyp.size());
    ref_len += static_cast<long long>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      NgramCounter hc, rc;
      hc.add(hyp, n);
      rc.add(ref, n);
      for (const auto& [key, cnt] : hc.counts) {
        total[static_cast<size_t>(n - 1)] += cnt;
        auto it = rc.counts.find(key);
        if (it != rc.counts.end()) {
          clipped[static_cast<size_t>(n - 1)] += std::min(cnt, it->second);
        }
      }
    }
  }
  double log_prec = 0.0;
  int levels = 0;
  for (int n = 1; n <= max_n; ++n) {
    long long tot = total[static_cast<size_t>(n - 1)];
    if (tot == 0) continue;  // corpus shorter than n everywhere; level skipped
    ++levels;
    long long cor = clipped[static_cast<size_t>(n - 1)];
    if (cor == 0) {
      if (smooth_eps <= 0.0) return 0.0;
      log_prec += std::log(smooth_eps);
    } else {
      log_prec += std::log(static_cast<double>(cor) / static_cast<double>(tot));
    }
  }
  if (levels == 0 || hyp_len == 0) return 0.0;
  double bp = 1.0;
  if (hyp_len < ref_len) {
    bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  }
  return 100.0 * bp * std::exp(log_prec / levels);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double num = 0, va = 0, vb = 0;
  for (size_t i = 0; i < n; ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) {
    throw std::invalid_argument("correlation undefined for constant input");
  }
  return num / std::sqrt(va * vb);
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman: need two equal-length series of size >= 2");
  }
  return pearson(average_ranks(a), average_ranks(b));
}

std::vector<double> daily_rank_ics(const std::vector<PanelPrediction>& panel) {
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_date;
  for (const auto& p : panel) {
    by_date[p.date].first.push_back(p.predicted);
    by_date[p.date].second.push_back(p.label);
  }
  std::vector<double> ics;
  for (const auto& [date, pl] : by_date) {
    if (pl.first.size() < 2) continue;
    ics.push_back(spearman(pl.first, pl.second));
  }
  return ics;
}

double rank_ic(const std::vector<PanelPrediction>& panel) {
  auto ics = daily_rank_ics(panel);
  if (ics.empty()) {
    throw std::invalid_argument("rank_ic: no date has at least two instruments");
  }
  double s = 0.0;
  for (double v : ics) s += v;
  return s / static_cast<double>(ics.size());
}

double icir(const std::vector<double>& daily_ics) {
  if (daily_ics.size() < 2) throw std::invalid_argument("icir: need >= 2 daily ICs");
  double m = 0.0;
  for (double v : daily_ics) m += v;
  m /= static_cast<double>(daily_ics.size());
  double var = 0.0;  // population convention
  for (double v : daily_ics) var += (v - m) * (v - m);
  var /= static_cast<double>(daily_ics.size());
  double sd = std::sqrt(var);
  if (sd <= 1e-12 * (std::fabs(m) + 1.0)) {
    throw std::invalid_argument("icir: zero std of daily ICs");
  }
  return m / sd;
}

double mse(const std::vector<double>& preds, const std::vector<double>& labels) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw std::invalid_argument("mse: need equal non-empty lengths");
  }
  double s = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    double d = preds[i] - labels[i];
    s += d * d;
  }
  return s / static_cast<double>(preds.size());
}

}  // namespace tcts::metrics
