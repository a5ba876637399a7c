#include "tcts/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "tcts/rng.hpp"

namespace tcts::tasks {

std::vector<TaskSpec> latency_task_set(int m_max) {
  if (m_max < 1) throw std::invalid_argument("latency_task_set: M must be >= 1");
  std::vector<TaskSpec> out;
  for (int m = 1; m <= m_max; ++m) out.push_back({Family::latency, m});
  return out;
}

std::vector<TaskSpec> horizon_task_set(int k_max) {
  if (k_max < 1) throw std::invalid_argument("horizon_task_set: K must be >= 1");
  std::vector<TaskSpec> out;
  for (int k = 1; k <= k_max; ++k) out.push_back({Family::horizon, k});
  return out;
}

const std::vector<SentencePair>& ParallelCorpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

namespace {

SentencePair synth_pair(Rng& rng, int vocab, int dependency) {
  int len = static_cast<int>(rng.uniform_int(5, 20));
  SentencePair p;
  p.src.resize(static_cast<size_t>(len));
  p.tgt.resize(static_cast<size_t>(len));
  for (auto& t : p.src) t = static_cast<int>(rng.uniform_int(0, vocab - 1));
  for (int t = 1; t <= len; ++t) {
    int j = std::min(t + dependency, len);  // 1-based, clamped at the end
    p.tgt[static_cast<size_t>(t - 1)] =
        (p.src[static_cast<size_t>(t - 1)] + p.src[static_cast<size_t>(j - 1)]) % vocab;
  }
  return p;
}

}  // namespace

ParallelCorpus make_synthetic_transduction(uint64_t seed, size_t size, int vocab,
                                           int dependency) {
  if (dependency < 0) throw std::invalid_argument("dependency must be >= 0");
  if (vocab < 4) throw std::invalid_argument("vocab must be >= 4");
  ParallelCorpus c;
  c.vocab = vocab;
  auto rng = Rng::substream(seed, "synthetic-transduction");
  size_t held = std::max<size_t>(16, size / 10);
  c.train.reserve(size);
  for (size_t i = 0; i < size; ++i) c.train.push_back(synth_pair(rng, vocab, dependency));
  for (size_t i = 0; i < held; ++i) c.valid.push_back(synth_pair(rng, vocab, dependency));
  for (size_t i = 0; i < held; ++i) c.test.push_back(synth_pair(rng, vocab, dependency));
  return c;
}

namespace {

void write_split(const std::string& path,
                 const std::vector<SentencePair>& pairs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  for (const auto& p : pairs) {
    for (size_t i = 0; i < p.src.size(); ++i) os << (i ? " " : "") << p.src[i];
    os << '\t';
    for (size_t i = 0; i < p.tgt.size(); ++i) os << (i ? " " : "") << p.tgt[i];
    os << '\n';
  }
}

std::vector<SentencePair> read_split(const std::string& path, int vocab) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::vector<SentencePair> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": missing TAB");
    }
    SentencePair p;
    auto parse_ids = [&](const std::string& s, std::vector<int>& dst) {
      std::istringstream iss(s);
      int v;
      while (iss >> v) {
        if (v < 0 || v >= vocab) {
          throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                   ": token id " + std::to_string(v) +
                                   " outside vocabulary");
        }
        dst.push_back(v);
      }
    };
    parse_ids(line.substr(0, tab), p.src);
    parse_ids(line.substr(tab + 1), p.tgt);
    if (p.src.empty() || p.tgt.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty side");
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

void save_corpus(const ParallelCorpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_split(dir + "/train.tsv", corpus.train);
  write_split(dir + "/valid.tsv", corpus.valid);
  write_split(dir + "/test.tsv", corpus.test);
  std::ofstream vf(dir + "/vocab.txt");
  for (int i = 0; i < corpus.vocab; ++i) vf << i << '\n';
}

ParallelCorpus load_corpus(const std::string& dir) {
  ParallelCorpus c;
  {
    std::ifstream vf(dir + "/vocab.txt");
    if (!vf) throw std::runtime_error("cannot read " + dir + "/vocab.txt");
    std::string line;
    int n = 0;
    while (std::getline(vf, line)) {
      if (!line.empty()) ++n;
    }
    c.vocab = n;
  }
  c.train = read_split(dir + "/train.tsv", c.vocab);
  c.valid = read_split(dir + "/valid.tsv", c.vocab);
  c.test = read_split(dir + "/test.tsv", c.vocab);
  return c;
}

// ---------------------------------------------------------------------------
// Series panels
// ---------------------------------------------------------------------------

int SeriesPanel::split_of_day(int day) const {
  if (day < train_days) return 0;
  if (day < train_days + valid_days) return 1;
  return 2;
}

int SeriesPanel::split_begin(int split) const {
  switch (split) {
    case 0: return 0;
    case 1: return train_days;
    default: return train_days + valid_days;
  }
}

int SeriesPanel::split_end(int split) const {
  switch (split) {
    case 0: return train_days;
    case 1: return train_days + valid_days;
    default: return days;
  }
}

bool SeriesPanel::label_defined(int inst, int day, int k) const {
  if (inst < 0 || inst >= instruments() || k < 1) return false;
  if (day < 0 || day + k >= days) return false;
  return split_of_day(day) == split_of_day(day + k);
}

double SeriesPanel::label(int inst, int day, int k) const {
  if (!label_defined(inst, day, k)) {
    throw std::out_of_range("label undefined for inst " + std::to_string(inst) +
                            " day " + std::to_string(day) + " k " + std::to_string(k));
  }
  const auto& r = records[static_cast<size_t>(inst)];
  double p_prev = r[static_cast<size_t>(day + k - 1)].close;
  double p_next = r[static_cast<size_t>(day + k)].close;
  return p_next / p_prev - 1.0;
}

double SeriesPanel::oracle_prediction(int inst, int day, int k) const {
  if (!gen) throw std::runtime_error("oracle_prediction: panel has no generator state");
  int lag = gen->horizon - k;
  if (lag < 0 || day - lag < 0) return 0.0;  // signal not observable yet
  double s = signal[static_cast<size_t>(inst)][static_cast<size_t>(day - lag)];
  return std::exp(gen->beta * s) - 1.0;
}

namespace {

void normalize_features(SeriesPanel& p) {
  p.features.assign(static_cast<size_t>(p.instruments()), {});
  for (int i = 0; i < p.instruments(); ++i) {
    auto& rec = p.records[static_cast<size_t>(i)];
    auto& feat = p.features[static_cast<size_t>(i)];
    feat.resize(rec.size());
    std::array<double, 5> mean{}, sd{};
    auto raw = [](const DailyRecord& r, int f) {
      switch (f) {
        case 0: return r.open;
        case 1: return r.close;
        case 2: return r.high;
        case 3: return r.low;
        default: return r.volume;
      }
    };
    int n = std::max(1, p.train_days);
    for (int d = 0; d < n; ++d)
      for (int f = 0; f < 5; ++f) mean[static_cast<size_t>(f)] += raw(rec[static_cast<size_t>(d)], f);
    for (auto& m : mean) m /= n;
    for (int d = 0; d < n; ++d)
      for (int f = 0; f < 5; ++f) {
        double dv = raw(rec[static_cast<size_t>(d)], f) - mean[static_cast<size_t>(f)];
        sd[static_cast<size_t>(f)] += dv * dv;
      }
    for (auto& s : sd) s = std::sqrt(s / n);
    for (size_t d = 0; d < rec.size(); ++d)
      for (int f = 0; f < 5; ++f) {
        double denom = sd[static_cast<size_t>(f)] > 1e-12 ? sd[static_cast<size_t>(f)] : 1.0;
        feat[d][static_cast<size_t>(f)] = (raw(rec[d], f) - mean[static_cast<size_t>(f)]) / denom;
      }
  }
}

void apply_split(SeriesPanel& p, double train_frac, double valid_frac) {
  if (train_frac <= 0 || valid_frac < 0 || train_frac + valid_frac >= 1.0 + 1e-12) {
    throw std::invalid_argument("series split fractions invalid");
  }
  p.train_days = std::max(1, static_cast<int>(std::floor(p.days * train_frac)));
  p.valid_days = static_cast<int>(std::floor(p.days * valid_frac));
  if (p.train_days + p.valid_days > p.days) {
    throw std::invalid_argument("series split fractions exceed available days");
  }
}

}  // namespace

SeriesPanel make_synthetic_series(uint64_t seed, int instruments, int days,
                                  int horizon_signal, const SeriesGenParams* params,
                                  double train_frac, double valid_frac) {
  if (instruments < 1 || days < 10) {
    throw std::invalid_argument("make_synthetic_series: need >=1 instrument, >=10 days");
  }
  if (horizon_signal < 1) throw std::invalid_argument("horizon_signal must be >= 1");
  SeriesGenParams gp = params ? *params : SeriesGenParams{};
  gp.horizon = horizon_signal;

  SeriesPanel p;
  p.days = days;
  p.gen = gp;
  auto rng = Rng::substream(seed, "synthetic-series");
  for (int i = 0; i < instruments; ++i) {
    p.symbols.push_back("SYN" + std::to_string(i));
    std::vector<double> sig(static_cast<size_t>(days));
    double s = rng.normal();
    double innov = std::sqrt(std::max(0.0, 1.0 - gp.rho * gp.rho));
    for (int t = 0; t < days; ++t) {
      if (t > 0) s = gp.rho * s + innov * rng.normal();
      sig[static_cast<size_t>(t)] = s;
    }
    std::vector<DailyRecord> rec(static_cast<size_t>(days));
    double log_p = std::log(100.0) + 0.05 * rng.normal();
    for (int t = 0; t < days; ++t) {
      double prev_close = std::exp(log_p);
      if (t > 0) {
        int src = t - gp.horizon;
        double drive = src >= 0 ? sig[static_cast<size_t>(src)] : 0.0;
        log_p += gp.beta * drive + gp.noise * rng.normal();
      }
      double close = std::exp(log_p);
      double wiggle = gp.noise * 0.5;
      double open = t == 0 ? close : prev_close * std::exp(wiggle * rng.normal());
      double hi = std::max(open, close) * std::exp(std::fabs(wiggle * rng.normal()));
      double lo = std::min(open, close) * std::exp(-std::fabs(wiggle * rng.normal()));
      double vol = gp.base_volume * std::exp(sig[static_cast<size_t>(t)]);
      rec[static_cast<size_t>(t)] = {20000 + t, open, close, hi, lo, vol};
    }
    p.records.push_back(std::move(rec));
    p.signal.push_back(std::move(sig));
  }
  apply_split(p, train_frac, valid_frac);
  normalize_features(p);
  return p;
}

namespace {

const std::array<std::string, 7> kCsvHeader = {"date", "symbol", "open", "close",
                                               "high", "low", "volume"};

}  // namespace

SeriesPanel ingest_csv(const std::string& path, double train_frac, double valid_frac) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("ingest_csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("ingest_csv: empty file");
  {
    std::istringstream hs(line);
    std::string col;
    size_t idx = 0;
    while (std::getline(hs, col, ',')) {
      if (idx >= kCsvHeader.size() || col != kCsvHeader[idx]) {
        throw std::runtime_error("ingest_csv: unknown or misplaced column '" + col +
                                 "' in header");
      }
      ++idx;
    }
    if (idx != kCsvHeader.size()) {
      throw std::runtime_error("ingest_csv: header has " + std::to_string(idx) +
                               " columns, expected 7");
    }
  }

  std::map<std::string, std::vector<DailyRecord>> by_symbol;
  std::vector<std::string> symbol_order;
  size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::array<std::string, 7> fields;
    size_t idx = 0;
    while (std::getline(ls, field, ',')) {
      if (idx >= 7) {
        throw std::runtime_error("ingest_csv: line " + std::to_string(lineno) +
                                 ": too many columns");
      }
      fields[idx++] = field;
    }
    if (idx != 7) {
      throw std::runtime_error("ingest_csv: line " + std::to_string(lineno) +
                               ": expected 7 columns, got " + std::to_string(idx));
    }
    DailyRecord r;
    auto num = [&](int col) {
      try {
        size_t pos = 0;
        double v = std::stod(fields[static_cast<size_t>(col)], &pos);
        if (pos != fields[static_cast<size_t>(col)].size()) throw std::invalid_argument("trail");
        return v;
      } catch (const std::exception&) {
        throw std::runtime_error("ingest_csv: line " + std::to_string(lineno) +
                                 ", column '" + kCsvHeader[static_cast<size_t>(col)] +
                                 "': malformed value '" + fields[static_cast<size_t>(col)] + "'");
      }
    };
    // date accepted as plain integer or YYYY-MM-DD
    {
      std::string d = fields[0];
      std::string compact;
      for (char c : d) {
        if (c == '-') continue;
        if (c < '0' || c > '9') {
          throw std::runtime_error("ingest_csv: line " + std::to_string(lineno) +
                                   ", column 'date': malformed value '" + d + "'");
        }
        compact += c;
      }
      if (compact.empty()) {
        throw std::runtime_error("ingest_csv: line " + std::to_string(lineno) +
                                 ", column 'date': empty");
      }
      r.date = std::stoi(compact);
    }
    r.open = num(2);
    r.close = num(3);
    r.high = num(4);
    r.low = num(5);
    r.volume = num(6);
    for (double v : {r.open, r.close, r.high, r.low}) {
      if (v <= 0.0) {
        throw std::runtime_error("ingest_csv: line " + std::to_string(lineno) +
                                 ": non-positive price");
      }
    }
    auto& vec = by_symbol[fields[1]];
    if (vec.empty()) symbol_order.push_back(fields[1]);
    if (!vec.empty() && vec.back().date >= r.date) {
      throw std::runtime_error("ingest_csv: line " + std::to_string(lineno) +
                               ": dates not strictly increasing for symbol " + fields[1]);
    }
    vec.push_back(r);
  }
  if (by_symbol.empty()) throw std::runtime_error("ingest_csv: no data rows");

  SeriesPanel p;
  const auto& first = by_symbol.at(symbol_order.front());
  for (const auto& sym : symbol_order) {
    const auto& rec = by_symbol.at(sym);
    if (rec.size() != first.size()) {
      throw std::runtime_error("ingest_csv: symbol " + sym +
                               " has a different date grid than " + symbol_order.front());
    }
    for (size_t d = 0; d < rec.size(); ++d) {
      if (rec[d].date != first[d].date) {
        throw std::runtime_error("ingest_csv: symbol " + sym +
                                 " has a different date grid than " + symbol_order.front());
      }
    }
    p.symbols.push_back(sym);
    p.records.push_back(rec);
  }
  p.days = static_cast<int>(first.size());
  apply_split(p, train_frac, valid_frac);
  normalize_features(p);
  return p;
}

void save_series_csv(const SeriesPanel& panel, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "date,symbol,open,close,high,low,volume\n";
  os.precision(12);
  for (int i = 0; i < panel.instruments(); ++i) {
    for (const auto& r : panel.records[static_cast<size_t>(i)]) {
      os << r.date << ',' << panel.symbols[static_cast<size_t>(i)] << ',' << r.open
         << ',' << r.close << ',' << r.high << ',' << r.low << ',' << r.volume << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

TransBatch assemble_batch(const std::vector<SentencePair>& data,
                          const std::vector<std::pair<size_t, TaskSpec>>& assignments) {
  TransBatch b;
  b.items.reserve(assignments.size());
  for (const auto& [idx, task] : assignments) {
    if (idx >= data.size()) throw std::out_of_range("assemble_batch: example index");
    if (task.family != Family::latency) {
      throw std::invalid_argument("assemble_batch: latency task expected");
    }
    b.items.push_back({&data[idx], task});
  }
  return b;
}

SeriesBatch assemble_batch(const SeriesPanel& panel,
                           const std::vector<std::pair<SeriesExample, TaskSpec>>& assignments) {
  SeriesBatch b;
  b.items.reserve(assignments.size());
  for (const auto& [ex, task] : assignments) {
    if (task.family != Family::horizon) {
      throw std::invalid_argument("assemble_batch: horizon task expected");
    }
    if (!panel.label_defined(ex.inst, ex.day, task.sigma())) {
      ++b.skipped;
      continue;
    }
    b.items.push_back({ex, task, panel.label(ex.inst, ex.day, task.sigma())});
  }
  return b;
}

std::vector<SeriesExample> enumerate_examples(const SeriesPanel& panel, int window,
                                              int split) {
  std::vector<SeriesExample> out;
  int lo = std::max(panel.split_begin(split), window - 1);
  int hi = panel.split_end(split);
  for (int i = 0; i < panel.instruments(); ++i)
    for (int d = lo; d < hi; ++d) out.push_back({i, d});
  return out;
}

}  // namespace tcts::tasks
