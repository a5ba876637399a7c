#include "tcts/scheduler.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tcts/models.hpp"

namespace tcts::sched {

FeatureMask parse_feature_mask(const std::string& spec) {
  FeatureMask m;
  std::istringstream is(spec);
  std::string part;
  while (std::getline(is, part, ',')) {
    // tolerate whitespace
    std::string p;
    for (char c : part) {
      if (!std::isspace(static_cast<unsigned char>(c))) p += c;
    }
    if (p.empty()) continue;
    if (p == "i") m.drop_lengths = true;
    else if (p == "ii") m.drop_train_loss = true;
    else if (p == "iii") m.drop_valid_loss = true;
    else if (p == "iv") m.drop_progress = true;
    else throw std::invalid_argument("feature mask: unknown group '" + p + "'");
  }
  return m;
}

std::string feature_mask_to_string(const FeatureMask& m) {
  std::string out;
  auto app = [&out](const char* g) {
    if (!out.empty()) out += ',';
    out += g;
  };
  if (m.drop_lengths) app("i");
  if (m.drop_train_loss) app("ii");
  if (m.drop_valid_loss) app("iii");
  if (m.drop_progress) app("iv");
  return out;
}

LatencyFeatures::LatencyFeatures(double mean_src_len, double mean_tgt_len,
                                 int64_t total_steps, FeatureMask mask)
    : mean_src_(mean_src_len), mean_tgt_(mean_tgt_len), total_steps_(total_steps),
      mask_(mask) {
  if (mean_src_ <= 0 || mean_tgt_ <= 0 || total_steps_ < 1) {
    throw std::invalid_argument("LatencyFeatures: bad corpus statistics");
  }
}

std::vector<double> LatencyFeatures::extract(size_t src_len, size_t tgt_len,
                                             double main_task_loss,
                                             int64_t step) const {
  std::vector<double> f;
  f.reserve(7);
  if (!mask_.drop_lengths) {
    f.push_back(static_cast<double>(src_len) / mean_src_);
    f.push_back(static_cast<double>(tgt_len) / mean_tgt_);
  }
  if (!mask_.drop_train_loss) {
    f.push_back(main_task_loss);
    f.push_back(train_count_ ? train_sum_ / static_cast<double>(train_count_) : 0.0);
  }
  if (!mask_.drop_valid_loss) {
    f.push_back(prev_val_);
    f.push_back(val_count_ ? val_sum_ / static_cast<double>(val_count_) : 0.0);
  }
  if (!mask_.drop_progress) {
    f.push_back(static_cast<double>(step) / static_cast<double>(total_steps_));
  }
  return f;
}

void LatencyFeatures::record_train_loss(double sentence_loss) {
  train_sum_ += sentence_loss;
  ++train_count_;
}

void LatencyFeatures::record_validation(double validation_loss) {
  prev_val_ = validation_loss;
  val_sum_ += validation_loss;
  ++val_count_;
}

HorizonFeatures::HorizonFeatures(int n_tasks, int window)
    : n_tasks_(n_tasks), window_(window) {
  if (n_tasks < 1 || window < 2) throw std::invalid_argument("HorizonFeatures: bad config");
}

std::vector<double> HorizonFeatures::extract(const tasks::SeriesPanel& panel,
                                             const tasks::SeriesExample& ex) const {
  std::vector<double> f;
  f.reserve(static_cast<size_t>(dim()));
  const auto& last =
      panel.features[static_cast<size_t>(ex.inst)][static_cast<size_t>(ex.day)];
  f.insert(f.end(), last.begin(), last.end());
  // close-return mean/std inside the window
  double mean = 0.0, var = 0.0;
  int n = 0;
  const auto& rec = panel.records[static_cast<size_t>(ex.inst)];
  for (int d = ex.day - window_ + 2; d <= ex.day; ++d) {
    double r = rec[static_cast<size_t>(d)].close / rec[static_cast<size_t>(d - 1)].close - 1.0;
    mean += r;
    ++n;
  }
  mean /= std::max(1, n);
  for (int d = ex.day - window_ + 2; d <= ex.day; ++d) {
    double r = rec[static_cast<size_t>(d)].close / rec[static_cast<size_t>(d - 1)].close - 1.0;
    var += (r - mean) * (r - mean);
  }
  var /= std::max(1, n);
  f.push_back(mean);
  f.push_back(std::sqrt(var));
  f.push_back(prev_loss_);
  f.push_back(prev_forecast_);
  for (int k = 1; k <= n_tasks_; ++k) {
    f.push_back(panel.label_defined(ex.inst, ex.day, k) ? panel.label(ex.inst, ex.day, k)
                                                        : 0.0);
  }
  return f;
}

void HorizonFeatures::record_iteration(double mean_loss, double mean_forecast) {
  prev_loss_ = mean_loss;
  prev_forecast_ = mean_forecast;
}

Policy::Policy(PolicyConfig cfg) : cfg_(cfg) {
  if (cfg.input_dim < 1 || cfg.hidden < 1 || cfg.n_tasks < 1) {
    throw std::invalid_argument("Policy: bad config");
  }
  auto S = [](int a, int b) {
    return ad::Shape{static_cast<size_t>(a), static_cast<size_t>(b)};
  };
  w1_ = ad::Tensor::zeros(S(cfg.input_dim, cfg.hidden));
  b1_ = ad::Tensor::zeros(S(1, cfg.hidden));
  w2_ = ad::Tensor::zeros(S(cfg.hidden, cfg.n_tasks));
  b2_ = ad::Tensor::zeros(S(1, cfg.n_tasks));
}

void Policy::init_params(Rng& rng) {
  auto fill = [&rng](const ad::TensorPtr& t, int fan_in) {
    double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t->values()) v = rng.uniform(-r, r);
  };
  fill(w1_, cfg_.input_dim);
  fill(w2_, cfg_.hidden);
}

std::vector<double> Policy::distribution(const std::vector<double>& feature) const {
  if (static_cast<int>(feature.size()) != cfg_.input_dim) {
    throw std::invalid_argument("policy: feature dim " + std::to_string(feature.size()) +
                                " does not match configured " +
                                std::to_string(cfg_.input_dim));
  }
  for (double v : feature) {
    if (!std::isfinite(v)) throw std::invalid_argument("policy: non-finite feature");
  }
  const size_t H = static_cast<size_t>(cfg_.hidden), T = static_cast<size_t>(cfg_.n_tasks);
  std::vector<double> h(H);
  for (size_t j = 0; j < H; ++j) {
    double a = b1_->values()[j];
    for (size_t i = 0; i < feature.size(); ++i) a += feature[i] * w1_->values()[i * H + j];
    h[j] = cfg_.act == Activation::tanh ? std::tanh(a) : (a > 0 ? a : 0.0);
  }
  std::vector<double> logits(T);
  for (size_t j = 0; j < T; ++j) {
    double a = b2_->values()[j];
    for (size_t i = 0; i < H; ++i) a += h[i] * w2_->values()[i * T + j];
    logits[j] = a;
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  std::vector<double> p(T);
  for (size_t j = 0; j < T; ++j) p[j] = std::exp(logits[j] - mx) / z;
  return p;
}

size_t Policy::sample(const std::vector<double>& feature, Rng& rng) {
  auto p = distribution(feature);
  size_t a = rng.sample_discrete(p);
  buffer_.emplace_back(feature, a);
  return a;
}

void Policy::reinforce_update(double reward, double lr, double clip_norm) {
  if (buffer_.empty()) {
    ++empty_updates_;
    return;
  }
  const size_t N = buffer_.size();
  const size_t D = static_cast<size_t>(cfg_.input_dim), T = static_cast<size_t>(cfg_.n_tasks);
  std::vector<double> fmat(N * D), mask(N * T, 0.0);
  for (size_t i = 0; i < N; ++i) {
    std::copy(buffer_[i].first.begin(), buffer_[i].first.end(), fmat.begin() + static_cast<long>(i * D));
    mask[i * T + buffer_[i].second] = 1.0;
  }
  ad::Graph g;
  auto F = ad::Tensor::from({N, D}, std::move(fmat));
  F->is_const = true;
  auto M = ad::Tensor::from({N, T}, std::move(mask));
  M->is_const = true;
  auto hidden_pre = g.linear(F, w1_, b1_);
  auto hidden = cfg_.act == Activation::tanh ? g.tanh_(hidden_pre) : g.relu_(hidden_pre);
  auto logits = g.linear(hidden, w2_, b2_);
  auto logp = g.log_softmax(logits);
  // descent on -reward * sum log P(action) == ascent on the REINFORCE objective
  auto objective = g.scale(g.sum(g.mul(logp, M)), -reward);
  g.backward(objective);
  ad::sgd_step(params(), lr, clip_norm);
  buffer_.clear();
}

std::map<std::string, ad::TensorPtr> Policy::named_params(const std::string& prefix) const {
  return {{prefix + "w1", w1_}, {prefix + "b1", b1_},
          {prefix + "w2", w2_}, {prefix + "b2", b2_}};
}

void Policy::load_params(const std::map<std::string, ad::TensorPtr>& named,
                         const std::string& prefix) {
  for (auto& [name, dst] : named_params(prefix)) {
    auto it = named.find(name);
    if (it == named.end()) throw std::runtime_error("checkpoint missing " + name);
    if (it->second->shape() != dst->shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    }
    dst->values() = it->second->values();
  }
}

double shaped_reward(double r_e, double r_prev) { return r_e - r_prev; }

void write_histogram_csv(const std::string& path,
                         const std::vector<std::vector<double>>& per_episode_freq) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "episode,task_index,frequency\n";
  os.precision(10);
  for (size_t e = 0; e < per_episode_freq.size(); ++e) {
    for (size_t t = 0; t < per_episode_freq[e].size(); ++t) {
      os << (e + 1) << ',' << (t + 1) << ',' << per_episode_freq[e][t] << '\n';
    }
  }
}

std::vector<std::vector<double>> read_histogram_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(is, line);  // header
  std::vector<std::vector<double>> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string e, t, f;
    std::getline(ls, e, ',');
    std::getline(ls, t, ',');
    std::getline(ls, f, ',');
    size_t ep = static_cast<size_t>(std::stoul(e));
    size_t ti = static_cast<size_t>(std::stoul(t));
    if (out.size() < ep) out.resize(ep);
    if (out[ep - 1].size() < ti) out[ep - 1].resize(ti, 0.0);
    out[ep - 1][ti - 1] = std::stod(f);
  }
  return out;
}

}  // namespace tcts::sched
