#include "tcts/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tcts::models {

using ad::Tensor;

TensorPtr attn(Graph& g, const TensorPtr& q, const TensorPtr& keys,
               const TensorPtr& values, const TensorPtr& wq, const TensorPtr& wk,
               const TensorPtr& wv, std::vector<double>* alpha_out) {
  if (keys->size() == 0 || keys->rank() != 2) {
    throw std::invalid_argument("attn: empty or non-matrix key set");
  }
  if (keys->rows() != values->rows()) {
    throw std::invalid_argument("attn: |K| != |V|");
  }
  auto kp = g.matmul(keys, wk);
  auto vp = g.matmul(values, wv);
  return g.attn_prefix(q, kp, vp, wq, keys->rows(), alpha_out);
}

namespace {

TensorPtr uniform_init(Rng& rng, ad::Shape shape, double r) {
  std::vector<double> v(shape[0] * (shape.size() > 1 ? shape[1] : 1));
  for (auto& x : v) x = rng.uniform(-r, r);
  return Tensor::from(std::move(shape), std::move(v));
}

TensorPtr const_zeros(ad::Shape shape) {
  auto t = Tensor::zeros(std::move(shape));
  t->is_const = true;
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// TransductionModel
// ---------------------------------------------------------------------------

namespace {

// Read-offset conditioning: one-hot of g(t)-t clamped to [-8, 7]. Plays the
// role of a task embedding; the shared head keeps one extraction map per
// lookahead depth.
TensorPtr offset_onehot(int glen, int t) {
  auto v = Tensor::zeros({1, kOffsetDims});
  int off = std::clamp(glen - t, -8, 7) + 8;
  v->values()[static_cast<size_t>(off)] = 1.0;
  v->is_const = true;
  return v;
}

// Head input: decoder state, attention context, the last kFrontierSlots
// visible recurrent states (zero rows where the prefix is shorter), and the
// read-offset one-hot.
TensorPtr head_features(Graph& g, const TensorPtr& d, const TensorPtr& c,
                        const TensorPtr& rec_padded, int glen, int t) {
  std::vector<size_t> slots(kFrontierSlots);
  for (size_t j = 0; j < kFrontierSlots; ++j) {
    // padded row index: kFrontierSlots + (glen-1-j); never negative
    slots[j] = kFrontierSlots + static_cast<size_t>(glen) - 1 - j;
  }
  auto window = g.rows_select(rec_padded, slots);
  return g.concat_flat({d, c, window, offset_onehot(glen, t)});
}

}  // namespace

TransductionModel::TransductionModel(int src_vocab, int tgt_vocab, int embed,
                                     int hidden)
    : src_vocab_(src_vocab), tgt_vocab_(tgt_vocab), embed_(embed), hidden_(hidden) {
  if (src_vocab < 1 || tgt_vocab < 3 || embed < 1 || hidden < 1) {
    throw std::invalid_argument("TransductionModel: bad dimensions");
  }
  auto S = [](int a, int b) { return ad::Shape{static_cast<size_t>(a), static_cast<size_t>(b)}; };
  src_emb_ = Tensor::zeros(S(src_vocab, embed));
  tgt_emb_ = Tensor::zeros(S(tgt_vocab, embed));
  enc_wx_ = Tensor::zeros(S(embed, 3 * hidden));
  enc_wh_ = Tensor::zeros(S(hidden, 3 * hidden));
  enc_bx_ = Tensor::zeros(S(1, 3 * hidden));
  enc_bh_ = Tensor::zeros(S(1, 3 * hidden));
  enc_wq_ = Tensor::zeros(S(hidden, hidden));
  enc_wk_ = Tensor::zeros(S(hidden, hidden));
  enc_wv_ = Tensor::zeros(S(hidden, hidden));
  dec_wx_ = Tensor::zeros(S(embed, 3 * hidden));
  dec_wh_ = Tensor::zeros(S(hidden, 3 * hidden));
  dec_bx_ = Tensor::zeros(S(1, 3 * hidden));
  dec_bh_ = Tensor::zeros(S(1, 3 * hidden));
  dec_wq_ = Tensor::zeros(S(hidden, hidden));
  dec_wk_ = Tensor::zeros(S(hidden, hidden));
  dec_wv_ = Tensor::zeros(S(hidden, hidden));
  out_w_ = Tensor::zeros(S((2 + kFrontierSlots) * hidden + kOffsetDims, tgt_vocab));
  out_b_ = Tensor::zeros(S(1, tgt_vocab));
}

void TransductionModel::init_params(Rng& rng) {
  auto fill = [&rng](const TensorPtr& t, size_t fan_in) {
    double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t->values()) v = rng.uniform(-r, r);
  };
  fill(src_emb_, static_cast<size_t>(embed_));
  fill(tgt_emb_, static_cast<size_t>(embed_));
  fill(enc_wx_, static_cast<size_t>(embed_));
  fill(enc_wh_, static_cast<size_t>(hidden_));
  fill(enc_wq_, static_cast<size_t>(hidden_));
  fill(enc_wk_, static_cast<size_t>(hidden_));
  fill(enc_wv_, static_cast<size_t>(hidden_));
  fill(dec_wx_, static_cast<size_t>(embed_));
  fill(dec_wh_, static_cast<size_t>(hidden_));
  fill(dec_wq_, static_cast<size_t>(hidden_));
  fill(dec_wk_, static_cast<size_t>(hidden_));
  fill(dec_wv_, static_cast<size_t>(hidden_));
  for (auto& v : dec_wv_->values()) v *= 0.25;  // start with a quiet context
  fill(out_w_, static_cast<size_t>((2 + kFrontierSlots) * hidden_ + kOffsetDims));
  // biases stay zero
}

std::vector<TensorPtr> TransductionModel::params() const {
  return {src_emb_, tgt_emb_, enc_wx_, enc_wh_, enc_bx_, enc_bh_,
          enc_wq_,  enc_wk_,  enc_wv_, dec_wx_, dec_wh_, dec_bx_,
          dec_bh_,  dec_wq_,  dec_wk_, dec_wv_, out_w_,  out_b_};
}

std::map<std::string, TensorPtr> TransductionModel::named_params(
    const std::string& prefix) const {
  return {{prefix + "src_emb", src_emb_}, {prefix + "tgt_emb", tgt_emb_},
          {prefix + "enc_wx", enc_wx_},   {prefix + "enc_wh", enc_wh_},
          {prefix + "enc_bx", enc_bx_},   {prefix + "enc_bh", enc_bh_},
          {prefix + "enc_wq", enc_wq_},   {prefix + "enc_wk", enc_wk_},
          {prefix + "enc_wv", enc_wv_},   {prefix + "dec_wx", dec_wx_},
          {prefix + "dec_wh", dec_wh_},   {prefix + "dec_bx", dec_bx_},
          {prefix + "dec_bh", dec_bh_},   {prefix + "dec_wq", dec_wq_},
          {prefix + "dec_wk", dec_wk_},   {prefix + "dec_wv", dec_wv_},
          {prefix + "out_w", out_w_},     {prefix + "out_b", out_b_}};
}

void TransductionModel::load_params(const std::map<std::string, TensorPtr>& named,
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

TransductionModel::Encoded TransductionModel::encode_incremental(
    Graph& g, const std::vector<int>& x, bool record_alphas) const {
  if (x.empty()) throw std::invalid_argument("encode: empty input");
  std::vector<size_t> idx;
  idx.reserve(x.size());
  for (int t : x) {
    if (t < 0 || t >= src_vocab_) {
      throw std::invalid_argument("encode: token id " + std::to_string(t) +
                                  " outside vocabulary of size " +
                                  std::to_string(src_vocab_));
    }
    idx.push_back(static_cast<size_t>(t));
  }
  const size_t L = x.size();
  auto emb = g.rows_select(src_emb_, idx);
  std::vector<TensorPtr> rec(L);
  TensorPtr h = const_zeros({1, static_cast<size_t>(hidden_)});
  for (size_t t = 0; t < L; ++t) {
    auto xt = g.slice(emb, t, 1, 0, static_cast<size_t>(embed_));
    h = g.gru_cell(xt, h, enc_wx_, enc_wh_, enc_bx_, enc_bh_);
    rec[t] = h;
  }
  auto states_rec = g.stack_rows(rec);
  auto kp = g.matmul(states_rec, enc_wk_);
  auto vp = g.matmul(states_rec, enc_wv_);
  Encoded enc;
  enc.recurrent = states_rec;
  {
    auto zero_row = const_zeros({1, static_cast<size_t>(hidden_)});
    std::vector<TensorPtr> padded(kFrontierSlots, zero_row);
    padded.insert(padded.end(), rec.begin(), rec.end());
    enc.rec_padded = g.stack_rows(padded);
  }
  if (record_alphas) enc.alphas.resize(L);
  std::vector<TensorPtr> attended(L);
  for (size_t t = 0; t < L; ++t) {
    attended[t] = g.attn_prefix(rec[t], kp, vp, enc_wq_, t + 1,
                                record_alphas ? &enc.alphas[t] : nullptr);
  }
  enc.states = g.stack_rows(attended);
  enc.keys = g.matmul(enc.states, dec_wk_);
  enc.values = g.matmul(enc.states, dec_wv_);
  return enc;
}

TensorPtr TransductionModel::waitk_loss(Graph& g, const std::vector<int>& x,
                                        const std::vector<int>& y, int wait_m) const {
  if (wait_m < 1) throw std::invalid_argument("waitk_loss: m must be >= 1");
  if (y.empty()) throw std::invalid_argument("waitk_loss: empty target");
  auto enc = encode_incremental(g, x);
  const size_t L = x.size(), T = y.size();
  std::vector<size_t> targets(T);
  for (size_t t = 0; t < T; ++t) {
    if (y[t] < 0 || y[t] >= tgt_vocab_) {
      throw std::invalid_argument("waitk_loss: target id outside vocabulary");
    }
    targets[t] = static_cast<size_t>(y[t]);
  }
  TensorPtr d = const_zeros({1, static_cast<size_t>(hidden_)});
  int prev = bos();
  std::vector<TensorPtr> rows(T);
  for (size_t t = 1; t <= T; ++t) {
    auto pe = g.rows_select(tgt_emb_, {static_cast<size_t>(prev)});
    d = g.gru_cell(pe, d, dec_wx_, dec_wh_, dec_bx_, dec_bh_);
    size_t glen = std::min(t + static_cast<size_t>(wait_m) - 1, L);
    auto c = g.attn_prefix(d, enc.keys, enc.values, dec_wq_, glen);
    rows[t - 1] = head_features(g, d, c, enc.rec_padded, static_cast<int>(glen),
                                static_cast<int>(t));
    prev = y[t - 1];
  }
  auto feats = g.stack_rows(rows);
  auto logits = g.linear(feats, out_w_, out_b_);
  return g.cross_entropy_sum(logits, targets);
}

std::vector<std::vector<double>> TransductionModel::cross_attention_weights(
    const std::vector<int>& x, const std::vector<int>& y, int wait_m) const {
  if (wait_m < 1) throw std::invalid_argument("cross_attention_weights: m >= 1");
  Graph g;
  auto enc = encode_incremental(g, x);
  const size_t L = x.size(), T = y.size();
  std::vector<std::vector<double>> alphas(T);
  TensorPtr d = const_zeros({1, static_cast<size_t>(hidden_)});
  int prev = bos();
  for (size_t t = 1; t <= T; ++t) {
    auto pe = g.rows_select(tgt_emb_, {static_cast<size_t>(prev)});
    d = g.gru_cell(pe, d, dec_wx_, dec_wh_, dec_bx_, dec_bh_);
    size_t glen = std::min(t + static_cast<size_t>(wait_m) - 1, L);
    (void)g.attn_prefix(d, enc.keys, enc.values, dec_wq_, glen, &alphas[t - 1]);
    prev = y[t - 1];
  }
  return alphas;
}

TransductionModel::DecodeResult TransductionModel::decode_incremental(
    const std::vector<int>& x, int k, int beam) const {
  if (k < 1 || beam < 1) throw std::invalid_argument("decode: k and beam must be >= 1");
  Graph g;
  auto enc = encode_incremental(g, x);
  const int L = static_cast<int>(x.size());
  const int cap = 2 * L + 8;

  struct Hyp {
    TensorPtr d;
    int prev;
    std::vector<int> tokens;
    double logp = 0.0;
    bool done = false;
    bool full_read = false;
  };

  auto step_scores = [&](Hyp& h, int t) {
    auto pe = g.rows_select(tgt_emb_, {static_cast<size_t>(h.prev)});
    auto d = g.gru_cell(pe, h.d, dec_wx_, dec_wh_, dec_bx_, dec_bh_);
    size_t glen = static_cast<size_t>(std::min(t + k - 1, L));
    auto c = g.attn_prefix(d, enc.keys, enc.values, dec_wq_, glen);
    auto logits = g.linear(
        head_features(g, d, c, enc.rec_padded, static_cast<int>(glen), t), out_w_,
        out_b_);
    auto ls = g.log_softmax(logits);
    h.d = d;
    return ls->values();
  };

  Hyp seed{const_zeros({1, static_cast<size_t>(hidden_)}), bos(), {}, 0.0, false, false};

  // Greedy phase: one argmax emission per step while the source is still
  // being read. EOS is never available here (the full source is unread).
  int t = 1;
  for (; t <= L - k && static_cast<int>(seed.tokens.size()) < cap; ++t) {
    auto scores = step_scores(seed, t);
    int best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int w = 0; w < tgt_vocab_; ++w) {
      if (w == eos()) continue;
      if (scores[static_cast<size_t>(w)] > best_v) {
        best_v = scores[static_cast<size_t>(w)];
        best = w;
      }
    }
    seed.tokens.push_back(best);
    seed.logp += best_v;
    seed.prev = best;
  }

  // Beam phase over the fully read source.
  std::vector<Hyp> beams = {std::move(seed)};
  while (true) {
    bool all_done = true;
    for (const auto& h : beams) all_done &= h.done;
    if (all_done) break;
    std::vector<Hyp> candidates;
    for (auto& h : beams) {
      if (h.done) {
        candidates.push_back(std::move(h));
        continue;
      }
      if (static_cast<int>(h.tokens.size()) >= cap) {
        h.done = true;
        candidates.push_back(std::move(h));
        continue;
      }
      int step_t = static_cast<int>(h.tokens.size()) + 1;
      auto scores = step_scores(h, step_t);
      bool allow_eos = h.full_read;
      std::vector<int> order(static_cast<size_t>(tgt_vocab_));
      for (int w = 0; w < tgt_vocab_; ++w) order[static_cast<size_t>(w)] = w;
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
      });
      int taken = 0;
      for (int w : order) {
        if (w == eos() && !allow_eos) continue;
        Hyp nh = h;
        nh.logp += scores[static_cast<size_t>(w)];
        if (w == eos()) {
          nh.done = true;
        } else {
          nh.tokens.push_back(w);
          nh.prev = w;
          int emitted_t = static_cast<int>(nh.tokens.size());
          nh.full_read |= std::min(emitted_t + k - 1, L) == L;
        }
        candidates.push_back(std::move(nh));
        if (++taken == beam) break;
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Hyp& a, const Hyp& b) { return a.logp > b.logp; });
    if (static_cast<int>(candidates.size()) > beam) {
      candidates.resize(static_cast<size_t>(beam));
    }
    beams = std::move(candidates);
  }

  const Hyp* best = &beams.front();
  for (const auto& h : beams) {
    if (h.logp > best->logp) best = &h;
  }
  DecodeResult res;
  res.tokens = best->tokens;
  res.logprob = best->logp;
  res.trace = metrics::waitk_trace(k, L, static_cast<int>(best->tokens.size()));
  return res;
}

// ---------------------------------------------------------------------------
// ForecastModel
// ---------------------------------------------------------------------------

ForecastModel::ForecastModel(int window, int hidden, int layers, int heads)
    : window_(window), hidden_(hidden), layers_(layers), heads_(heads) {
  if (window < 1 || hidden < 1 || layers < 1 || heads < 1) {
    throw std::invalid_argument("ForecastModel: bad dimensions");
  }
  auto S = [](int a, int b) { return ad::Shape{static_cast<size_t>(a), static_cast<size_t>(b)}; };
  for (int l = 0; l < layers; ++l) {
    int in = l == 0 ? 5 : hidden;
    layers_params_.push_back({Tensor::zeros(S(in, 3 * hidden)),
                              Tensor::zeros(S(hidden, 3 * hidden)),
                              Tensor::zeros(S(1, 3 * hidden)),
                              Tensor::zeros(S(1, 3 * hidden))});
  }
  head_w_ = Tensor::zeros(S(hidden, heads));
  head_b_ = Tensor::zeros(S(1, heads));
}

void ForecastModel::init_params(Rng& rng) {
  auto fill = [&rng](const TensorPtr& t, size_t fan_in) {
    double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t->values()) v = rng.uniform(-r, r);
  };
  for (size_t l = 0; l < layers_params_.size(); ++l) {
    size_t in = l == 0 ? 5 : static_cast<size_t>(hidden_);
    fill(layers_params_[l].wx, in);
    fill(layers_params_[l].wh, static_cast<size_t>(hidden_));
  }
  fill(head_w_, static_cast<size_t>(hidden_));
}

std::vector<TensorPtr> ForecastModel::params() const {
  std::vector<TensorPtr> out;
  for (const auto& l : layers_params_) {
    out.push_back(l.wx);
    out.push_back(l.wh);
    out.push_back(l.bx);
    out.push_back(l.bh);
  }
  out.push_back(head_w_);
  out.push_back(head_b_);
  return out;
}

std::map<std::string, TensorPtr> ForecastModel::named_params(
    const std::string& prefix) const {
  std::map<std::string, TensorPtr> out;
  for (size_t l = 0; l < layers_params_.size(); ++l) {
    std::string p = prefix + "gru" + std::to_string(l) + "_";
    out[p + "wx"] = layers_params_[l].wx;
    out[p + "wh"] = layers_params_[l].wh;
    out[p + "bx"] = layers_params_[l].bx;
    out[p + "bh"] = layers_params_[l].bh;
  }
  out[prefix + "head_w"] = head_w_;
  out[prefix + "head_b"] = head_b_;
  return out;
}

void ForecastModel::load_params(const std::map<std::string, TensorPtr>& named,
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

TensorPtr ForecastModel::forward(Graph& g,
                                 const std::vector<std::vector<double>>& windows) const {
  if (windows.empty()) throw std::invalid_argument("forecast: empty batch");
  const size_t B = windows.size();
  const size_t L = static_cast<size_t>(window_);
  for (const auto& w : windows) {
    if (w.size() != L * 5) {
      throw std::invalid_argument("forecast: window has " + std::to_string(w.size()) +
                                  " values, expected " + std::to_string(L * 5));
    }
    for (double v : w) {
      if (!std::isfinite(v)) throw std::invalid_argument("forecast: non-finite input");
    }
  }
  std::vector<TensorPtr> h(layers_params_.size());
  for (auto& s : h) s = const_zeros({B, static_cast<size_t>(hidden_)});
  for (size_t t = 0; t < L; ++t) {
    std::vector<double> step(B * 5);
    for (size_t b = 0; b < B; ++b)
      std::copy_n(windows[b].data() + t * 5, 5, step.data() + b * 5);
    auto xt = Tensor::from({B, 5}, std::move(step));
    xt->is_const = true;
    TensorPtr cur = xt;
    for (size_t l = 0; l < layers_params_.size(); ++l) {
      const auto& lp = layers_params_[l];
      h[l] = g.gru_cell(cur, h[l], lp.wx, lp.wh, lp.bx, lp.bh);
      cur = h[l];
    }
  }
  return g.linear(h.back(), head_w_, head_b_);
}

double ForecastModel::forecast(const std::vector<double>& window, int head) const {
  if (head < 0 || head >= heads_) throw std::invalid_argument("forecast: bad head");
  Graph g;
  auto out = forward(g, {window});
  return out->values()[static_cast<size_t>(head)];
}

TensorPtr ForecastModel::loss(Graph& g, const std::vector<std::vector<double>>& windows,
                              const std::vector<int>& heads_idx,
                              const std::vector<double>& labels) const {
  if (windows.size() != heads_idx.size() || windows.size() != labels.size()) {
    throw std::invalid_argument("forecast loss: batch size mismatch");
  }
  auto out = forward(g, windows);
  const size_t B = windows.size(), H = static_cast<size_t>(heads_);
  std::vector<double> mask(B * H, 0.0), lab(B * H, 0.0);
  for (size_t b = 0; b < B; ++b) {
    int hd = heads_idx[b];
    if (hd < 0 || hd >= heads_) throw std::invalid_argument("forecast loss: bad head");
    mask[b * H + static_cast<size_t>(hd)] = 1.0;
    lab[b * H + static_cast<size_t>(hd)] = labels[b];
  }
  auto m = Tensor::from({B, H}, std::move(mask));
  m->is_const = true;
  auto y = Tensor::from({B, H}, std::move(lab));
  y->is_const = true;
  auto diff = g.sub(g.mul(out, m), y);
  return g.sum(g.mul(diff, diff));
}

std::vector<double> window_values(const tasks::SeriesPanel& panel, int inst, int day,
                                  int window) {
  if (day - window + 1 < 0 || day >= panel.days || inst < 0 ||
      inst >= panel.instruments()) {
    throw std::out_of_range("window_values: window out of range");
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(window) * 5);
  for (int d = day - window + 1; d <= day; ++d) {
    const auto& f = panel.features[static_cast<size_t>(inst)][static_cast<size_t>(d)];
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

std::vector<int> with_eos(const std::vector<int>& y, int eos_id) {
  std::vector<int> out = y;
  out.push_back(eos_id);
  return out;
}

}  // namespace tcts::models
