#pragma once

#include <map>
#include <string>
#include <vector>

#include "tcts/metrics.hpp"
#include "tcts/rng.hpp"
#include "tcts/tasks.hpp"
#include "tcts/tensor.hpp"

namespace tcts::models {

using ad::Graph;
using ad::TensorPtr;

// width of the read-offset one-hot appended to the decoder head input
inline constexpr size_t kOffsetDims = 16;
// trailing visible encoder states fed to the head alongside attention
inline constexpr size_t kFrontierSlots = 4;

// Single-head attention, exactly:
//   attn(q,K,V) = sum_i alpha_i (v_i Wv),
//   alpha_i = exp((q Wq) . (k_i Wk)) / Z
// with row-vector convention (weights right-multiply). K and V are given as
// [n x d] matrices of stacked rows.
TensorPtr attn(Graph& g, const TensorPtr& q, const TensorPtr& keys,
               const TensorPtr& values, const TensorPtr& wq, const TensorPtr& wk,
               const TensorPtr& wv, std::vector<double>* alpha_out = nullptr);

// GRU encoder/decoder pair with unidirectional (incremental) encoder
// attention and wait-k masked cross attention.
class TransductionModel {
 public:
  // Vocabulary sizes are model-level and include the reserved ids:
  // BOS = tgt_vocab-2, EOS = tgt_vocab-1.
  TransductionModel(int src_vocab, int tgt_vocab, int embed, int hidden);

  void init_params(Rng& rng);  // uniform(-r, r), r = 1/sqrt(fan_in)

  int src_vocab() const { return src_vocab_; }
  int tgt_vocab() const { return tgt_vocab_; }
  int hidden() const { return hidden_; }
  int bos() const { return tgt_vocab_ - 2; }
  int eos() const { return tgt_vocab_ - 1; }

  std::vector<TensorPtr> params() const;
  std::map<std::string, TensorPtr> named_params(const std::string& prefix) const;
  void load_params(const std::map<std::string, TensorPtr>& named,
                   const std::string& prefix);

  struct Encoded {
    TensorPtr states;                         // [Lx x hidden], prefix-stable
    TensorPtr recurrent;                      // raw GRU states feeding the head slots
    TensorPtr rec_padded;                     // recurrent with kFrontierSlots zero rows on top
    TensorPtr keys, values;                   // cross-attention projections
    std::vector<std::vector<double>> alphas;  // encoder self-attn rows
  };

  // h_t = attn(g_t, G_{<=t}, G_{<=t}) on top of the recurrent states g;
  // position t depends only on x_{<=t}.
  Encoded encode_incremental(Graph& g, const std::vector<int>& x,
                             bool record_alphas = false) const;

  // sum_t -log P(y_t | y_{<t}, x_{<= min(t+m-1, Lx)}). Exactly |y| terms.
  TensorPtr waitk_loss(Graph& g, const std::vector<int>& x, const std::vector<int>& y,
                       int wait_m) const;

  // Teacher-forced per-step cross-attention weights at the given wait;
  // rows are padded with exact zeros past the readable prefix.
  std::vector<std::vector<double>> cross_attention_weights(const std::vector<int>& x,
                                                           const std::vector<int>& y,
                                                           int wait_m) const;

  struct DecodeResult {
    std::vector<int> tokens;  // EOS stripped
    metrics::ReadWriteTrace trace;
    double logprob = 0.0;
  };

  // Greedy while t <= Lx-k (reading x_{<= t+k-1}), then beam search of the
  // given width over the fully read source. Emission is capped at
  // 2*Lx + 8 tokens; EOS is only available once a token has been emitted
  // with the whole source read.
  DecodeResult decode_incremental(const std::vector<int>& x, int k, int beam) const;

 private:
  struct DecoderStep;

  int src_vocab_, tgt_vocab_, embed_, hidden_;

 public:
  // parameters (public for checkpoint plumbing and tests)
  TensorPtr src_emb_, tgt_emb_;
  TensorPtr enc_wx_, enc_wh_, enc_bx_, enc_bh_;
  TensorPtr enc_wq_, enc_wk_, enc_wv_;
  TensorPtr dec_wx_, dec_wh_, dec_bx_, dec_bh_;
  TensorPtr dec_wq_, dec_wk_, dec_wv_;
  TensorPtr out_w_, out_b_;
};

// Windowed GRU regressor with one scalar output head per task in the set.
class ForecastModel {
 public:
  ForecastModel(int window, int hidden, int layers, int heads);

  void init_params(Rng& rng);

  int window() const { return window_; }
  int heads() const { return heads_; }

  std::vector<TensorPtr> params() const;
  std::map<std::string, TensorPtr> named_params(const std::string& prefix) const;
  void load_params(const std::map<std::string, TensorPtr>& named,
                   const std::string& prefix);

  // Batched forward over fixed-length windows: input [B x L x 5] flattened
  // time-major per step; returns [B x heads].
  TensorPtr forward(Graph& g, const std::vector<std::vector<double>>& windows) const;

  // Scalar prediction of one task's head for one window (L rows x 5 cols).
  double forecast(const std::vector<double>& window, int head) const;

  // Squared-error training loss summed over the batch; head/label per item.
  TensorPtr loss(Graph& g, const std::vector<std::vector<double>>& windows,
                 const std::vector<int>& heads_idx,
                 const std::vector<double>& labels) const;

 private:
  int window_, hidden_, layers_, heads_;

 public:
  struct GruLayer {
    TensorPtr wx, wh, bx, bh;
  };
  std::vector<GruLayer> layers_params_;
  TensorPtr head_w_, head_b_;
};

// Flattens a [L x 5] feature window from panel storage.
std::vector<double> window_values(const tasks::SeriesPanel& panel, int inst, int day,
                                  int window);

std::vector<int> with_eos(const std::vector<int>& y, int eos_id);

}  // namespace tcts::models
