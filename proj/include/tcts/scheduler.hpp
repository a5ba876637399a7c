#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tcts/rng.hpp"
#include "tcts/tasks.hpp"
#include "tcts/tensor.hpp"

namespace tcts::sched {

// Ablation groups over the 7-dim latency feature vector:
//   (i) length ratios, (ii) train-loss pair, (iii) valid-loss pair,
//   (iv) training progress. Dropped groups shrink the vector.
struct FeatureMask {
  bool drop_lengths = false;
  bool drop_train_loss = false;
  bool drop_valid_loss = false;
  bool drop_progress = false;

  int latency_dim() const {
    return 7 - (drop_lengths ? 2 : 0) - (drop_train_loss ? 2 : 0) -
           (drop_valid_loss ? 2 : 0) - (drop_progress ? 1 : 0);
  }
  bool operator==(const FeatureMask&) const = default;
};

FeatureMask parse_feature_mask(const std::string& spec);  // "i,iii" etc.
std::string feature_mask_to_string(const FeatureMask& m);

// Latency-family scheduler features:
//   1 source-length ratio, 2 target-length ratio, 3 main-task loss on (x,y),
//   4 mean historical training loss, 5 previous-episode validation loss,
//   6 mean historical validation loss, 7 progress ratio in [0,1].
// Histories start at zero before anything is recorded.
class LatencyFeatures {
 public:
  LatencyFeatures(double mean_src_len, double mean_tgt_len, int64_t total_steps,
                  FeatureMask mask = {});

  std::vector<double> extract(size_t src_len, size_t tgt_len, double main_task_loss,
                              int64_t step) const;
  void record_train_loss(double sentence_loss);
  void record_validation(double validation_loss);
  int dim() const { return mask_.latency_dim(); }

 private:
  double mean_src_, mean_tgt_;
  int64_t total_steps_;
  FeatureMask mask_;
  double train_sum_ = 0.0;
  size_t train_count_ = 0;
  double prev_val_ = 0.0, val_sum_ = 0.0;
  size_t val_count_ = 0;
};

// Horizon-family features, four parts: window summary (last day's 5 features
// plus mean/std of in-window close returns), previous-iteration training
// loss, previous-iteration mean forecast, and the labels of every task in
// the set (0 when undefined).
class HorizonFeatures {
 public:
  HorizonFeatures(int n_tasks, int window);

  std::vector<double> extract(const tasks::SeriesPanel& panel,
                              const tasks::SeriesExample& ex) const;
  void record_iteration(double mean_loss, double mean_forecast);
  int dim() const { return 9 + n_tasks_; }

 private:
  int n_tasks_, window_;
  double prev_loss_ = 0.0, prev_forecast_ = 0.0;
};

enum class Activation { tanh, relu };

struct PolicyConfig {
  int input_dim = 7;
  int hidden = 256;        // latency default; horizon uses 32
  Activation act = Activation::tanh;
  int n_tasks = 13;
};

// One-hidden-layer MLP policy over the task set, with the episode buffer of
// (feature, action) pairs and the REINFORCE ascent update.
class Policy {
 public:
  explicit Policy(PolicyConfig cfg);

  void init_params(Rng& rng);
  const PolicyConfig& config() const { return cfg_; }

  // Softmax over task logits; entries positive, sums to 1.
  std::vector<double> distribution(const std::vector<double>& feature) const;

  // Samples a task index, recording (feature, action) into the buffer.
  size_t sample(const std::vector<double>& feature, Rng& rng);

  size_t buffer_size() const { return buffer_.size(); }
  void clear_buffer() { buffer_.clear(); }

  // w += lr * reward * sum_buffer grad log P(action | feature); clears the
  // buffer. An empty buffer is a warning-counted no-op.
  void reinforce_update(double reward, double lr, double clip_norm = 0.0);

  size_t empty_update_count() const { return empty_updates_; }

  std::vector<ad::TensorPtr> params() const { return {w1_, b1_, w2_, b2_}; }
  std::map<std::string, ad::TensorPtr> named_params(const std::string& prefix) const;
  void load_params(const std::map<std::string, ad::TensorPtr>& named,
                   const std::string& prefix);

 private:
  PolicyConfig cfg_;
  ad::TensorPtr w1_, b1_, w2_, b2_;
  std::vector<std::pair<std::vector<double>, size_t>> buffer_;
  size_t empty_updates_ = 0;
};

// R_e - R_{e-1}; R_0 is the validation performance measured before training.
double shaped_reward(double r_e, double r_prev);

// One row per (episode, task): "episode,task_index,frequency".
void write_histogram_csv(const std::string& path,
                         const std::vector<std::vector<double>>& per_episode_freq);

std::vector<std::vector<double>> read_histogram_csv(const std::string& path);

}  // namespace tcts::sched
