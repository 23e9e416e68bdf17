#pragma once

#include <cstdint>
#include <vector>

#include "quadnet/data.hpp"
#include "quadnet/loss.hpp"
#include "quadnet/nn.hpp"

namespace quadnet {

struct TrainOptions {
  LossVariant variant = LossVariant::HingeM5;
  int embed_dim = kDefaultEmbedDim;
  double push_margin = 1.0;
  double pull_margin = 0.2;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 100;
  int max_iters = 20000;
  int window = 1000;             // iterations per mean-loss window
  int converge_consecutive = 3;  // adjacent window pairs that must satisfy the 5% rule
  uint64_t seed = 1;
  int threads = 1;
  bool include_val = true;       // train pool = Phi_s (false) or Phi_s + Psi_s (true)
  bool shared_tower_init = true; // both towers start from identical weights

  void validate() const;
};

struct TrainResult {
  EmbedderParams<float> tower_t;  // template tower; aliases tower_r in Triplet mode
  EmbedderParams<float> tower_r;
  std::vector<double> window_means;
  std::vector<int> window_end_iters;
  int iterations = 0;
  bool converged = false;
  bool nonpositive_window_flagged = false;
  double final_window_mean = 0.0;
};

TrainResult train_run(const DatasetBundle& bundle, const TrainOptions& opt);

void write_loss_csv(const std::string& path, const TrainResult& result);

}  // namespace quadnet
