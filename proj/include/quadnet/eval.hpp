#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "quadnet/data.hpp"
#include "quadnet/nn.hpp"
#include "quadnet/train.hpp"

namespace quadnet {

struct EvalReport {
  std::map<int, double> per_class_accuracy;
  std::map<int, int> per_class_counts;
  double seen_avg = 0.0;     // unweighted mean over seen classes
  double unseen_avg = 0.0;   // unweighted mean over unseen classes
  double overall_avg = 0.0;  // unweighted mean over all classes with queries
  double sample_avg = 0.0;   // total correct / total queries
  int n_queries = 0;
  int empty_class_warnings = 0;
  std::string checkpoint_id;
  std::string dataset_id;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
};

// argmin Euclidean distance over anchor columns; ties break to the
// lowest class id. anchors is D x C with anchor_classes ascending.
int nearest_anchor(const Eigen::VectorXf& query, const Eigen::MatrixXf& anchors,
                   const std::vector<int>& anchor_classes);

// Embeds every template through the template tower and every query of
// the chosen split through the real tower; C-way prediction over all
// class anchors, per-class accuracies, unweighted class averages.
EvalReport one_shot_nn(const EmbedderParams<float>& tower_t, const EmbedderParams<float>& tower_r,
                       const DatasetBundle& bundle, Split split);

// Anchors and queries both from the target bundle, weights from a model
// trained elsewhere. sample_avg carries the sample-weighted accuracy.
EvalReport transfer_eval(const EmbedderParams<float>& tower_t,
                         const EmbedderParams<float>& tower_r, const DatasetBundle& target,
                         Split split = Split::Test);

// |L_t - L_{t-1}| / L_{t-1} < 5% on the last two window means. A
// non-positive previous mean is never converged; `flagged` reports it.
bool convergence_check(const std::vector<double>& window_means, bool* flagged = nullptr);

// The training loop stops once `consecutive` adjacent pairs in a row
// satisfy the window test.
bool run_converged(const std::vector<double>& window_means, int consecutive = 3);

struct Ci {
  double mean = 0.0;
  double halfwidth = 0.0;  // 1.96 * s / sqrt(n)
};

Ci ci95(const std::vector<double>& values);

// ---- ablation harness ------------------------------------------------------

struct AblationCell {
  int dim = 0;
  LossVariant variant = LossVariant::HingeM5;
  EvalReport report;  // on the validation split
};

// Trains one model per (dim, variant) on Phi_s only and evaluates on the
// validation split. The training budget comes from `base` (loss variant,
// dim and pool settings are overridden per cell).
std::vector<AblationCell> ablation_sweep(const DatasetBundle& bundle, const std::vector<int>& dims,
                                         const std::vector<LossVariant>& variants,
                                         const TrainOptions& base);

void write_ablation_csv(const std::string& path, const std::vector<AblationCell>& cells);

}  // namespace quadnet
