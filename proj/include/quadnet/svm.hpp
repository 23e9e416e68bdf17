#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "quadnet/data.hpp"
#include "quadnet/nn.hpp"

namespace quadnet {

double rbf_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double gamma);

// One binary one-vs-rest machine. The decision function is fully
// reproducible from the stored fields.
struct BinarySvm {
  int positive_class = 0;
  Eigen::MatrixXd support_vectors;  // rows
  Eigen::VectorXd dual_coef;        // alpha_i * y_i, one per support vector
  std::vector<int> sv_indices;      // positions in the training set
  double rho = 0.0;                 // decision f(x) = sum coef K(sv, x) - rho
  double gamma = 0.0;

  double decision(const Eigen::VectorXd& x) const;
};

struct SvmModel {
  std::vector<int> classes;          // ascending
  std::vector<BinarySvm> machines;   // aligned with classes
  double gamma = 0.0;
};

// Soft-margin RBF SVM trained by sequential minimal optimization with
// maximal-violating-pair selection. gamma <= 0 selects
// 1 / (d * var(features)) computed on the training features.
SvmModel svm_train(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                   double c_reg = 100.0, double tol = 1e-3, double gamma = -1.0);

int svm_predict(const SvmModel& model, const Eigen::VectorXd& x);

// ---- frozen-feature representation probing ---------------------------------

struct ReprCell {
  std::string network;
  int instances_per_class = 0;
  std::string partition;  // "omega_s" or "omega_u"
  double mean_error_pct = 0.0;
  double ci95_halfwidth = 0.0;
};

struct ReprTrialLog {
  int instances_per_class = 0;
  int trial = 0;
  std::vector<std::pair<int, Split>> train_members;  // class id + origin split
};

struct ReprResult {
  std::vector<ReprCell> cells;
  std::vector<ReprTrialLog> logs;
};

// Freezes the network, samples n instances per class from the train+val
// partitions of every class (seen and unseen), fits the SVM on FC1
// activations, and scores error separately on the seen and unseen test
// partitions. Subset selection depends only on (bundle, seed, n, trial)
// so competing networks see identical training subsets.
// `repeats` has one entry per instance count, or a single broadcast entry.
ReprResult representation_eval(const EmbedderParams<float>& real_tower,
                               const DatasetBundle& bundle,
                               const std::vector<int>& instances_per_class,
                               const std::vector<int>& repeats, uint64_t seed,
                               const std::string& network_name);

void write_repr_csv(const std::string& path, const ReprResult& result);

}  // namespace quadnet
