#include "quadnet/svm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "quadnet/eval.hpp"

namespace quadnet {

double rbf_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double gamma) {
  if (x.size() != y.size()) throw std::invalid_argument("rbf_kernel: dimension mismatch");
  if (!(gamma > 0.0)) throw std::invalid_argument("rbf_kernel: gamma must be positive");
  return std::exp(-gamma * (x - y).squaredNorm());
}

double BinarySvm::decision(const Eigen::VectorXd& x) const {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < support_vectors.rows(); ++i)
    acc += dual_coef[i] * std::exp(-gamma * (support_vectors.row(i).transpose() - x).squaredNorm());
  return acc - rho;
}

namespace {

constexpr double kTau = 1e-12;

// Two-class SMO over the dual with maximal-violating-pair selection.
// K is the plain kernel matrix; y holds +-1.
struct BinarySolution {
  Eigen::VectorXd alpha;
  double rho = 0.0;
};

BinarySolution solve_binary(const Eigen::MatrixXd& kernel, const std::vector<int>& y, double c_reg,
                            double tol) {
  const int n = static_cast<int>(y.size());
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd grad = Eigen::VectorXd::Constant(n, -1.0);  // G = Q alpha - e

  auto q = [&](int i, int j) { return y[static_cast<size_t>(i)] * y[static_cast<size_t>(j)] *
                                      kernel(i, j); };

  const long max_iter = std::max<long>(10000000L, 100L * n);
  for (long iter = 0; iter < max_iter; ++iter) {
    // working pair by maximal KKT violation
    double m_up = -std::numeric_limits<double>::infinity();
    double m_low = std::numeric_limits<double>::infinity();
    int i = -1, j = -1;
    for (int t = 0; t < n; ++t) {
      const int yt = y[static_cast<size_t>(t)];
      const bool in_up = (yt > 0 && alpha[t] < c_reg) || (yt < 0 && alpha[t] > 0);
      const bool in_low = (yt < 0 && alpha[t] < c_reg) || (yt > 0 && alpha[t] > 0);
      const double v = -yt * grad[t];
      if (in_up && v > m_up) {
        m_up = v;
        i = t;
      }
      if (in_low && v < m_low) {
        m_low = v;
        j = t;
      }
    }
    if (i < 0 || j < 0 || m_up - m_low < tol) break;

    const int yi = y[static_cast<size_t>(i)], yj = y[static_cast<size_t>(j)];
    const double old_ai = alpha[i], old_aj = alpha[j];
    if (yi != yj) {
      double quad = kernel(i, i) + kernel(j, j) + 2.0 * kernel(i, j);
      if (quad <= 0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
        if (alpha[i] > c_reg) {
          alpha[i] = c_reg;
          alpha[j] = c_reg - diff;
        }
      } else {
        if (alpha[i] < 0) {
          alpha[i] = 0;
          alpha[j] = -diff;
        }
        if (alpha[j] > c_reg) {
          alpha[j] = c_reg;
          alpha[i] = c_reg + diff;
        }
      }
    } else {
      double quad = kernel(i, i) + kernel(j, j) - 2.0 * kernel(i, j);
      if (quad <= 0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double total = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (total > c_reg) {
        if (alpha[i] > c_reg) {
          alpha[i] = c_reg;
          alpha[j] = total - c_reg;
        }
        if (alpha[j] > c_reg) {
          alpha[j] = c_reg;
          alpha[i] = total - c_reg;
        }
      } else {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = total;
        }
        if (alpha[i] < 0) {
          alpha[i] = 0;
          alpha[j] = total;
        }
      }
    }

    const double dai = alpha[i] - old_ai, daj = alpha[j] - old_aj;
    for (int t = 0; t < n; ++t) grad[t] += q(t, i) * dai + q(t, j) * daj;
  }

  // bias from the KKT conditions
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  int nr_free = 0;
  for (int t = 0; t < n; ++t) {
    const int yt = y[static_cast<size_t>(t)];
    const double yg = yt * grad[t];
    if (alpha[t] >= c_reg) {
      if (yt < 0)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else if (alpha[t] <= 0) {
      if (yt > 0)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else {
      ++nr_free;
      sum_free += yg;
    }
  }
  BinarySolution sol;
  sol.alpha = alpha;
  sol.rho = nr_free > 0 ? sum_free / nr_free : (ub + lb) / 2.0;
  return sol;
}

}  // namespace

SvmModel svm_train(const Eigen::MatrixXd& features, const std::vector<int>& labels, double c_reg,
                   double tol, double gamma) {
  const int n = static_cast<int>(features.rows());
  if (n < 2 || static_cast<size_t>(n) != labels.size())
    throw std::invalid_argument("svm_train: bad training set");
  std::set<int> class_set(labels.begin(), labels.end());
  if (class_set.size() < 2) throw std::invalid_argument("svm_train: need at least 2 classes");

  if (gamma <= 0.0) {
    const double mean = features.mean();
    const double var = (features.array() - mean).square().sum() / (features.size());
    gamma = 1.0 / (static_cast<double>(features.cols()) * std::max(var, 1e-12));
  }

  // shared kernel matrix across the one-vs-rest machines
  Eigen::MatrixXd kernel(n, n);
  Eigen::VectorXd sq = features.rowwise().squaredNorm();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double d2 = sq[i] + sq[j] - 2.0 * features.row(i).dot(features.row(j));
      kernel(i, j) = kernel(j, i) = std::exp(-gamma * std::max(d2, 0.0));
    }

  SvmModel model;
  model.gamma = gamma;
  model.classes.assign(class_set.begin(), class_set.end());
  for (const int cls : model.classes) {
    std::vector<int> y(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) y[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)] == cls ? 1 : -1;
    const BinarySolution sol = solve_binary(kernel, y, c_reg, tol);
    BinarySvm bin;
    bin.positive_class = cls;
    bin.gamma = gamma;
    bin.rho = sol.rho;
    std::vector<int> sv;
    for (int i = 0; i < n; ++i)
      if (sol.alpha[i] > 0) sv.push_back(i);
    bin.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), features.cols());
    bin.dual_coef.resize(static_cast<Eigen::Index>(sv.size()));
    bin.sv_indices = sv;
    for (size_t k = 0; k < sv.size(); ++k) {
      bin.support_vectors.row(static_cast<Eigen::Index>(k)) = features.row(sv[k]);
      bin.dual_coef[static_cast<Eigen::Index>(k)] = sol.alpha[sv[k]] * y[static_cast<size_t>(sv[k])];
    }
    model.machines.push_back(std::move(bin));
  }
  return model;
}

int svm_predict(const SvmModel& model, const Eigen::VectorXd& x) {
  if (model.machines.empty()) throw std::invalid_argument("svm_predict: empty model");
  int best_class = model.classes.front();
  double best = -std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < model.machines.size(); ++k) {
    if (model.machines[k].support_vectors.cols() != x.size())
      throw std::invalid_argument("svm_predict: feature dimension mismatch");
    const double v = model.machines[k].decision(x);
    if (v > best) {  // ties keep the lowest class id
      best = v;
      best_class = model.classes[k];
    }
  }
  return best_class;
}

// ---- representation probing --------------------------------------------------

namespace {

Eigen::VectorXd fc1_features(const EmbedderParams<float>& tower, const DatasetBundle& bundle,
                             int class_id, int sample_index) {
  const Tensor<float> input =
      preprocess(bundle.reals.at(class_id)[static_cast<size_t>(sample_index)],
                 bundle.channel_means);
  const auto result = embed(tower, input);
  Eigen::VectorXd f(result.fc1.size());
  for (int i = 0; i < result.fc1.size(); ++i) f[i] = result.fc1[i];
  return f;
}

}  // namespace

ReprResult representation_eval(const EmbedderParams<float>& real_tower,
                               const DatasetBundle& bundle,
                               const std::vector<int>& instances_per_class,
                               const std::vector<int>& repeats, uint64_t seed,
                               const std::string& network_name) {
  if (instances_per_class.empty()) throw std::invalid_argument("representation_eval: no instance counts");
  if (repeats.size() != 1 && repeats.size() != instances_per_class.size())
    throw std::invalid_argument("representation_eval: repeats must be scalar or match instances");

  // pool: train+val of every class; test: omega splits
  struct PoolEntry {
    int class_id;
    int sample_index;
    Split origin;
  };
  std::map<int, std::vector<PoolEntry>> pool;
  for (const int cid : bundle.class_ids()) {
    const auto& tags = bundle.splits.at(cid);
    for (size_t i = 0; i < tags.size(); ++i)
      if (tags[i] == Split::Train || tags[i] == Split::Val)
        pool[cid].push_back({cid, static_cast<int>(i), tags[i]});
  }

  // frozen features, computed once
  std::map<int, std::vector<Eigen::VectorXd>> pool_features;
  for (const auto& [cid, entries] : pool) {
    auto& dst = pool_features[cid];
    for (const auto& e : entries) dst.push_back(fc1_features(real_tower, bundle, cid, e.sample_index));
  }
  struct TestPoint {
    Eigen::VectorXd f;
    int class_id;
    bool seen;
  };
  std::vector<TestPoint> test_points;
  for (const auto& ref : bundle.members(Split::Test))
    test_points.push_back({fc1_features(real_tower, bundle, ref.class_id, ref.sample_index),
                           ref.class_id, bundle.is_seen(ref.class_id)});
  if (test_points.empty()) throw std::invalid_argument("representation_eval: empty test partition");

  const int dim = static_cast<int>(test_points.front().f.size());
  ReprResult result;

  for (size_t ni = 0; ni < instances_per_class.size(); ++ni) {
    const int n_inst = instances_per_class[ni];
    const int n_rep = repeats.size() == 1 ? repeats[0] : repeats[ni];
    if (n_rep < 1) throw std::invalid_argument("representation_eval: repeats must be >= 1");
    for (const auto& [cid, entries] : pool)
      if (static_cast<int>(entries.size()) < n_inst)
        throw std::invalid_argument("representation_eval: class " + std::to_string(cid) +
                                    " has only " + std::to_string(entries.size()) +
                                    " train+val samples, need " + std::to_string(n_inst));

    std::vector<double> err_seen, err_unseen;
    for (int trial = 0; trial < n_rep; ++trial) {
      // subset depends only on (bundle, seed, n, trial), never on the network
      Rng rng = Rng::stream(seed, "svm/n" + std::to_string(n_inst) + "/t" + std::to_string(trial));
      ReprTrialLog log;
      log.instances_per_class = n_inst;
      log.trial = trial;

      std::vector<int> labels;
      Eigen::MatrixXd feats(static_cast<Eigen::Index>(pool.size()) * n_inst, dim);
      Eigen::Index row = 0;
      for (const auto& [cid, entries] : pool) {
        // partial Fisher-Yates for n distinct indices
        std::vector<int> idx(entries.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        for (int i = 0; i < n_inst; ++i) {
          const int j = i + rng.uniform_int(static_cast<int>(idx.size()) - i);
          std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
          const int pick = idx[static_cast<size_t>(i)];
          feats.row(row++) = pool_features.at(cid)[static_cast<size_t>(pick)];
          labels.push_back(cid);
          log.train_members.push_back({cid, entries[static_cast<size_t>(pick)].origin});
        }
      }
      result.logs.push_back(std::move(log));

      const SvmModel model = svm_train(feats, labels, 100.0, 1e-3, -1.0);
      long wrong_seen = 0, total_seen = 0, wrong_unseen = 0, total_unseen = 0;
      for (const auto& tp : test_points) {
        const bool correct = svm_predict(model, tp.f) == tp.class_id;
        if (tp.seen) {
          ++total_seen;
          wrong_seen += correct ? 0 : 1;
        } else {
          ++total_unseen;
          wrong_unseen += correct ? 0 : 1;
        }
      }
      if (total_seen > 0) err_seen.push_back(100.0 * wrong_seen / total_seen);
      if (total_unseen > 0) err_unseen.push_back(100.0 * wrong_unseen / total_unseen);
    }

    auto push_cell = [&](const std::vector<double>& errs, const char* partition) {
      if (errs.empty()) return;
      ReprCell cell;
      cell.network = network_name;
      cell.instances_per_class = n_inst;
      cell.partition = partition;
      if (errs.size() >= 2) {
        const Ci ci = ci95(errs);
        cell.mean_error_pct = ci.mean;
        cell.ci95_halfwidth = ci.halfwidth;
      } else {
        cell.mean_error_pct = errs[0];
        cell.ci95_halfwidth = 0.0;
      }
      result.cells.push_back(cell);
    };
    push_cell(err_seen, "omega_s");
    push_cell(err_unseen, "omega_u");
  }
  return result;
}

void write_repr_csv(const std::string& path, const ReprResult& result) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "network,instances_per_class,partition,mean_error_pct,ci95\n";
  for (const auto& c : result.cells)
    os << c.network << ',' << c.instances_per_class << ',' << c.partition << ','
       << c.mean_error_pct << ',' << c.ci95_halfwidth << '\n';
}

}  // namespace quadnet
