#include "quadnet/eval.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace quadnet {

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cid, acc] : per_class_accuracy) {
    per_class[std::to_string(cid)] = {{"accuracy", acc},
                                      {"queries", per_class_counts.at(cid)}};
  }
  j["per_class"] = per_class;
  j["seen_avg"] = seen_avg;
  j["unseen_avg"] = unseen_avg;
  j["overall_avg"] = overall_avg;
  j["sample_avg"] = sample_avg;
  j["n_queries"] = n_queries;
  j["empty_class_warnings"] = empty_class_warnings;
  j["checkpoint"] = checkpoint_id;
  j["dataset"] = dataset_id;
  j["seed"] = seed;
  return j;
}

int nearest_anchor(const Eigen::VectorXf& query, const Eigen::MatrixXf& anchors,
                   const std::vector<int>& anchor_classes) {
  if (anchors.cols() != static_cast<Eigen::Index>(anchor_classes.size()) || anchors.cols() == 0)
    throw std::invalid_argument("nearest_anchor: anchor set is malformed");
  if (anchors.rows() != query.size())
    throw std::invalid_argument("nearest_anchor: dimension mismatch");
  int best = 0;
  float best_d2 = (anchors.col(0) - query).squaredNorm();
  for (Eigen::Index c = 1; c < anchors.cols(); ++c) {
    const float d2 = (anchors.col(c) - query).squaredNorm();
    if (d2 < best_d2) {  // strict: earlier (lower) class wins ties
      best_d2 = d2;
      best = static_cast<int>(c);
    }
  }
  return anchor_classes[static_cast<size_t>(best)];
}

namespace {

Eigen::VectorXf embed_vector(const EmbedderParams<float>& tower, const DatasetBundle& bundle,
                             const Image& image) {
  const auto r = embed(tower, preprocess(image, bundle.channel_means));
  Eigen::VectorXf v(r.embedding.size());
  for (int i = 0; i < r.embedding.size(); ++i) v[i] = r.embedding[i];
  return v;
}

}  // namespace

EvalReport one_shot_nn(const EmbedderParams<float>& tower_t, const EmbedderParams<float>& tower_r,
                       const DatasetBundle& bundle, Split split) {
  const std::vector<int> classes = bundle.class_ids();
  if (classes.empty()) throw std::invalid_argument("one_shot_nn: empty bundle");

  Eigen::MatrixXf anchors(tower_t.embed_dim, static_cast<Eigen::Index>(classes.size()));
  for (size_t c = 0; c < classes.size(); ++c)
    anchors.col(static_cast<Eigen::Index>(c)) =
        embed_vector(tower_t, bundle, bundle.templates.at(classes[c]));

  EvalReport report;
  long correct_total = 0;
  for (const int cid : classes) {
    const auto& tags = bundle.splits.at(cid);
    int n = 0, correct = 0;
    for (size_t i = 0; i < tags.size(); ++i) {
      if (tags[i] != split) continue;
      const Eigen::VectorXf q =
          embed_vector(tower_r, bundle, bundle.reals.at(cid)[i]);
      const int predicted = nearest_anchor(q, anchors, classes);
      ++n;
      if (predicted == cid) ++correct;
    }
    if (n == 0) {
      ++report.empty_class_warnings;
      continue;
    }
    report.per_class_accuracy[cid] = static_cast<double>(correct) / n;
    report.per_class_counts[cid] = n;
    report.n_queries += n;
    correct_total += correct;
  }
  if (report.n_queries == 0) throw std::invalid_argument("one_shot_nn: partition has no queries");

  double seen_sum = 0, unseen_sum = 0, all_sum = 0;
  int seen_n = 0, unseen_n = 0;
  for (const auto& [cid, acc] : report.per_class_accuracy) {
    all_sum += acc;
    if (bundle.is_seen(cid)) {
      seen_sum += acc;
      ++seen_n;
    } else {
      unseen_sum += acc;
      ++unseen_n;
    }
  }
  report.seen_avg = seen_n ? seen_sum / seen_n : 0.0;
  report.unseen_avg = unseen_n ? unseen_sum / unseen_n : 0.0;
  report.overall_avg = all_sum / static_cast<double>(report.per_class_accuracy.size());
  report.sample_avg = static_cast<double>(correct_total) / report.n_queries;
  return report;
}

EvalReport transfer_eval(const EmbedderParams<float>& tower_t,
                         const EmbedderParams<float>& tower_r, const DatasetBundle& target,
                         Split split) {
  if (tower_t.embed_dim != tower_r.embed_dim)
    throw std::invalid_argument("transfer_eval: towers disagree on embedding dimension");
  return one_shot_nn(tower_t, tower_r, target, split);
}

bool convergence_check(const std::vector<double>& window_means, bool* flagged) {
  if (window_means.size() < 2)
    throw std::invalid_argument("convergence_check: need at least 2 window means");
  const double prev = window_means[window_means.size() - 2];
  const double cur = window_means.back();
  if (!(prev > 0.0)) {
    if (flagged) *flagged = true;
    return false;
  }
  return std::abs(cur - prev) / prev < 0.05;
}

bool run_converged(const std::vector<double>& window_means, int consecutive) {
  if (consecutive < 1) throw std::invalid_argument("run_converged: consecutive must be >= 1");
  if (window_means.size() < static_cast<size_t>(consecutive) + 1) return false;
  for (int k = 0; k < consecutive; ++k) {
    const std::vector<double> prefix(window_means.begin(),
                                     window_means.end() - k);
    if (!convergence_check(prefix)) return false;
  }
  return true;
}

Ci ci95(const std::vector<double>& values) {
  const size_t n = values.size();
  if (n < 2) throw std::invalid_argument("ci95: need at least 2 values");
  double mean = 0;
  for (const double v : values) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  const double s = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, 1.96 * s / std::sqrt(static_cast<double>(n))};
}

std::vector<AblationCell> ablation_sweep(const DatasetBundle& bundle, const std::vector<int>& dims,
                                         const std::vector<LossVariant>& variants,
                                         const TrainOptions& base) {
  if (dims.empty() || variants.empty())
    throw std::invalid_argument("ablation_sweep: empty dimension or variant list");
  std::vector<AblationCell> cells;
  for (const int dim : dims) {
    for (const LossVariant variant : variants) {
      TrainOptions opt = base;
      opt.embed_dim = dim;
      opt.variant = variant;
      opt.include_val = false;  // cells train on Phi_s only
      const TrainResult r = train_run(bundle, opt);
      AblationCell cell;
      cell.dim = dim;
      cell.variant = variant;
      cell.report = one_shot_nn(r.tower_t, r.tower_r, bundle, Split::Val);
      cell.report.seed = opt.seed;
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationCell>& cells) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "dim,variant,avg,seen,unseen\n";
  for (const auto& c : cells)
    os << c.dim << ',' << to_string(c.variant) << ',' << c.report.overall_avg << ','
       << c.report.seen_avg << ',' << c.report.unseen_avg << '\n';
}

}  // namespace quadnet
