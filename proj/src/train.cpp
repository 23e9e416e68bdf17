#include "quadnet/train.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "quadnet/eval.hpp"
#include "quadnet/sampling.hpp"

namespace quadnet {

void TrainOptions::validate() const {
  LossConfig cfg;
  cfg.push_margin = push_margin;
  cfg.pull_margin = pull_margin;
  cfg.variant = variant;
  cfg.validate();
  if (embed_dim < 1) throw std::invalid_argument("train: embed_dim must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (max_iters < 1) throw std::invalid_argument("train: max_iters must be >= 1");
  if (window < 1) throw std::invalid_argument("train: window must be >= 1");
  if (converge_consecutive < 1) throw std::invalid_argument("train: converge_consecutive must be >= 1");
  if (threads < 1) throw std::invalid_argument("train: threads must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
}

namespace {

using Grads = std::vector<ArrayX<float>>;

Grads zero_grads_like(EmbedderParams<float>& p) {
  Grads g;
  p.for_each([&g](const char*, Tensor<float>& t) { g.push_back(ArrayX<float>::Zero(t.size())); });
  return g;
}

void collect_grads(EmbedderParams<float>& p, Grads& into) {
  size_t i = 0;
  p.for_each([&](const char*, Tensor<float>& t) {
    into[i] += t.grad();
    ++i;
  });
}

struct TowerReplica {
  EmbedderParams<float> tower_t;
  EmbedderParams<float> tower_r;  // aliases tower_t in single-tower mode
};

}  // namespace

TrainResult train_run(const DatasetBundle& bundle, const TrainOptions& opt) {
  opt.validate();
  const bool two_towers = opt.variant != LossVariant::Triplet;

  const TrainingPool pool = make_training_pool(bundle, opt.include_val);
  if (pool.classes.size() < 2)
    throw std::runtime_error("train: need at least 2 seen classes with training images");

  // mean-subtracted inputs, cached once
  std::map<int, Tensor<float>> prep_templates;
  std::map<int, std::vector<Tensor<float>>> prep_reals;
  for (const int cid : pool.classes) {
    prep_templates[cid] = preprocess(pool.template_image(cid), bundle.channel_means);
    auto& dst = prep_reals[cid];
    for (int i = 0; i < pool.count(cid); ++i)
      dst.push_back(preprocess(pool.real(cid, i), bundle.channel_means));
  }

  Rng init_rng = Rng::stream(opt.seed, "init");
  const uint64_t seed_t = init_rng.next_u64();
  const uint64_t seed_r = opt.shared_tower_init ? seed_t : init_rng.next_u64();

  EmbedderParams<float> master_t = init_embedder<float>(seed_t, opt.embed_dim);
  EmbedderParams<float> master_r =
      two_towers ? init_embedder<float>(seed_r, opt.embed_dim) : master_t;

  auto state_t = OptimizerState<float>::for_params(master_t, static_cast<float>(opt.lr),
                                                   static_cast<float>(opt.momentum),
                                                   static_cast<float>(opt.weight_decay));
  auto state_r = two_towers ? OptimizerState<float>::for_params(
                                  master_r, static_cast<float>(opt.lr),
                                  static_cast<float>(opt.momentum),
                                  static_cast<float>(opt.weight_decay))
                            : OptimizerState<float>();

  const int threads = std::min(opt.threads, opt.batch_size);
  std::vector<TowerReplica> replicas;
  for (int t = 0; t < threads; ++t) {
    TowerReplica r;
    r.tower_t = master_t.clone();
    r.tower_r = two_towers ? master_r.clone() : r.tower_t;
    r.tower_t.set_requires_grad(true);
    if (two_towers) r.tower_r.set_requires_grad(true);
    replicas.push_back(std::move(r));
  }

  LossConfig loss_cfg;
  loss_cfg.push_margin = opt.push_margin;
  loss_cfg.pull_margin = opt.pull_margin;
  loss_cfg.variant = opt.variant;

  Rng sampler_rng = Rng::stream(opt.seed, "sampler");

  TrainResult result;
  std::vector<double> tuple_losses(static_cast<size_t>(opt.batch_size));
  Grads grads_t = zero_grads_like(master_t);
  Grads grads_r = two_towers ? zero_grads_like(master_r) : Grads{};

  double window_sum = 0.0;
  int window_count = 0;
  int iter = 0;

  auto run_tuple = [&](TowerReplica& rep, const TupleBatch& batch, int idx) {
    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    Tensor<float> loss;
    if (is_quadruple_variant(batch.mode)) {
      const Quadruple& q = batch.quadruples[static_cast<size_t>(idx)];
      QuadrupleEmbeddings<float> e;
      e.t_a = embed(rep.tower_t, prep_templates.at(q.class_a)).embedding;
      e.t_b = embed(rep.tower_t, prep_templates.at(q.class_b)).embedding;
      e.x_a = embed(rep.tower_r, prep_reals.at(q.class_a)[static_cast<size_t>(q.real_a)]).embedding;
      e.x_b = embed(rep.tower_r, prep_reals.at(q.class_b)[static_cast<size_t>(q.real_b)]).embedding;
      loss = quadruple_loss(e, loss_cfg);
    } else if (batch.mode == LossVariant::Triplet) {
      const Triplet& t = batch.triplets[static_cast<size_t>(idx)];
      auto anchor =
          embed(rep.tower_t, prep_reals.at(t.anchor_class)[static_cast<size_t>(t.anchor)]).embedding;
      auto pos =
          embed(rep.tower_t, prep_reals.at(t.anchor_class)[static_cast<size_t>(t.positive)]).embedding;
      auto neg =
          embed(rep.tower_t, prep_reals.at(t.negative_class)[static_cast<size_t>(t.negative)]).embedding;
      loss = loss_triplet(anchor, pos, neg, loss_cfg);
    } else {
      const TripletDa& t = batch.das[static_cast<size_t>(idx)];
      auto anchor = embed(rep.tower_t, prep_templates.at(t.anchor_class)).embedding;
      auto pos =
          embed(rep.tower_r, prep_reals.at(t.anchor_class)[static_cast<size_t>(t.positive)]).embedding;
      auto neg =
          embed(rep.tower_r, prep_reals.at(t.negative_class)[static_cast<size_t>(t.negative)]).embedding;
      loss = loss_triplet(anchor, pos, neg, loss_cfg);
    }
    tuple_losses[static_cast<size_t>(idx)] = loss.item();
    backward(loss, tape);
  };

  for (iter = 0; iter < opt.max_iters; ++iter) {
    const TupleBatch batch = make_batch(pool, sampler_rng, opt.batch_size, opt.variant);

    for (auto& rep : replicas) {
      rep.tower_t.zero_grad();
      if (two_towers) rep.tower_r.zero_grad();
      rep.tower_t.copy_values_from(master_t);
      if (two_towers) rep.tower_r.copy_values_from(master_r);
    }

    // contiguous blocks per thread; each replica accumulates its block in
    // tuple order, blocks reduce in thread order, so a fixed (seed,
    // batch, threads) triple replays bit-exactly
    const int per_thread = (opt.batch_size + threads - 1) / threads;
    std::vector<std::thread> workers;
    for (int t = 0; t < threads; ++t) {
      const int lo = t * per_thread;
      const int hi = std::min(opt.batch_size, lo + per_thread);
      if (lo >= hi) break;
      workers.emplace_back([&, t, lo, hi]() {
        for (int idx = lo; idx < hi; ++idx) run_tuple(replicas[static_cast<size_t>(t)], batch, idx);
      });
    }
    for (auto& w : workers) w.join();

    for (auto& g : grads_t) g.setZero();
    for (auto& g : grads_r) g.setZero();
    for (auto& rep : replicas) {
      collect_grads(rep.tower_t, grads_t);
      if (two_towers) collect_grads(rep.tower_r, grads_r);
    }
    const float inv_batch = 1.0f / static_cast<float>(opt.batch_size);
    for (auto& g : grads_t) g *= inv_batch;
    for (auto& g : grads_r) g *= inv_batch;

    sgd_step(master_t, grads_t, state_t);
    if (two_towers) sgd_step(master_r, grads_r, state_r);

    double batch_loss = 0.0;
    for (int i = 0; i < opt.batch_size; ++i) batch_loss += tuple_losses[static_cast<size_t>(i)];
    batch_loss /= opt.batch_size;
    if (!std::isfinite(batch_loss))
      throw numeric_error("train: non-finite loss at iteration " + std::to_string(iter + 1));

    window_sum += batch_loss;
    ++window_count;
    if (window_count == opt.window) {
      result.window_means.push_back(window_sum / window_count);
      result.window_end_iters.push_back(iter + 1);
      window_sum = 0.0;
      window_count = 0;
      if (run_converged(result.window_means, opt.converge_consecutive)) {
        result.converged = true;
        ++iter;
        break;
      }
    }
  }

  if (window_count > 0) {
    result.window_means.push_back(window_sum / window_count);
    result.window_end_iters.push_back(iter);
  }
  bool flagged = false;
  if (result.window_means.size() >= 2) convergence_check(result.window_means, &flagged);
  result.nonpositive_window_flagged = flagged;
  result.iterations = iter;
  result.final_window_mean = result.window_means.empty() ? 0.0 : result.window_means.back();
  result.tower_t = master_t;
  result.tower_r = two_towers ? master_r : master_t;

  if (!result.tower_t.all_finite() || !result.tower_r.all_finite())
    throw numeric_error("train: non-finite parameters after optimization");
  return result;
}

void write_loss_csv(const std::string& path, const TrainResult& result) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "window,end_iter,mean_loss\n";
  for (size_t i = 0; i < result.window_means.size(); ++i)
    os << i << ',' << result.window_end_iters[i] << ',' << result.window_means[i] << '\n';
}

}  // namespace quadnet
