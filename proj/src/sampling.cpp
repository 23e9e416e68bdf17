#include "quadnet/sampling.hpp"

#include <stdexcept>

namespace quadnet {

TrainingPool make_training_pool(const DatasetBundle& bundle, bool include_val) {
  TrainingPool pool;
  pool.bundle = &bundle;
  for (const int cid : bundle.class_ids()) {
    if (!bundle.is_seen(cid)) continue;
    std::vector<int> idx;
    const auto& tags = bundle.splits.at(cid);
    for (size_t i = 0; i < tags.size(); ++i)
      if (tags[i] == Split::Train || (include_val && tags[i] == Split::Val))
        idx.push_back(static_cast<int>(i));
    pool.classes.push_back(cid);
    pool.samples[cid] = std::move(idx);
  }
  return pool;
}

namespace {

int pick_sample(const TrainingPool& pool, int class_id, Rng& rng) {
  const int n = pool.count(class_id);
  if (n == 0)
    throw std::runtime_error("sampling: class " + std::to_string(class_id) +
                             " has no real training images");
  return rng.uniform_int(n);
}

}  // namespace

Quadruple sample_quadruple(const TrainingPool& pool, Rng& rng) {
  const int c = static_cast<int>(pool.classes.size());
  if (c < 2) throw std::runtime_error("sampling: need at least 2 eligible classes");
  const int i = rng.uniform_int(c);
  int j = rng.uniform_int(c - 1);
  if (j >= i) ++j;
  Quadruple q;
  q.class_a = pool.classes[static_cast<size_t>(i)];
  q.class_b = pool.classes[static_cast<size_t>(j)];
  q.real_a = pick_sample(pool, q.class_a, rng);
  q.real_b = pick_sample(pool, q.class_b, rng);
  return q;
}

Triplet sample_triplet(const TrainingPool& pool, Rng& rng) {
  if (pool.classes.size() < 2) throw std::runtime_error("sampling: need at least 2 eligible classes");
  std::vector<int> anchor_classes;
  for (const int cid : pool.classes)
    if (pool.count(cid) >= 2) anchor_classes.push_back(cid);
  if (anchor_classes.empty())
    throw std::runtime_error("sampling: no class has 2 or more real images");

  Triplet t;
  t.anchor_class = anchor_classes[static_cast<size_t>(rng.uniform_int(
      static_cast<int>(anchor_classes.size())))];
  const int n = pool.count(t.anchor_class);
  t.anchor = rng.uniform_int(n);
  t.positive = rng.uniform_int(n - 1);
  if (t.positive >= t.anchor) ++t.positive;

  std::vector<int> negatives;
  for (const int cid : pool.classes)
    if (cid != t.anchor_class && pool.count(cid) >= 1) negatives.push_back(cid);
  if (negatives.empty()) throw std::runtime_error("sampling: no negative class available");
  t.negative_class =
      negatives[static_cast<size_t>(rng.uniform_int(static_cast<int>(negatives.size())))];
  t.negative = pick_sample(pool, t.negative_class, rng);
  return t;
}

TripletDa sample_triplet_da(const TrainingPool& pool, Rng& rng) {
  const int c = static_cast<int>(pool.classes.size());
  if (c < 2) throw std::runtime_error("sampling: need at least 2 eligible classes");
  TripletDa t;
  t.anchor_class = pool.classes[static_cast<size_t>(rng.uniform_int(c))];
  t.positive = pick_sample(pool, t.anchor_class, rng);
  int j = rng.uniform_int(c - 1);
  int anchor_pos = 0;
  for (int k = 0; k < c; ++k)
    if (pool.classes[static_cast<size_t>(k)] == t.anchor_class) anchor_pos = k;
  if (j >= anchor_pos) ++j;
  t.negative_class = pool.classes[static_cast<size_t>(j)];
  t.negative = pick_sample(pool, t.negative_class, rng);
  return t;
}

TupleBatch make_batch(const TrainingPool& pool, Rng& rng, int batch_size, LossVariant mode) {
  if (batch_size < 1) throw std::invalid_argument("make_batch: batch size must be >= 1");
  TupleBatch batch;
  batch.mode = mode;
  for (int i = 0; i < batch_size; ++i) {
    if (is_quadruple_variant(mode))
      batch.quadruples.push_back(sample_quadruple(pool, rng));
    else if (mode == LossVariant::Triplet)
      batch.triplets.push_back(sample_triplet(pool, rng));
    else
      batch.das.push_back(sample_triplet_da(pool, rng));
  }
  return batch;
}

}  // namespace quadnet
