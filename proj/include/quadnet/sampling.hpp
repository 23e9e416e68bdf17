#pragma once

#include <map>
#include <vector>

#include "quadnet/data.hpp"
#include "quadnet/loss.hpp"
#include "quadnet/rng.hpp"

namespace quadnet {

// Seen-class real images eligible for network training. Built once per
// run; samplers draw from it by index so replay is exact.
struct TrainingPool {
  const DatasetBundle* bundle = nullptr;
  std::vector<int> classes;                 // seen classes, ascending
  std::map<int, std::vector<int>> samples;  // class -> indices into bundle->reals[class]

  const Image& real(int class_id, int pooled_index) const {
    return bundle->reals.at(class_id)[static_cast<size_t>(
        samples.at(class_id)[static_cast<size_t>(pooled_index)])];
  }
  const Image& template_image(int class_id) const { return bundle->templates.at(class_id); }
  int count(int class_id) const { return static_cast<int>(samples.at(class_id).size()); }
};

// include_val pools Phi_s with Psi_s; unseen classes never enter.
TrainingPool make_training_pool(const DatasetBundle& bundle, bool include_val);

// Two templates of distinct classes plus one real sample of each class.
struct Quadruple {
  int class_a = 0, class_b = 0;
  int real_a = 0, real_b = 0;  // pooled indices
};

// Real-only triplet; templates never appear.
struct Triplet {
  int anchor_class = 0, anchor = 0;
  int positive = 0;  // same class as anchor
  int negative_class = 0, negative = 0;
};

// Template anchor with real positive/negative.
struct TripletDa {
  int anchor_class = 0;
  int positive = 0;
  int negative_class = 0, negative = 0;
};

Quadruple sample_quadruple(const TrainingPool& pool, Rng& rng);
Triplet sample_triplet(const TrainingPool& pool, Rng& rng);
TripletDa sample_triplet_da(const TrainingPool& pool, Rng& rng);

struct TupleBatch {
  LossVariant mode = LossVariant::HingeM5;
  std::vector<Quadruple> quadruples;
  std::vector<Triplet> triplets;
  std::vector<TripletDa> das;

  int size() const {
    return static_cast<int>(quadruples.size() + triplets.size() + das.size());
  }
  // images routed to each tower per forward pass
  int template_tower_images() const {
    return static_cast<int>(2 * quadruples.size() + das.size());
  }
  int real_tower_images() const {
    return static_cast<int>(2 * quadruples.size() + 3 * triplets.size() + 2 * das.size());
  }
};

TupleBatch make_batch(const TrainingPool& pool, Rng& rng, int batch_size, LossVariant mode);

}  // namespace quadnet
