#pragma once

#include <stdexcept>
#include <string>

#include "quadnet/tensor.hpp"

namespace quadnet {

enum class LossVariant { HingeM3, HingeM5, HingeM6, Contrastive5, Triplet, TripletDA };

inline const char* to_string(LossVariant v) {
  switch (v) {
    case LossVariant::HingeM3: return "hingem3";
    case LossVariant::HingeM5: return "hingem5";
    case LossVariant::HingeM6: return "hingem6";
    case LossVariant::Contrastive5: return "contrastive5";
    case LossVariant::Triplet: return "triplet";
    case LossVariant::TripletDA: return "triplet-da";
  }
  return "?";
}

inline LossVariant parse_loss_variant(const std::string& s) {
  if (s == "hingem3") return LossVariant::HingeM3;
  if (s == "hingem5") return LossVariant::HingeM5;
  if (s == "hingem6") return LossVariant::HingeM6;
  if (s == "contrastive5") return LossVariant::Contrastive5;
  if (s == "triplet") return LossVariant::Triplet;
  if (s == "triplet-da" || s == "tripletda") return LossVariant::TripletDA;
  throw std::invalid_argument("unknown loss variant '" + s + "'");
}

inline bool is_quadruple_variant(LossVariant v) {
  return v == LossVariant::HingeM3 || v == LossVariant::HingeM5 || v == LossVariant::HingeM6 ||
         v == LossVariant::Contrastive5;
}

// Margins: cross-class pairs are pushed to at least m apart, same-class
// pairs pulled to within m'. The pull radius sits strictly inside the
// push radius.
struct LossConfig {
  double push_margin = 1.0;  // m
  double pull_margin = 0.2;  // m'
  LossVariant variant = LossVariant::HingeM5;

  void validate() const {
    if (!(push_margin > 0.0)) throw std::invalid_argument("loss: push margin must be > 0");
    if (pull_margin < 0.0) throw std::invalid_argument("loss: pull margin must be >= 0");
    if (!(pull_margin < push_margin))
      throw std::invalid_argument("loss: pull margin must be strictly below push margin");
  }
};

// The four embedded vectors of one tuple: both templates through the
// template tower, both real samples through the real tower.
template <typename S>
struct QuadrupleEmbeddings {
  Tensor<S> t_a, t_b, x_a, x_b;
};

// max(0, m - d): zero once the pair is at least m apart.
template <typename S>
Tensor<S> push_loss(const Tensor<S>& d, S m) {
  return maximum(sub(m, d), S(0));
}

// max(0, d - m'): zero once the pair is within the pull radius.
template <typename S>
Tensor<S> pull_loss(const Tensor<S>& d, S m_pull) {
  return maximum(sub(d, m_pull), S(0));
}

// Three-term loss: separate the two anchors, pull each real sample onto
// its own anchor.
template <typename S>
Tensor<S> loss_hingem3(const QuadrupleEmbeddings<S>& q, const LossConfig& cfg) {
  const S m = static_cast<S>(cfg.push_margin);
  const S mp = static_cast<S>(cfg.pull_margin);
  Tensor<S> l = push_loss(euclidean_distance(q.t_a, q.t_b), m);
  l = add(l, pull_loss(euclidean_distance(q.t_a, q.x_a), mp));
  l = add(l, pull_loss(euclidean_distance(q.t_b, q.x_b), mp));
  return l;
}

// Adds the two cross-domain, cross-class push terms.
template <typename S>
Tensor<S> loss_hingem5(const QuadrupleEmbeddings<S>& q, const LossConfig& cfg) {
  const S m = static_cast<S>(cfg.push_margin);
  Tensor<S> l = loss_hingem3(q, cfg);
  l = add(l, push_loss(euclidean_distance(q.t_a, q.x_b), m));
  l = add(l, push_loss(euclidean_distance(q.x_a, q.t_b), m));
  return l;
}

// Adds the real-real push: all six pairwise relations engaged.
template <typename S>
Tensor<S> loss_hingem6(const QuadrupleEmbeddings<S>& q, const LossConfig& cfg) {
  const S m = static_cast<S>(cfg.push_margin);
  Tensor<S> l = loss_hingem5(q, cfg);
  l = add(l, push_loss(euclidean_distance(q.x_a, q.x_b), m));
  return l;
}

// Five-term variant with the hinge pulls replaced by the raw distances,
// so the attraction never saturates.
template <typename S>
Tensor<S> loss_contrastive5(const QuadrupleEmbeddings<S>& q, const LossConfig& cfg) {
  const S m = static_cast<S>(cfg.push_margin);
  Tensor<S> l = push_loss(euclidean_distance(q.t_a, q.t_b), m);
  l = add(l, euclidean_distance(q.t_a, q.x_a));
  l = add(l, euclidean_distance(q.t_b, q.x_b));
  l = add(l, push_loss(euclidean_distance(q.t_a, q.x_b), m));
  l = add(l, push_loss(euclidean_distance(q.x_a, q.t_b), m));
  return l;
}

// Margin-hinge triplet, shared by the plain and the template-anchored
// baselines.
template <typename S>
Tensor<S> loss_triplet(const Tensor<S>& anchor, const Tensor<S>& positive,
                       const Tensor<S>& negative, const LossConfig& cfg) {
  const S m = static_cast<S>(cfg.push_margin);
  const S mp = static_cast<S>(cfg.pull_margin);
  return add(push_loss(euclidean_distance(anchor, negative), m),
             pull_loss(euclidean_distance(anchor, positive), mp));
}

template <typename S>
Tensor<S> quadruple_loss(const QuadrupleEmbeddings<S>& q, const LossConfig& cfg) {
  switch (cfg.variant) {
    case LossVariant::HingeM3: return loss_hingem3(q, cfg);
    case LossVariant::HingeM5: return loss_hingem5(q, cfg);
    case LossVariant::HingeM6: return loss_hingem6(q, cfg);
    case LossVariant::Contrastive5: return loss_contrastive5(q, cfg);
    default:
      throw std::invalid_argument("quadruple_loss: variant is not a quadruple loss");
  }
}

}  // namespace quadnet
