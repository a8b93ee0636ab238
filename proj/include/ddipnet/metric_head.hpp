#pragma once

#include "ddipnet/tensor.hpp"

namespace ddipnet {

struct MarginConfig {
    double m = 0.5;
    /// Throws ConfigError when m is negative or not finite.
    void validate() const;
    bool operator==(const MarginConfig&) const = default;
};

/// R = F . S, [1 x f] . [f x c] -> [1 x c].
template <class T>
BasicTensor<T> project(const BasicTensor<T>& features, const BasicTensor<T>& discriminant);

/// Euclidean distance between two squashed embeddings, shape [1].
template <class T>
BasicTensor<T> pair_distance(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// D1 = |Q(R1) - Q(R3)|, anchor vs positive.
template <class T>
BasicTensor<T> positive_distance(const BasicTensor<T>& q_anchor, const BasicTensor<T>& q_positive) {
    return pair_distance(q_anchor, q_positive);
}

/// D2 = |Q(R1) - Q(R2)|, anchor vs negative.
template <class T>
BasicTensor<T> negative_distance(const BasicTensor<T>& q_anchor, const BasicTensor<T>& q_negative) {
    return pair_distance(q_anchor, q_negative);
}

/// max(0, d1 - d2 + m); the gradient is exactly zero on the inactive side.
template <class T>
BasicTensor<T> triplet_loss(const BasicTensor<T>& d1, const BasicTensor<T>& d2, const MarginConfig& cfg);

template <class T>
struct BasicTripletOutput {
    BasicTensor<T> loss;
    BasicTensor<T> d1;
    BasicTensor<T> d2;
};
using TripletOutput = BasicTripletOutput<float>;

/// project -> squash -> distances -> hinge, as one differentiable chain.
/// Member order follows the triple (anchor, negative, positive).
template <class T>
BasicTripletOutput<T> triplet_forward(const BasicTensor<T>& f_anchor, const BasicTensor<T>& f_negative,
                                      const BasicTensor<T>& f_positive,
                                      const BasicTensor<T>& discriminant, const MarginConfig& cfg);

}  // namespace ddipnet
