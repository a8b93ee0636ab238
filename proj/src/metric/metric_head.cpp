#include "ddipnet/metric_head.hpp"

#include <cmath>
#include <string>

#include "ddipnet/ops.hpp"

namespace ddipnet {

void MarginConfig::validate() const {
    if (!std::isfinite(m) || m < 0.0)
        throw ConfigError("margin must be a finite non-negative number, got " + std::to_string(m));
}

template <class T>
BasicTensor<T> project(const BasicTensor<T>& features, const BasicTensor<T>& discriminant) {
    if (features.rank() != 2 || features.dim(0) != 1 || discriminant.rank() != 2 ||
        features.dim(1) != discriminant.dim(0))
        throw DimensionError("project: feature row " + shape_str(features.shape()) +
                             " does not match discriminant matrix " +
                             shape_str(discriminant.shape()));
    return matmul(features, discriminant);
}

template <class T>
BasicTensor<T> pair_distance(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("distance: embedding widths differ, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    return l2_norm(sub(a, b));
}

template <class T>
BasicTensor<T> triplet_loss(const BasicTensor<T>& d1, const BasicTensor<T>& d2, const MarginConfig& cfg) {
    cfg.validate();
    return relu(add_scalar(sub(d1, d2), static_cast<T>(cfg.m)));
}

template <class T>
BasicTripletOutput<T> triplet_forward(const BasicTensor<T>& f_anchor, const BasicTensor<T>& f_negative,
                                      const BasicTensor<T>& f_positive,
                                      const BasicTensor<T>& discriminant, const MarginConfig& cfg) {
    const auto q1 = squash(project(f_anchor, discriminant));
    const auto q2 = squash(project(f_negative, discriminant));
    const auto q3 = squash(project(f_positive, discriminant));
    auto d1 = positive_distance(q1, q3);
    auto d2 = negative_distance(q1, q2);
    auto loss = triplet_loss(d1, d2, cfg);
    return {std::move(loss), std::move(d1), std::move(d2)};
}

#define DDIPNET_INSTANTIATE_METRIC(T)                                                              \
    template BasicTensor<T> project(const BasicTensor<T>&, const BasicTensor<T>&);                 \
    template BasicTensor<T> pair_distance(const BasicTensor<T>&, const BasicTensor<T>&);           \
    template BasicTensor<T> triplet_loss(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                         const MarginConfig&);                                     \
    template BasicTripletOutput<T> triplet_forward(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                                   const BasicTensor<T>&, const BasicTensor<T>&,   \
                                                   const MarginConfig&);

DDIPNET_INSTANTIATE_METRIC(float)
DDIPNET_INSTANTIATE_METRIC(double)

#undef DDIPNET_INSTANTIATE_METRIC

}  // namespace ddipnet
