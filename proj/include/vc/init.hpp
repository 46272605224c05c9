#ifndef VC_INIT_HPP
#define VC_INIT_HPP

#include <cmath>

#include "vc/rng.hpp"
#include "vc/tensor.hpp"

namespace vc {

// Gaussian weights scaled by 1/sqrt(fan_in) so pre-activations start near
// unit variance regardless of layer width.
template <class T>
Tensor<T> gaussian_init(std::vector<int> shape, int64_t fan_in, Rng& rng) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    T s = (T)(1.0 / std::sqrt((double)fan_in));
    for (int64_t i = 0; i < t.numel(); i++) t.at(i) = (T)rng.gaussian() * s;
    return t;
}

} // namespace vc

#endif
