#pragma once

#include <algorithm>
#include <vector>

#include "duet/common.hpp"

namespace duet {

// Owning n-d buffer. Kernels work on raw pointers + dims; this just keeps a
// shape next to the storage and zero-fills on resize.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) { resize(std::move(s)); }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            DUET_CHECK(d >= 0, "tensor dims must be non-negative");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    void resize(std::vector<int> s) {
        shape = std::move(s);
        v.assign(numel_of(shape), T(0));
    }

    size_t numel() const { return v.size(); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    T& operator[](size_t i) { return v[i]; }
    const T& operator[](size_t i) const { return v[i]; }
    void zero() { std::fill(v.begin(), v.end(), T(0)); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
};

}  // namespace duet
