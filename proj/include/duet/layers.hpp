#pragma once

// Parameter-bearing layers with hand-written forward/backward. Templated on
// the scalar so the finite-difference oracle can run everything in double.
// Gradients accumulate (+=); callers zero them between optimizer steps.

#include <functional>
#include <string>
#include <vector>

#include "duet/kernels.hpp"
#include "duet/tensor.hpp"

namespace duet {

// Walks (name, weights, grads) over every parameter vector of a module.
template <class T>
using ParamVisitor = std::function<void(const std::string&, std::vector<T>&, std::vector<T>&)>;

template <class T>
void fill_normal(std::vector<T>& v, Rng& rng, double scale) {
    for (auto& x : v) x = static_cast<T>(rng.normal() * scale);
}

// Dense layer, weights stored [in, out] (forward streams rows); a transposed
// copy wt [out, in] serves the backward-to-input pass and must be refreshed
// via sync() whenever w changes (init, optimizer step, checkpoint load).
template <class T>
struct Linear {
    int in = 0, out = 0;
    std::vector<T> w, b, wt, gw, gb;

    void init(int in_, int out_, Rng& rng, double scale = -1.0) {
        in = in_;
        out = out_;
        if (scale < 0) scale = 1.0 / std::sqrt(static_cast<double>(in));
        w.assign(static_cast<size_t>(in) * out, T(0));
        fill_normal(w, rng, scale);
        b.assign(out, T(0));
        alloc_rest();
    }

    void init_zero(int in_, int out_) {
        in = in_;
        out = out_;
        w.assign(static_cast<size_t>(in) * out, T(0));
        b.assign(out, T(0));
        alloc_rest();
    }

    void alloc_rest() {
        wt.assign(static_cast<size_t>(in) * out, T(0));
        gw.assign(static_cast<size_t>(in) * out, T(0));
        gb.assign(out, T(0));
        sync();
    }

    void sync() {
        for (int i = 0; i < in; i++)
            for (int o = 0; o < out; o++) wt[static_cast<size_t>(o) * in + i] = w[static_cast<size_t>(i) * out + o];
    }

    bool is_zero() const {
        for (T x : w)
            if (x != T(0)) return false;
        for (T x : b)
            if (x != T(0)) return false;
        return true;
    }

    void fwd(int M, const T* x, T* y) const {
        kern::gemm_nn(M, in, out, x, in, w.data(), out, y, out, false);
        kern::bias_add(M, out, y, out, b.data());
    }

    // dx (nullable) accumulates dy @ w^T; gw/gb accumulate.
    void bwd(int M, const T* x, const T* dy, T* dx) {
        if (dx) kern::gemm_nn(M, out, in, dy, out, wt.data(), in, dx, in, true);
        kern::gemm_tn_acc(M, in, out, x, in, dy, out, gw.data(), out);
        kern::bias_grad_acc(M, out, dy, out, gb.data());
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".w", w, gw);
        fn(prefix + ".b", b, gb);
    }
};

template <class T>
struct Embedding {
    int n = 0, dim = 0;
    std::vector<T> w, gw;

    void init(int n_, int dim_, Rng& rng, double scale = 1.0) {
        n = n_;
        dim = dim_;
        w.assign(static_cast<size_t>(n) * dim, T(0));
        fill_normal(w, rng, scale / std::sqrt(static_cast<double>(dim)));
        gw.assign(w.size(), T(0));
    }

    void fwd(const std::vector<int>& ids, T* y) const {
        for (size_t k = 0; k < ids.size(); k++) {
            DUET_CHECK(ids[k] >= 0 && ids[k] < n, "embedding id out of range");
            std::memcpy(y + k * dim, w.data() + static_cast<size_t>(ids[k]) * dim, sizeof(T) * dim);
        }
    }

    void bwd(const std::vector<int>& ids, const T* dy) {
        for (size_t k = 0; k < ids.size(); k++) {
            T* g = gw.data() + static_cast<size_t>(ids[k]) * dim;
            const T* d = dy + k * dim;
            for (int c = 0; c < dim; c++) g[c] += d[c];
        }
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) { fn(prefix + ".w", w, gw); }
};

template <class T>
struct Conv1d {
    int cin = 0, cout = 0, k = 0, stride = 1;
    std::vector<T> w, b, gw, gb;

    void init(int cin_, int cout_, int k_, int stride_, Rng& rng) {
        cin = cin_;
        cout = cout_;
        k = k_;
        stride = stride_;
        w.assign(static_cast<size_t>(cout) * cin * k, T(0));
        fill_normal(w, rng, 1.0 / std::sqrt(static_cast<double>(cin * k)));
        b.assign(cout, T(0));
        gw.assign(w.size(), T(0));
        gb.assign(cout, T(0));
    }

    int out_len(int L) const { return (L - k) / stride + 1; }

    void fwd(int L, const T* x, T* y) const {
        DUET_CHECK(L >= k, "conv1d: input shorter than kernel");
        kern::conv1d_fwd(cin, L, cout, k, stride, x, w.data(), b.data(), y);
    }

    void bwd(int L, const T* x, const T* dy, T* dx) {
        kern::conv1d_bwd(cin, L, cout, k, stride, x, w.data(), dy, dx, gw.data(), gb.data());
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".w", w, gw);
        fn(prefix + ".b", b, gb);
    }
};

}  // namespace duet
