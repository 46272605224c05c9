#ifndef VC_TENSOR_HPP
#define VC_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vc {

// Dense row-major tensor plus a tape of backward closures. Values are
// treated as immutable once an op has produced them; parameters are the
// exception and are only rewritten by the optimizer between tapes.
// T is float for training and double for gradient checking.

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream o;
    o << "[";
    for (size_t i = 0; i < s.size(); i++) o << (i ? "," : "") << s[i];
    o << "]";
    return o.str();
}

inline int64_t shape_numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

template <class T>
struct TensorData {
    std::vector<int> shape;
    std::vector<T> val;
    std::vector<T> grad;          // allocated iff requires_grad
    bool requires_grad = false;
    uint64_t tape_id = 0;         // tape that produced this tensor, 0 for leaves
};

template <class T>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorData<T>> d) : d_(std::move(d)) {}

    static Tensor zeros(std::vector<int> shape) {
        auto d = std::make_shared<TensorData<T>>();
        d->shape = std::move(shape);
        d->val.assign(shape_numel(d->shape), T(0));
        return Tensor(d);
    }

    static Tensor full(std::vector<int> shape, T v) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.d_->val) x = v;
        return t;
    }

    static Tensor from_data(std::vector<int> shape, std::vector<T> data) {
        if (shape_numel(shape) != (int64_t)data.size())
            throw std::invalid_argument("tensor: data size " + std::to_string(data.size()) +
                                        " does not fill shape " + shape_str(shape));
        auto d = std::make_shared<TensorData<T>>();
        d->shape = std::move(shape);
        d->val = std::move(data);
        return Tensor(d);
    }

    static Tensor scalar(T v) { return from_data({1}, {v}); }

    bool defined() const { return (bool)d_; }
    const std::vector<int>& shape() const { return d_->shape; }
    int dim(int i) const { return d_->shape[i]; }
    int rank() const { return (int)d_->shape.size(); }
    int64_t numel() const { return (int64_t)d_->val.size(); }

    T* data() { return d_->val.data(); }
    const T* data() const { return d_->val.data(); }
    std::vector<T>& vec() { return d_->val; }
    const std::vector<T>& vec() const { return d_->val; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool on = true) {
        d_->requires_grad = on;
        if (on && d_->grad.size() != d_->val.size()) d_->grad.assign(d_->val.size(), T(0));
        if (!on) d_->grad.clear();
    }
    T* grad() { return d_->grad.data(); }
    const T* grad() const { return d_->grad.data(); }
    std::vector<T>& grad_vec() { return d_->grad; }
    const std::vector<T>& grad_vec() const { return d_->grad; }
    void zero_grad() {
        for (auto& g : d_->grad) g = T(0);
    }

    T item() const {
        if (numel() != 1) throw std::runtime_error("item: tensor " + shape_str(d_->shape) + " is not scalar");
        return d_->val[0];
    }

    // flat accessors for tests and glue code
    T& at(int64_t i) { return d_->val[i]; }
    T at(int64_t i) const { return d_->val[i]; }

    std::shared_ptr<TensorData<T>> ptr() const { return d_; }

  private:
    std::shared_ptr<TensorData<T>> d_;
};

// Ordered record of executed ops. Backward replays the closures in exact
// reverse execution order, accumulating into .grad of every tensor that
// carries requires_grad. Reuse policy: a tape may record several forward
// passes and backward() may be called repeatedly (gradients keep
// accumulating); call clear() to drop the graph and zero_grad() on the
// leaves before the next step.
template <class T>
class Tape {
  public:
    Tape() : id_(next_id()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void set_recording(bool on) { recording_ = on; }
    bool recording() const { return recording_; }

    // Debug aid: scan every op output for NaN/Inf and fail loudly at the
    // op that produced it instead of letting the value propagate.
    void set_check_finite(bool on) { check_finite_ = on; }
    bool check_finite() const { return check_finite_; }

    uint64_t id() const { return id_; }
    size_t size() const { return nodes_.size(); }

    void push(std::function<void()> node) { nodes_.push_back(std::move(node)); }
    void register_output(std::shared_ptr<TensorData<T>> t) { outputs_.push_back(std::move(t)); }

    // Replays the recorded closures in reverse execution order. Grads of
    // tensors produced on this tape are reset first, so every call deposits
    // exactly one dL/dleaf into each leaf; leaf grads themselves accumulate
    // across calls and across forward passes recorded on the same tape.
    void backward(const Tensor<T>& loss) {
        if (loss.ptr()->tape_id != id_)
            throw std::runtime_error("backward: tensor was not produced on this tape");
        if (loss.numel() != 1)
            throw std::runtime_error("backward: loss " + shape_str(loss.shape()) + " is not scalar");
        if (!loss.requires_grad())
            throw std::runtime_error("backward: loss has no gradient path");
        for (auto& o : outputs_)
            for (auto& g : o->grad) g = T(0);
        loss.ptr()->grad[0] = T(1);
        for (size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
    }

    void clear() {
        nodes_.clear();
        outputs_.clear();
    }

  private:
    static uint64_t next_id() {
        static uint64_t c = 0;
        return ++c;
    }
    uint64_t id_;
    bool recording_ = true;
    bool check_finite_ = false;
    std::vector<std::function<void()>> nodes_;
    std::vector<std::shared_ptr<TensorData<T>>> outputs_;
};

namespace detail {

template <class T>
inline bool any_grad(std::initializer_list<const Tensor<T>*> ts) {
    for (auto* t : ts)
        if ((*t).requires_grad()) return true;
    return false;
}

template <class T>
inline void finish_op(Tape<T>& tape, Tensor<T>& out, bool track, const char* op) {
    if (tape.check_finite()) {
        for (const T& v : out.vec())
            if (!std::isfinite((double)v))
                throw std::runtime_error(std::string(op) + ": non-finite value in output");
    }
    if (tape.recording() && track) {
        out.ptr()->tape_id = tape.id();
        out.set_requires_grad(true);
        tape.register_output(out.ptr());
    }
}

} // namespace detail

// ---- elementwise ----

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = pa[i] + pb[i];
    bool track = detail::any_grad<T>({&a, &b});
    detail::finish_op(tape, out, track, "add");
    if (tape.recording() && track) {
        tape.push([da = a.ptr(), db = b.ptr(), o = out.ptr(), n] {
            if (da->requires_grad)
                for (int64_t i = 0; i < n; i++) da->grad[i] += o->grad[i];
            if (db->requires_grad)
                for (int64_t i = 0; i < n; i++) db->grad[i] += o->grad[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = pa[i] - pb[i];
    bool track = detail::any_grad<T>({&a, &b});
    detail::finish_op(tape, out, track, "sub");
    if (tape.recording() && track) {
        tape.push([da = a.ptr(), db = b.ptr(), o = out.ptr(), n] {
            if (da->requires_grad)
                for (int64_t i = 0; i < n; i++) da->grad[i] += o->grad[i];
            if (db->requires_grad)
                for (int64_t i = 0; i < n; i++) db->grad[i] -= o->grad[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = pa[i] * pb[i];
    bool track = detail::any_grad<T>({&a, &b});
    detail::finish_op(tape, out, track, "mul");
    if (tape.recording() && track) {
        tape.push([da = a.ptr(), db = b.ptr(), o = out.ptr(), n] {
            // fan-out safe: same tensor on both sides accumulates twice
            if (da->requires_grad)
                for (int64_t i = 0; i < n; i++) da->grad[i] += o->grad[i] * db->val[i];
            if (db->requires_grad)
                for (int64_t i = 0; i < n; i++) db->grad[i] += o->grad[i] * da->val[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = pa[i] * c;
    bool track = a.requires_grad();
    detail::finish_op(tape, out, track, "scale");
    if (tape.recording() && track) {
        tape.push([da = a.ptr(), o = out.ptr(), c, n] {
            for (int64_t i = 0; i < n; i++) da->grad[i] += o->grad[i] * c;
        });
    }
    return out;
}

template <class T>
Tensor<T> silu(Tape<T>& tape, const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) {
        T s = T(1) / (T(1) + std::exp(-pa[i]));
        po[i] = pa[i] * s;
    }
    bool track = a.requires_grad();
    detail::finish_op(tape, out, track, "silu");
    if (tape.recording() && track) {
        tape.push([da = a.ptr(), o = out.ptr(), n] {
            for (int64_t i = 0; i < n; i++) {
                T x = da->val[i];
                T s = T(1) / (T(1) + std::exp(-x));
                da->grad[i] += o->grad[i] * (s * (T(1) + x * (T(1) - s)));
            }
        });
    }
    return out;
}

// ---- reductions ----

template <class T>
Tensor<T> sum_all(Tape<T>& tape, const Tensor<T>& a) {
    T acc = T(0);
    const T* pa = a.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) acc += pa[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    bool track = a.requires_grad();
    detail::finish_op(tape, out, track, "sum_all");
    if (tape.recording() && track) {
        tape.push([da = a.ptr(), o = out.ptr(), n] {
            T g = o->grad[0];
            for (int64_t i = 0; i < n; i++) da->grad[i] += g;
        });
    }
    return out;
}

template <class T>
Tensor<T> mean_all(Tape<T>& tape, const Tensor<T>& a) {
    if (a.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
    Tensor<T> s = sum_all(tape, a);
    return scale(tape, s, T(1) / T(a.numel()));
}

// mean over the leading axis of a 2-d tensor: [L,D] -> [D]
template <class T>
Tensor<T> mean_rows(Tape<T>& tape, const Tensor<T>& a) {
    if (a.rank() != 2) throw std::invalid_argument("mean_rows: expected rank-2 input, got " + shape_str(a.shape()));
    int L = a.dim(0), D = a.dim(1);
    if (L == 0) throw std::invalid_argument("mean_rows: zero rows");
    Tensor<T> out = Tensor<T>::zeros({D});
    const T* pa = a.data();
    T* po = out.data();
    for (int l = 0; l < L; l++)
        for (int d = 0; d < D; d++) po[d] += pa[(int64_t)l * D + d];
    T inv = T(1) / T(L);
    for (int d = 0; d < D; d++) po[d] *= inv;
    bool track = a.requires_grad();
    detail::finish_op(tape, out, track, "mean_rows");
    if (tape.recording() && track) {
        tape.push([da = a.ptr(), o = out.ptr(), L, D, inv] {
            for (int l = 0; l < L; l++)
                for (int d = 0; d < D; d++) da->grad[(int64_t)l * D + d] += o->grad[d] * inv;
        });
    }
    return out;
}

// ---- matmul ----

// [L,D] x [D,M] -> [L,M]
template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: expected rank-2 inputs, got " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int L = a.dim(0), D = a.dim(1), M = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({L, M});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int i = 0; i < L; i++) {
        for (int k = 0; k < D; k++) {
            T av = pa[(int64_t)i * D + k];
            const T* br = pb + (int64_t)k * M;
            T* orow = po + (int64_t)i * M;
            for (int j = 0; j < M; j++) orow[j] += av * br[j];
        }
    }
    bool track = detail::any_grad<T>({&a, &b});
    detail::finish_op(tape, out, track, "matmul");
    if (tape.recording() && track) {
        tape.push([da = a.ptr(), db = b.ptr(), o = out.ptr(), L, D, M] {
            if (da->requires_grad) {
                // dA = dO . B^T
                for (int i = 0; i < L; i++)
                    for (int k = 0; k < D; k++) {
                        T acc = T(0);
                        const T* orow = o->grad.data() + (int64_t)i * M;
                        const T* brow = db->val.data() + (int64_t)k * M;
                        for (int j = 0; j < M; j++) acc += orow[j] * brow[j];
                        da->grad[(int64_t)i * D + k] += acc;
                    }
            }
            if (db->requires_grad) {
                // dB = A^T . dO
                for (int i = 0; i < L; i++) {
                    const T* orow = o->grad.data() + (int64_t)i * M;
                    for (int k = 0; k < D; k++) {
                        T av = da->val[(int64_t)i * D + k];
                        T* brow = db->grad.data() + (int64_t)k * M;
                        for (int j = 0; j < M; j++) brow[j] += av * orow[j];
                    }
                }
            }
        });
    }
    return out;
}

// Same scalars in a new shape. Copies, since tensors own their storage.
template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& a, std::vector<int> shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    if (n != a.numel())
        throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " has " + std::to_string(a.numel()) +
                                    " elements, target " + shape_str(shape) + " has " + std::to_string(n));
    Tensor<T> out = Tensor<T>::zeros(std::move(shape));
    std::copy(a.data(), a.data() + n, out.data());
    bool track = a.requires_grad();
    detail::finish_op(tape, out, track, "reshape");
    if (tape.recording() && track) {
        tape.push([da = a.ptr(), o = out.ptr(), n] {
            for (int64_t i = 0; i < n; i++) da->grad[i] += o->grad[i];
        });
    }
    return out;
}

// ---- concat ----

template <class T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    int r = parts[0].rank();
    if (axis < 0 || axis >= r) throw std::invalid_argument("concat: axis " + std::to_string(axis) + " out of range");
    std::vector<int> shape = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw std::invalid_argument("concat: rank mismatch");
        for (int i = 0; i < r; i++)
            if (i != axis && p.shape()[i] != shape[i])
                throw std::invalid_argument("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                            shape_str(shape) + " outside axis " + std::to_string(axis));
        total += p.shape()[axis];
    }
    shape[axis] = total;
    Tensor<T> out = Tensor<T>::zeros(shape);

    // outer = product of dims before axis, inner = product after
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; i++) outer *= shape[i];
    for (int i = axis + 1; i < r; i++) inner *= shape[i];
    int64_t out_stride = (int64_t)total * inner;

    int64_t off = 0;
    bool track = false;
    for (const auto& p : parts) {
        track = track || p.requires_grad();
        int64_t seg = (int64_t)p.shape()[axis] * inner;
        const T* ps = p.data();
        for (int64_t u = 0; u < outer; u++) {
            T* dst = out.data() + u * out_stride + off;
            const T* src = ps + u * seg;
            for (int64_t i = 0; i < seg; i++) dst[i] = src[i];
        }
        off += seg;
    }
    detail::finish_op(tape, out, track, "concat");
    if (tape.recording() && track) {
        std::vector<std::shared_ptr<TensorData<T>>> srcs;
        std::vector<int64_t> segs;
        for (const auto& p : parts) {
            srcs.push_back(p.ptr());
            segs.push_back((int64_t)p.shape()[axis] * inner);
        }
        tape.push([srcs, segs, o = out.ptr(), outer, out_stride] {
            int64_t off2 = 0;
            for (size_t pi = 0; pi < srcs.size(); pi++) {
                if (srcs[pi]->requires_grad) {
                    for (int64_t u = 0; u < outer; u++) {
                        const T* gsrc = o->grad.data() + u * out_stride + off2;
                        T* gdst = srcs[pi]->grad.data() + u * segs[pi];
                        for (int64_t i = 0; i < segs[pi]; i++) gdst[i] += gsrc[i];
                    }
                }
                off2 += segs[pi];
            }
        });
    }
    return out;
}

} // namespace vc

#endif
