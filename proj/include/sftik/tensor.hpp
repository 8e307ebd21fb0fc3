#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sftik/errors.hpp"

namespace sftik {

// Global toggle for NaN/Inf detection. Off by default; ops validate their
// outputs when enabled. Tests and debugging turn it on.
inline std::atomic<bool>& finite_checks_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}
inline void set_finite_checks(bool on) { finite_checks_flag().store(on); }
inline bool finite_checks_enabled() { return finite_checks_flag().load(std::memory_order_relaxed); }

namespace detail {

inline uint64_t next_serial() {
    static std::atomic<uint64_t> counter{1};
    return counter.fetch_add(1);
}

inline std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

}  // namespace detail

// Dense storage behind a Tensor. Shared so that tensor copies alias the same
// values and the same gradient slot.
template <class T>
struct TensorData {
    std::vector<int64_t> shape;
    std::vector<T> values;
    std::vector<T> grad;          // empty until a gradient is accumulated
    bool requires_grad = false;
    uint64_t tape_id = 0;         // tape that produced this tensor; 0 = leaf
    uint64_t serial = detail::next_serial();
};

// n-dimensional dense array of real values, row-major. Copies are shallow;
// clone() makes a deep copy.
template <class T>
class Tensor {
public:
    using Data = TensorData<T>;

    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape) {
        return Tensor(std::move(shape), T(0));
    }

    static Tensor full(std::vector<int64_t> shape, T value) {
        return Tensor(std::move(shape), value);
    }

    static Tensor scalar(T value) {
        Tensor t(std::vector<int64_t>{}, value);
        return t;
    }

    static Tensor from_vector(std::vector<int64_t> shape, std::vector<T> values) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw ShapeError("tensor shape entries must be non-negative, got " + detail::shape_str(shape));
            n *= d;
        }
        if (shape.empty()) n = 1;
        if (n != static_cast<int64_t>(values.size())) {
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + detail::shape_str(shape));
        }
        Tensor t;
        t.d_ = std::make_shared<Data>();
        t.d_->shape = std::move(shape);
        t.d_->values = std::move(values);
        t.check_finite("from_vector");
        return t;
    }

    bool valid() const { return d_ != nullptr; }

    const std::vector<int64_t>& shape() const { return d_->shape; }
    int64_t dim(size_t i) const { return d_->shape.at(i); }
    size_t rank() const { return d_->shape.size(); }
    int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }
    bool is_scalar() const { return numel() == 1; }

    // 2-D convenience accessors.
    int64_t rows() const { return d_->shape.at(0); }
    int64_t cols() const { return d_->shape.at(1); }

    std::span<const T> data() const { return d_->values; }
    std::span<T> mutable_data() { return d_->values; }
    T item() const {
        if (!is_scalar()) throw ContractError("item() requires a single-element tensor, shape is " + shape_str());
        return d_->values[0];
    }

    Tensor& set_requires_grad(bool on = true) {
        d_->requires_grad = on;
        return *this;
    }
    bool requires_grad() const { return d_->requires_grad; }

    bool has_grad() const { return !d_->grad.empty(); }
    std::span<const T> grad() const { return d_->grad; }
    std::span<T> ensure_grad() {
        if (d_->grad.empty()) d_->grad.assign(d_->values.size(), T(0));
        return d_->grad;
    }
    void zero_grad() { std::fill(d_->grad.begin(), d_->grad.end(), T(0)); }

    uint64_t tape_id() const { return d_->tape_id; }
    uint64_t serial() const { return d_->serial; }

    // Deep copy of values; gradient and tape lineage are not copied.
    Tensor clone() const {
        Tensor t;
        t.d_ = std::make_shared<Data>();
        t.d_->shape = d_->shape;
        t.d_->values = d_->values;
        t.d_->requires_grad = d_->requires_grad;
        return t;
    }

    std::string shape_str() const { return detail::shape_str(d_->shape); }

    const std::shared_ptr<Data>& storage() const { return d_; }

    void check_finite(const char* where) const {
        if (!finite_checks_enabled()) return;
        for (const T& v : d_->values) {
            if (!std::isfinite(static_cast<double>(v))) {
                throw NumericError(std::string(where) + ": non-finite value in tensor " + shape_str());
            }
        }
    }

private:
    Tensor(std::vector<int64_t> shape, T fill) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw ShapeError("tensor shape entries must be non-negative, got " + detail::shape_str(shape));
            n *= d;
        }
        d_ = std::make_shared<Data>();
        d_->shape = std::move(shape);
        d_->values.assign(static_cast<size_t>(n), fill);
    }

    std::shared_ptr<Data> d_;
};

// Destination for gradients during backward. The default sink routes into the
// tensors' own grad slots; per-sample sinks keep gradients in a private map so
// batched backward passes can be reduced in a fixed order afterwards.
template <class T>
class GradSink {
public:
    virtual ~GradSink() = default;
    // Gradient buffer for a storage, allocated and zeroed on first access.
    virtual std::span<T> accum(const std::shared_ptr<TensorData<T>>& s) = 0;
    // Existing gradient buffer, or an empty span if none was accumulated.
    virtual std::span<const T> read(const std::shared_ptr<TensorData<T>>& s) = 0;
};

template <class T>
class StorageGradSink final : public GradSink<T> {
public:
    std::span<T> accum(const std::shared_ptr<TensorData<T>>& s) override {
        if (s->grad.empty()) s->grad.assign(s->values.size(), T(0));
        return s->grad;
    }
    std::span<const T> read(const std::shared_ptr<TensorData<T>>& s) override {
        return s->grad;
    }
};

template <class T>
class MapGradSink final : public GradSink<T> {
public:
    std::span<T> accum(const std::shared_ptr<TensorData<T>>& s) override {
        auto it = grads_.find(s.get());
        if (it == grads_.end()) {
            it = grads_.emplace(s.get(), std::vector<T>(s->values.size(), T(0))).first;
            keepalive_.push_back(s);
        }
        return it->second;
    }
    std::span<const T> read(const std::shared_ptr<TensorData<T>>& s) override {
        auto it = grads_.find(s.get());
        if (it == grads_.end()) return {};
        return it->second;
    }
    // Gradient held for a tensor, empty if none.
    std::span<const T> find(const Tensor<T>& t) const {
        auto it = grads_.find(t.storage().get());
        if (it == grads_.end()) return {};
        return it->second;
    }

private:
    std::unordered_map<TensorData<T>*, std::vector<T>> grads_;
    std::vector<std::shared_ptr<TensorData<T>>> keepalive_;
};

// Reverse-mode autodiff tape: an ordered list of recorded operations. Inputs
// of every node precede it by construction, and backward() replays nodes in
// strict reverse construction order, accumulating gradients additively.
template <class T>
class Tape {
public:
    struct NodeInfo {
        const char* op;
        uint64_t out_serial;
        std::vector<uint64_t> in_serials;
    };

    Tape() : id_(next_id()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    uint64_t id() const { return id_; }
    size_t node_count() const { return nodes_.size(); }
    const std::vector<NodeInfo>& node_infos() const { return infos_; }

    void record(const char* op, std::vector<uint64_t> in_serials, uint64_t out_serial,
                std::function<void(GradSink<T>&)> fn) {
        nodes_.push_back(std::move(fn));
        infos_.push_back(NodeInfo{op, out_serial, std::move(in_serials)});
    }

    // Seeds d(loss)/d(loss) = seed and replays the tape in reverse into sink.
    void backward(const Tensor<T>& loss, T seed, GradSink<T>& sink) {
        if (!loss.valid() || !loss.is_scalar()) {
            throw ContractError("backward requires a scalar loss, got shape " +
                                (loss.valid() ? loss.shape_str() : std::string("<empty>")));
        }
        if (loss.tape_id() != id_) {
            throw LineageError("loss tensor was not produced on this tape (tape " +
                               std::to_string(id_) + ", loss tape " + std::to_string(loss.tape_id()) + ")");
        }
        sink.accum(loss.storage())[0] += seed;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(sink);
    }

    void backward(const Tensor<T>& loss, T seed = T(1)) {
        StorageGradSink<T> sink;
        backward(loss, seed, sink);
    }

    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(current_ptr()) { current_ptr() = &t; }
        ~Scope() { current_ptr() = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* current() { return current_ptr(); }

private:
    static Tape*& current_ptr() {
        thread_local Tape* cur = nullptr;
        return cur;
    }
    static uint64_t next_id() {
        static std::atomic<uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    uint64_t id_;
    std::vector<std::function<void(GradSink<T>&)>> nodes_;
    std::vector<NodeInfo> infos_;
};

namespace detail {

// A tensor participates in gradient flow if it is a parameter leaf or was
// produced by a recorded op on the active tape.
template <class T>
bool needs_grad(const Tensor<T>& t) {
    return t.requires_grad() || t.tape_id() != 0;
}

// Records a backward closure for `out` if a tape is active and any input
// needs gradients. The closure receives the output gradient span; it is not
// invoked when no gradient reached the output.
template <class T, class F>
void record_op(const char* op, const std::vector<Tensor<T>>& inputs, Tensor<T>& out, F&& backward_fn) {
    Tape<T>* tape = Tape<T>::current();
    if (!tape) return;
    bool any = false;
    std::vector<uint64_t> in_serials;
    in_serials.reserve(inputs.size());
    for (const Tensor<T>& in : inputs) {
        if (in.tape_id() != 0 && in.tape_id() != tape->id()) {
            throw LineageError(std::string(op) + ": input tensor belongs to tape " +
                               std::to_string(in.tape_id()) + ", current tape is " +
                               std::to_string(tape->id()));
        }
        in_serials.push_back(in.serial());
        any = any || needs_grad(in);
    }
    if (!any) return;
    out.storage()->tape_id = tape->id();
    auto out_storage = out.storage();
    tape->record(op, std::move(in_serials), out.serial(),
                 [out_storage, fn = std::forward<F>(backward_fn)](GradSink<T>& sink) {
                     std::span<const T> og = sink.read(out_storage);
                     if (og.empty()) return;
                     fn(sink, og);
                 });
}

}  // namespace detail

}  // namespace sftik
