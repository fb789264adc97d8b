#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cvgan/common.hpp"

namespace cvgan {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int e : s) n *= static_cast<size_t>(e);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline void check_shape_valid(const Shape& s) {
    for (int e : s) {
        if (e < 1) throw ShapeError("tensor extent must be >= 1, got shape " + shape_str(s));
    }
}

// Dense row-major tensor. Value semantics with shared storage: copies alias
// the same buffer, so treat tensors as immutable once they have entered a
// forward pass. T is float for training, double for gradient verification.
template <typename T>
class TensorT {
public:
    static constexpr int64_t kNoNode = -1;

    TensorT() : data_(std::make_shared<std::vector<T>>()) {}

    explicit TensorT(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        check_shape_valid(shape_);
        data_ = std::make_shared<std::vector<T>>(shape_numel(shape_), fill);
    }

    static TensorT from(Shape shape, std::vector<T> values) {
        check_shape_valid(shape);
        if (shape_numel(shape) != values.size())
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        TensorT t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<T>>(std::move(values));
        return t;
    }

    static TensorT scalar(T v) { return from({1}, {v}); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    size_t size() const { return data_->size(); }

    T* data() { return data_->data(); }
    const T* data() const { return data_->data(); }
    std::vector<T>& vec() { return *data_; }
    const std::vector<T>& vec() const { return *data_; }
    const void* storage_id() const { return static_cast<const void*>(data_.get()); }

    T& operator[](size_t i) { return (*data_)[i]; }
    const T& operator[](size_t i) const { return (*data_)[i]; }

    T item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
        return (*data_)[0];
    }

    bool requires_grad() const { return requires_grad_; }
    TensorT& set_requires_grad(bool v) {
        requires_grad_ = v;
        return *this;
    }

    int64_t node() const { return node_; }
    void set_node(int64_t n) { node_ = n; }

    // Same storage, no tape history: gradients stop here.
    TensorT detach() const {
        TensorT t = *this;
        t.node_ = kNoNode;
        t.requires_grad_ = false;
        return t;
    }

    // Row-major view with a different shape; shares storage.
    TensorT reshaped(Shape s) const;  // defined in ops.hpp (records on tape)

    // Deep copy of the buffer.
    TensorT clone() const {
        TensorT t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<T>>(*data_);
        t.requires_grad_ = requires_grad_;
        return t;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    bool requires_grad_ = false;
    int64_t node_ = kNoNode;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace cvgan
