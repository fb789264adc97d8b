#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "cvgan/tensor.hpp"

namespace cvgan {

// Reverse-mode gradient tape. Ops record nodes in execution order (which is a
// topological order), so the backward sweep is a single reverse pass that
// visits each node exactly once. One tape per training step; never shared
// across threads.
template <typename T>
class TapeT {
public:
    using BackFn = std::function<void(TapeT&, const std::vector<T>&)>;

    TapeT() = default;
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    static TapeT*& active_slot() {
        thread_local TapeT* active = nullptr;
        return active;
    }
    static TapeT* active() { return active_slot(); }

    bool tracks(const TensorT<T>& t) const { return t.node() >= 0 || t.requires_grad(); }

    // Node id for a tensor entering an op; registers requires_grad leaves on
    // first sight, returns kNoNode for constants.
    int64_t id_of(const TensorT<T>& t) {
        if (t.node() >= 0) return t.node();
        if (!t.requires_grad()) return TensorT<T>::kNoNode;
        auto it = leaf_ids_.find(t.storage_id());
        if (it != leaf_ids_.end()) return it->second;
        int64_t id = add_node(t.size());
        leaf_ids_.emplace(t.storage_id(), id);
        return id;
    }

    int64_t record(size_t out_numel, BackFn fn) {
        int64_t id = add_node(out_numel);
        nodes_[static_cast<size_t>(id)].backward = std::move(fn);
        return id;
    }

    // Gradient buffer of a node, allocated (zeroed) on first touch.
    std::vector<T>& grad_buf(int64_t id) {
        auto& g = grads_[static_cast<size_t>(id)];
        if (g.empty()) g.assign(nodes_[static_cast<size_t>(id)].out_numel, T(0));
        return g;
    }

    // Runs the reverse sweep from a scalar loss. Resets previous gradients,
    // so the tape supports several backward calls from different roots.
    void backward(const TensorT<T>& loss) {
        if (loss.size() != 1) throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
        if (loss.node() < 0) throw ContractError("backward() loss is not on the tape");
        for (auto& g : grads_) g.clear();
        grad_buf(loss.node())[0] = T(1);
        for (int64_t id = loss.node(); id >= 0; --id) {
            auto& n = nodes_[static_cast<size_t>(id)];
            auto& g = grads_[static_cast<size_t>(id)];
            if (g.empty() || !n.backward) continue;  // no gradient reached it / leaf
            n.backward(*this, g);
        }
    }

    // Gradient of a tensor after backward(); null when the tensor never
    // participated or no gradient flowed into it (treat as zero).
    const std::vector<T>* grad(const TensorT<T>& t) const {
        int64_t id = t.node();
        if (id < 0) {
            auto it = leaf_ids_.find(t.storage_id());
            if (it == leaf_ids_.end()) return nullptr;
            id = it->second;
        }
        const auto& g = grads_[static_cast<size_t>(id)];
        return g.empty() ? nullptr : &g;
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        size_t out_numel = 0;
        BackFn backward;  // empty for leaves
    };

    int64_t add_node(size_t out_numel) {
        nodes_.push_back(Node{out_numel, nullptr});
        grads_.emplace_back();
        return static_cast<int64_t>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;
    std::unordered_map<const void*, int64_t> leaf_ids_;
};

// RAII activation of a tape for the current thread.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(TapeT<T>& tape) : prev_(TapeT<T>::active_slot()) { TapeT<T>::active_slot() = &tape; }
    ~TapeScope() { TapeT<T>::active_slot() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    TapeT<T>* prev_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

}  // namespace cvgan
