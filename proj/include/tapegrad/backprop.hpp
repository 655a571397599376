#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tapegrad/ops.hpp"
#include "tapegrad/tape.hpp"

namespace tapegrad {

/// Caller-owned reusable storage for allocation-free backward passes.
///
/// `order` receives the non-leaf nodes reachable from the root in processing
/// order (reverse topological); `leaves` receives the reachable zero-child
/// nodes, which need no ordered processing. The visited bitmap is reset lazily
/// through an epoch counter so repeat calls avoid an O(n) clear. Buffers grow
/// on demand unless `fixed` is set, in which case an undersized buffer raises
/// a CapacityError naming the required size.
template <std::floating_point Scalar>
struct ScratchBuffers {
    std::vector<NodeIndex> order;
    std::vector<NodeIndex> leaves;
    std::vector<std::pair<NodeIndex, std::uint32_t>> stack;  // (node, child cursor)
    std::vector<std::uint32_t> visited;                      // epoch marks
    std::vector<Scalar> mul_scratch;                         // suffix products
    std::uint32_t epoch{0};
    bool fixed{false};

    ScratchBuffers() = default;

    /// Pre-sizes every buffer for a tape of `node_capacity` nodes whose widest
    /// node has `max_arity` children. With `fixed_capacity` set the buffers
    /// never grow afterwards.
    ScratchBuffers(std::size_t node_capacity, std::uint32_t max_arity,
                   bool fixed_capacity = false)
        : fixed(fixed_capacity) {
        order.reserve(node_capacity);
        leaves.reserve(node_capacity);
        stack.reserve(node_capacity);
        visited.resize(node_capacity, 0);
        mul_scratch.resize(max_arity);
    }

    /// Ensures capacity for the tape's current size. Called by
    /// backward_with_scratch; call it yourself to warm buffers up front so
    /// that the backward pass itself performs zero allocations.
    void prepare(const Tape<Scalar>& tape) {
        const std::size_t n = tape.size();
        if (visited.size() < n || mul_scratch.size() < tape.max_arity()) {
            if (fixed) {
                throw CapacityError("scratch buffers too small: need " + std::to_string(n) +
                                    " node slots and " + std::to_string(tape.max_arity()) +
                                    " multiplier slots");
            }
            if (visited.size() < n) {
                visited.resize(n, 0);
                order.reserve(n);
                leaves.reserve(n);
                stack.reserve(n);
            }
            if (mul_scratch.size() < tape.max_arity()) {
                mul_scratch.resize(tape.max_arity());
            }
        }
        order.clear();
        leaves.clear();
        stack.clear();
        ++epoch;
        if (epoch == 0) {  // epoch wrapped; do the one expensive clear
            std::fill(visited.begin(), visited.end(), 0u);
            epoch = 1;
        }
    }

    bool is_visited(NodeIndex i) const noexcept { return visited[i] == epoch; }
    void mark_visited(NodeIndex i) noexcept { visited[i] = epoch; }
};

namespace detail {

template <std::floating_point Scalar>
void collect_order_recursive(const Tape<Scalar>& tape, NodeIndex node,
                             std::vector<char>& visited, std::vector<NodeIndex>& postorder) {
    visited[node] = 1;
    for (NodeIndex c : tape.children_at(node)) {
        if (!visited[c]) {
            collect_order_recursive(tape, c, visited, postorder);
        }
    }
    postorder.push_back(node);
}

}  // namespace detail

/// Resets gradients in [first, last) to zero.
template <std::floating_point Scalar>
void zero_grads(Tape<Scalar>& tape, NodeIndex first, NodeIndex last) {
    if (first > last || last > tape.size()) {
        throw std::invalid_argument("zero_grads: bad range [" + std::to_string(first) + ", " +
                                    std::to_string(last) + ") on tape of size " +
                                    std::to_string(tape.size()));
    }
    std::span<Scalar> g = tape.grads_mut();
    for (NodeIndex i = first; i < last; ++i) g[i] = Scalar(0);
}

/// Standard backpropagation: grad(root) is seeded to 1, and every node
/// reachable from root receives d(root)/d(node), accumulated additively
/// across paths (and across repeated calls; zero first via zero_grads).
/// Forward values are never re-evaluated. This variant allocates transient
/// storage and derives the order by recursive traversal; use
/// backward_with_scratch for the allocation-free, recursion-free pass.
template <std::floating_point Scalar>
void backward(Tape<Scalar>& tape, ValueRef root) {
    if (root.index >= tape.size()) {
        throw InvalidHandle("backward: stale root index " + std::to_string(root.index));
    }
    std::vector<char> visited(tape.size(), 0);
    std::vector<NodeIndex> postorder;
    detail::collect_order_recursive(tape, root.index, visited, postorder);
    std::vector<Scalar> mul_scratch(tape.max_arity());
    tape.set_grad(root, Scalar(1));
    for (std::size_t k = postorder.size(); k-- > 0;) {
        detail::propagate_node(tape, postorder[k], std::span<Scalar>(mul_scratch));
    }
}

/// Backpropagation over caller-owned scratch storage. Produces gradients
/// bit-identical to backward() (same processing order, same accumulation
/// arithmetic), but the traversal is iterative over the explicit stack and,
/// once the buffers are warm, the call performs no storage allocation.
///
/// After the call, scratch.order holds the processed non-leaf nodes in
/// processing order and scratch.leaves the reachable zero-child nodes.
template <std::floating_point Scalar>
void backward_with_scratch(Tape<Scalar>& tape, ValueRef root, ScratchBuffers<Scalar>& scratch) {
    if (root.index >= tape.size()) {
        throw InvalidHandle("backward: stale root index " + std::to_string(root.index));
    }
    scratch.prepare(tape);

    // Iterative depth-first postorder from the root. Children are expanded in
    // stored order, which replays the recursive variant's visit sequence
    // exactly. Zero-child nodes go to the leaf buffer and skip ordered
    // processing; they have nothing to propagate.
    scratch.mark_visited(root.index);
    if (tape.children_at(root.index).empty()) {
        scratch.leaves.push_back(root.index);
    } else {
        scratch.stack.emplace_back(root.index, 0);
    }
    while (!scratch.stack.empty()) {
        const NodeIndex node = scratch.stack.back().first;
        const std::uint32_t cursor = scratch.stack.back().second;
        const std::span<const NodeIndex> kids = tape.children_at(node);
        if (cursor < kids.size()) {
            scratch.stack.back().second = cursor + 1;  // before any push invalidates back()
            const NodeIndex child = kids[cursor];
            if (!scratch.is_visited(child)) {
                scratch.mark_visited(child);
                if (tape.children_at(child).empty()) {
                    scratch.leaves.push_back(child);
                } else {
                    scratch.stack.emplace_back(child, 0);
                }
            }
        } else {
            scratch.order.push_back(node);
            scratch.stack.pop_back();
        }
    }

    // scratch.order is postorder (children first); propagate in reverse.
    tape.set_grad(root, Scalar(1));
    for (std::size_t k = scratch.order.size(); k-- > 0;) {
        detail::propagate_node(tape, scratch.order[k], std::span<Scalar>(scratch.mul_scratch));
    }
    // Flip to processing order so callers can replay the pass.
    std::reverse(scratch.order.begin(), scratch.order.end());
}

}  // namespace tapegrad
