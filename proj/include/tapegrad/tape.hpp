#pragma once

#include <atomic>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tapegrad/errors.hpp"
#include "tapegrad/op_kind.hpp"

namespace tapegrad {

using NodeIndex = std::uint32_t;

/// Lightweight handle into one tape. Plain data: copyable, never owns storage,
/// carries no back-reference to the tape. Every operation takes the tape
/// explicitly.
struct ValueRef {
    NodeIndex index{0};

    friend constexpr bool operator==(ValueRef, ValueRef) = default;
};

constexpr NodeIndex raw_index(ValueRef v) noexcept { return v.index; }

/// Saved tape position. Rewinding to it discards every node created after the
/// capture point and rolls the child-index pool back with it.
struct Checkpoint {
    NodeIndex mark{0};
    std::size_t child_mark{0};
};

struct TapeConfig {
    std::size_t capacity{0};
    /// When set, no buffer grows after construction; exceeding capacity is a
    /// CapacityError, never a reallocation.
    bool fixed_capacity{false};
    /// When cleared, the name side table is never materialized and name
    /// lookups report absent.
    bool names_enabled{false};
    /// Capacity of the shared child-index pool. 0 derives 8x node capacity.
    /// Only meaningful in fixed-capacity mode; otherwise the pool grows.
    std::size_t child_capacity{0};
};

/// Contiguous arena of computation-graph nodes.
///
/// Storage is structure-of-arrays: values, gradients, op codes, constants and
/// child spans live in separate contiguous buffers so that backward passes and
/// range serialization scan sequentially. Child indices of all nodes share one
/// append-only pool addressed by per-node (offset, count).
///
/// Raw indices increase monotonically with construction; since an operation
/// can only reference already-built nodes, construction order is a valid
/// topological order. Values are computed eagerly at construction and are
/// never stale.
///
/// Index reservation uses atomic counters, so multiple threads may construct
/// disjoint subgraphs into one fixed-capacity tape simultaneously. Growth mode
/// requires a single writer. Rewind leaves the discarded slots as-is; handles
/// into a rewound region become invalid (index >= size()) until the range is
/// repopulated, after which stale-but-in-range handles are undetectable.
template <std::floating_point Scalar>
class Tape {
  public:
    using scalar_type = Scalar;

    explicit Tape(const TapeConfig& config)
        : fixed_capacity_(config.fixed_capacity),
          names_enabled_(config.names_enabled),
          capacity_(config.capacity),
          child_capacity_(config.child_capacity != 0 ? config.child_capacity
                                                     : config.capacity * 8) {
        if (config.capacity == 0) {
            throw std::invalid_argument("Tape: capacity must be >= 1");
        }
        values_.resize(capacity_);
        grads_.resize(capacity_);
        ops_.resize(capacity_);
        consts_.resize(capacity_);
        spans_.resize(capacity_);
        child_pool_.resize(child_capacity_);
        if (names_enabled_) {
            names_.resize(capacity_);
        }
    }

    explicit Tape(std::size_t capacity) : Tape(TapeConfig{.capacity = capacity}) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    NodeIndex size() const noexcept { return next_index_.load(std::memory_order_relaxed); }
    bool empty() const noexcept { return size() == 0; }
    std::size_t capacity() const noexcept { return capacity_; }
    bool fixed_capacity() const noexcept { return fixed_capacity_; }
    bool names_enabled() const noexcept { return names_enabled_; }

    /// High-water mark of the live node count since construction.
    NodeIndex peak_nodes() const noexcept { return peak_nodes_.load(std::memory_order_relaxed); }

    /// Current cursor into the shared child-index pool.
    std::size_t child_pool_size() const noexcept {
        return child_cursor_.load(std::memory_order_relaxed);
    }
    std::size_t peak_children() const noexcept {
        return peak_children_.load(std::memory_order_relaxed);
    }

    /// Largest child count of any node ever created. Sizes backward scratch.
    std::uint32_t max_arity() const noexcept { return max_arity_.load(std::memory_order_relaxed); }

    /// Bytes of arena storage touched at the high-water mark, accounted from
    /// the buffers themselves rather than OS counters.
    std::size_t peak_arena_bytes() const noexcept {
        const std::size_t per_node =
            2 * sizeof(Scalar) + sizeof(OpKind) + sizeof(Scalar) + sizeof(ChildSpan);
        return static_cast<std::size_t>(peak_nodes()) * per_node +
               peak_children() * sizeof(NodeIndex);
    }

    // ---- node construction ----

    /// Appends a node whose forward value has already been computed by the
    /// caller. `write_children` fills the reserved child-pool slots; this
    /// avoids staging child indices anywhere else first.
    template <typename ChildWriter>
    ValueRef emplace_with(OpKind op, Scalar value, std::size_t child_count,
                          ChildWriter&& write_children, Scalar constant = Scalar(0)) {
        const std::size_t child_offset = reserve_children(child_count);
        write_children(child_pool_.data() + child_offset);
        const NodeIndex index = reserve_node();
        values_[index] = value;
        grads_[index] = Scalar(0);
        ops_[index] = op;
        consts_[index] = constant;
        spans_[index] = ChildSpan{child_offset, static_cast<std::uint32_t>(child_count)};
        note_peaks(index, child_offset + child_count, child_count);
        return ValueRef{index};
    }

    /// Appends a node whose forward value has already been computed by the
    /// caller. Children must all be live. Returns the new node's handle.
    ValueRef emplace(OpKind op, Scalar value, std::span<const NodeIndex> children,
                     Scalar constant = Scalar(0)) {
        return emplace_with(
            op, value, children.size(),
            [&](NodeIndex* dst) {
                for (std::size_t i = 0; i < children.size(); ++i) dst[i] = children[i];
            },
            constant);
    }

    ValueRef emplace(OpKind op, Scalar value, std::span<const ValueRef> children,
                     Scalar constant = Scalar(0)) {
        return emplace_with(
            op, value, children.size(),
            [&](NodeIndex* dst) {
                for (std::size_t i = 0; i < children.size(); ++i) dst[i] = children[i].index;
            },
            constant);
    }

    ValueRef leaf(Scalar value) { return emplace(OpKind::Leaf, value, {}); }

    ValueRef leaf(Scalar value, std::string_view name) {
        ValueRef v = leaf(value);
        set_name(v, name);
        return v;
    }

    // ---- reads ----

    Scalar value_of(ValueRef v) const {
        check_live(v);
        return values_[v.index];
    }
    Scalar grad_of(ValueRef v) const {
        check_live(v);
        return grads_[v.index];
    }
    OpKind op_of(ValueRef v) const {
        check_live(v);
        return ops_[v.index];
    }
    Scalar constant_of(ValueRef v) const {
        check_live(v);
        return consts_[v.index];
    }
    std::span<const NodeIndex> children_of(ValueRef v) const {
        check_live(v);
        const ChildSpan s = spans_[v.index];
        return {child_pool_.data() + s.offset, s.count};
    }
    std::optional<std::string_view> name_of(ValueRef v) const {
        check_live(v);
        if (!names_enabled_ || names_[v.index].empty()) {
            return std::nullopt;
        }
        return std::string_view(names_[v.index]);
    }

    // ---- writes ----

    void set_value(ValueRef v, Scalar value) {
        check_live(v);
        values_[v.index] = value;
    }
    void set_grad(ValueRef v, Scalar g) {
        check_live(v);
        grads_[v.index] = g;
    }
    /// No-op when the name table is disabled.
    void set_name(ValueRef v, std::string_view name) {
        check_live(v);
        if (names_enabled_) {
            names_[v.index].assign(name);
        }
    }

    // ---- checkpoint / rewind ----

    Checkpoint checkpoint() const noexcept {
        return Checkpoint{size(), child_pool_size()};
    }

    /// Discards every node at index >= cp.mark. Values and gradients of
    /// surviving nodes are untouched; discarded slots are left as-is. The next
    /// created node reuses raw index cp.mark.
    void rewind(Checkpoint cp) {
        if (cp.mark > size()) {
            throw InvalidCheckpoint("rewind: checkpoint mark " + std::to_string(cp.mark) +
                                    " is ahead of tape size " + std::to_string(size()));
        }
        next_index_.store(cp.mark, std::memory_order_relaxed);
        child_cursor_.store(cp.child_mark, std::memory_order_relaxed);
    }

    // ---- raw buffer access (backward pass, serialization) ----

    std::span<const Scalar> values() const noexcept { return {values_.data(), size()}; }
    std::span<Scalar> values_mut() noexcept { return {values_.data(), size()}; }
    std::span<const Scalar> grads() const noexcept { return {grads_.data(), size()}; }
    std::span<Scalar> grads_mut() noexcept { return {grads_.data(), size()}; }
    std::span<const OpKind> ops() const noexcept { return {ops_.data(), size()}; }

    Scalar value_at(NodeIndex i) const noexcept { return values_[i]; }
    Scalar grad_at(NodeIndex i) const noexcept { return grads_[i]; }
    void add_grad(NodeIndex i, Scalar delta) noexcept { grads_[i] += delta; }
    OpKind op_at(NodeIndex i) const noexcept { return ops_[i]; }
    Scalar constant_at(NodeIndex i) const noexcept { return consts_[i]; }
    std::span<const NodeIndex> children_at(NodeIndex i) const noexcept {
        const ChildSpan s = spans_[i];
        return {child_pool_.data() + s.offset, s.count};
    }

  private:
    struct ChildSpan {
        std::size_t offset{0};
        std::uint32_t count{0};
    };

    void check_live(ValueRef v) const {
        if (v.index >= size()) {
            throw InvalidHandle("stale handle: node index " + std::to_string(v.index) +
                                " >= live count " + std::to_string(size()));
        }
    }

    NodeIndex reserve_node() {
        const NodeIndex index = next_index_.fetch_add(1, std::memory_order_relaxed);
        if (index >= capacity_) {
            if (fixed_capacity_) {
                next_index_.fetch_sub(1, std::memory_order_relaxed);
                throw CapacityError("tape capacity exceeded: " + std::to_string(capacity_) +
                                    " nodes");
            }
            grow_nodes(static_cast<std::size_t>(index) + 1);
        }
        return index;
    }

    std::size_t reserve_children(std::size_t count) {
        const std::size_t offset = child_cursor_.fetch_add(count, std::memory_order_relaxed);
        if (offset + count > child_capacity_) {
            if (fixed_capacity_) {
                child_cursor_.fetch_sub(count, std::memory_order_relaxed);
                throw CapacityError("tape child pool capacity exceeded: " +
                                    std::to_string(child_capacity_) + " entries");
            }
            grow_children(offset + count);
        }
        return offset;
    }

    void grow_nodes(std::size_t needed) {
        std::size_t next = capacity_ * 2;
        if (next < needed) next = needed;
        values_.resize(next);
        grads_.resize(next);
        ops_.resize(next);
        consts_.resize(next);
        spans_.resize(next);
        if (names_enabled_) names_.resize(next);
        capacity_ = next;
    }

    void grow_children(std::size_t needed) {
        std::size_t next = child_capacity_ * 2;
        if (next < needed) next = needed;
        child_pool_.resize(next);
        child_capacity_ = next;
    }

    template <typename T>
    static void raise_to(std::atomic<T>& slot, T candidate) noexcept {
        T seen = slot.load(std::memory_order_relaxed);
        while (candidate > seen &&
               !slot.compare_exchange_weak(seen, candidate, std::memory_order_relaxed)) {
        }
    }

    void note_peaks(NodeIndex index, std::size_t child_end, std::size_t arity) noexcept {
        raise_to(peak_nodes_, index + 1);
        raise_to(peak_children_, child_end);
        raise_to(max_arity_, static_cast<std::uint32_t>(arity));
    }

    bool fixed_capacity_;
    bool names_enabled_;
    std::size_t capacity_;
    std::size_t child_capacity_;

    std::vector<Scalar> values_;
    std::vector<Scalar> grads_;
    std::vector<OpKind> ops_;
    std::vector<Scalar> consts_;
    std::vector<ChildSpan> spans_;
    std::vector<NodeIndex> child_pool_;
    std::vector<std::string> names_;

    std::atomic<NodeIndex> next_index_{0};
    std::atomic<std::size_t> child_cursor_{0};

    std::atomic<NodeIndex> peak_nodes_{0};
    std::atomic<std::size_t> peak_children_{0};
    std::atomic<std::uint32_t> max_arity_{0};
};

}  // namespace tapegrad
