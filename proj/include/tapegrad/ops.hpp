#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include "tapegrad/tape.hpp"

namespace tapegrad {

namespace detail {

template <std::floating_point Scalar>
[[noreturn]] void throw_domain(OpKind kind, Scalar offending) {
    throw std::domain_error(std::string(op_name(kind)) + ": input " +
                            std::to_string(static_cast<double>(offending)) +
                            " is outside the operator domain");
}

template <std::floating_point Scalar>
Scalar require_positive(OpKind kind, Scalar x) {
    if (!(x > Scalar(0))) throw_domain(kind, x);
    return x;
}

template <std::floating_point Scalar>
Scalar require_nonzero(OpKind kind, Scalar x) {
    if (x == Scalar(0)) throw_domain(kind, x);
    return x;
}

}  // namespace detail

// ---- unary ----

template <std::floating_point Scalar>
ValueRef unary(Tape<Scalar>& tape, OpKind kind, ValueRef x) {
    if (arity_of(kind) != OpArity::Unary || kind == OpKind::MulByConst) {
        throw std::invalid_argument(std::string("unary: op ") + std::string(op_name(kind)) +
                                    " is not a plain unary operator");
    }
    const Scalar v = tape.value_of(x);
    Scalar y = 0;
    switch (kind) {
        case OpKind::Relu: y = v > Scalar(0) ? v : Scalar(0); break;
        case OpKind::Tanh: y = std::tanh(v); break;
        case OpKind::Exp: y = std::exp(v); break;
        case OpKind::NegLog: y = -std::log(detail::require_positive(kind, v)); break;
        case OpKind::Sigmoid: y = Scalar(1) / (Scalar(1) + std::exp(-v)); break;
        case OpKind::Inv: y = Scalar(1) / detail::require_nonzero(kind, v); break;
        case OpKind::Sqr: y = v * v; break;
        case OpKind::Cub: y = v * v * v; break;
        case OpKind::Log: y = std::log(detail::require_positive(kind, v)); break;
        case OpKind::Sqrt: y = std::sqrt(detail::require_positive(kind, v)); break;
        case OpKind::InvSqrt: y = Scalar(1) / std::sqrt(detail::require_positive(kind, v)); break;
        default: break;
    }
    const std::array<NodeIndex, 1> kids{x.index};
    return tape.emplace(kind, y, kids);
}

template <std::floating_point Scalar>
ValueRef relu(Tape<Scalar>& t, ValueRef x) { return unary(t, OpKind::Relu, x); }
template <std::floating_point Scalar>
ValueRef tanh(Tape<Scalar>& t, ValueRef x) { return unary(t, OpKind::Tanh, x); }
template <std::floating_point Scalar>
ValueRef exp(Tape<Scalar>& t, ValueRef x) { return unary(t, OpKind::Exp, x); }
template <std::floating_point Scalar>
ValueRef negative_log(Tape<Scalar>& t, ValueRef x) { return unary(t, OpKind::NegLog, x); }
template <std::floating_point Scalar>
ValueRef sigmoid(Tape<Scalar>& t, ValueRef x) { return unary(t, OpKind::Sigmoid, x); }
template <std::floating_point Scalar>
ValueRef inv(Tape<Scalar>& t, ValueRef x) { return unary(t, OpKind::Inv, x); }
template <std::floating_point Scalar>
ValueRef sqr(Tape<Scalar>& t, ValueRef x) { return unary(t, OpKind::Sqr, x); }
template <std::floating_point Scalar>
ValueRef pow3(Tape<Scalar>& t, ValueRef x) { return unary(t, OpKind::Cub, x); }
template <std::floating_point Scalar>
ValueRef log(Tape<Scalar>& t, ValueRef x) { return unary(t, OpKind::Log, x); }
template <std::floating_point Scalar>
ValueRef sqrt(Tape<Scalar>& t, ValueRef x) { return unary(t, OpKind::Sqrt, x); }
template <std::floating_point Scalar>
ValueRef inv_sqrt(Tape<Scalar>& t, ValueRef x) { return unary(t, OpKind::InvSqrt, x); }

// ---- binary ----

template <std::floating_point Scalar>
ValueRef binary(Tape<Scalar>& tape, OpKind kind, ValueRef x, ValueRef y) {
    if (arity_of(kind) != OpArity::Binary) {
        throw std::invalid_argument(std::string("binary: op ") + std::string(op_name(kind)) +
                                    " is not a binary operator");
    }
    const Scalar a = tape.value_of(x);
    const Scalar b = tape.value_of(y);
    Scalar r = 0;
    switch (kind) {
        case OpKind::Add: r = a + b; break;
        case OpKind::Sub: r = a - b; break;
        case OpKind::Mul: r = a * b; break;
        case OpKind::Div: r = a / detail::require_nonzero(kind, b); break;
        case OpKind::Mean: r = (a + b) / Scalar(2); break;
        case OpKind::AddSquares: r = a * a + b * b; break;
        case OpKind::MeanSquares: r = (a * a + b * b) / Scalar(2); break;
        case OpKind::NegativeMean: r = -(a + b) / Scalar(2); break;
        default: break;
    }
    const std::array<NodeIndex, 2> kids{x.index, y.index};
    return tape.emplace(kind, r, kids);
}

template <std::floating_point Scalar>
ValueRef add(Tape<Scalar>& t, ValueRef x, ValueRef y) { return binary(t, OpKind::Add, x, y); }
template <std::floating_point Scalar>
ValueRef sub(Tape<Scalar>& t, ValueRef x, ValueRef y) { return binary(t, OpKind::Sub, x, y); }
template <std::floating_point Scalar>
ValueRef mul(Tape<Scalar>& t, ValueRef x, ValueRef y) { return binary(t, OpKind::Mul, x, y); }
template <std::floating_point Scalar>
ValueRef div(Tape<Scalar>& t, ValueRef x, ValueRef y) { return binary(t, OpKind::Div, x, y); }
template <std::floating_point Scalar>
ValueRef mean(Tape<Scalar>& t, ValueRef x, ValueRef y) { return binary(t, OpKind::Mean, x, y); }
template <std::floating_point Scalar>
ValueRef add_squares(Tape<Scalar>& t, ValueRef x, ValueRef y) {
    return binary(t, OpKind::AddSquares, x, y);
}
template <std::floating_point Scalar>
ValueRef mean_squares(Tape<Scalar>& t, ValueRef x, ValueRef y) {
    return binary(t, OpKind::MeanSquares, x, y);
}
template <std::floating_point Scalar>
ValueRef negative_mean(Tape<Scalar>& t, ValueRef x, ValueRef y) {
    return binary(t, OpKind::NegativeMean, x, y);
}

/// x * c for a constant c. The constant lives in the node's constant slot and
/// receives no gradient.
template <std::floating_point Scalar>
ValueRef mul_by_constant(Tape<Scalar>& tape, ValueRef x, Scalar c) {
    const std::array<NodeIndex, 1> kids{x.index};
    return tape.emplace(OpKind::MulByConst, tape.value_of(x) * c, kids, c);
}

// ---- varying arity ----

template <std::floating_point Scalar>
ValueRef varying(Tape<Scalar>& tape, OpKind kind, std::span<const ValueRef> xs) {
    if (arity_of(kind) != OpArity::Varying) {
        throw std::invalid_argument(std::string("varying: op ") + std::string(op_name(kind)) +
                                    " is not a varying-arity operator");
    }
    if (kind == OpKind::InnerProductNoBias || kind == OpKind::InnerProductWithBias) {
        throw std::invalid_argument("varying: inner products take two sequences; "
                                    "use inner_product / inner_product_with_bias");
    }
    if (xs.empty()) {
        throw std::invalid_argument(std::string(op_name(kind)) + ": empty input sequence");
    }
    const auto n = static_cast<Scalar>(xs.size());
    Scalar acc = 0;
    switch (kind) {
        case OpKind::AddVarying:
        case OpKind::MeanVarying:
        case OpKind::NegativeMeanVarying:
            for (ValueRef x : xs) acc += tape.value_of(x);
            if (kind == OpKind::MeanVarying) acc /= n;
            if (kind == OpKind::NegativeMeanVarying) acc = -acc / n;
            break;
        case OpKind::SubVarying:
            acc = tape.value_of(xs[0]);
            for (std::size_t i = 1; i < xs.size(); ++i) acc -= tape.value_of(xs[i]);
            break;
        case OpKind::MulVarying:
            acc = Scalar(1);
            for (ValueRef x : xs) acc *= tape.value_of(x);
            break;
        case OpKind::SumOfSquaresVarying:
        case OpKind::MeanSquaresVarying:
            for (ValueRef x : xs) {
                const Scalar v = tape.value_of(x);
                acc += v * v;
            }
            if (kind == OpKind::MeanSquaresVarying) acc /= n;
            break;
        default: break;
    }
    return tape.emplace(kind, acc, xs);
}

template <std::floating_point Scalar>
ValueRef reduce_sum(Tape<Scalar>& t, std::span<const ValueRef> xs) {
    return varying(t, OpKind::AddVarying, xs);
}
template <std::floating_point Scalar>
ValueRef reduce_sub(Tape<Scalar>& t, std::span<const ValueRef> xs) {
    return varying(t, OpKind::SubVarying, xs);
}
template <std::floating_point Scalar>
ValueRef reduce_mul(Tape<Scalar>& t, std::span<const ValueRef> xs) {
    return varying(t, OpKind::MulVarying, xs);
}
template <std::floating_point Scalar>
ValueRef reduce_mean(Tape<Scalar>& t, std::span<const ValueRef> xs) {
    return varying(t, OpKind::MeanVarying, xs);
}
template <std::floating_point Scalar>
ValueRef reduce_sum_of_squares(Tape<Scalar>& t, std::span<const ValueRef> xs) {
    return varying(t, OpKind::SumOfSquaresVarying, xs);
}
template <std::floating_point Scalar>
ValueRef reduce_mean_squares(Tape<Scalar>& t, std::span<const ValueRef> xs) {
    return varying(t, OpKind::MeanSquaresVarying, xs);
}
template <std::floating_point Scalar>
ValueRef reduce_negative_mean(Tape<Scalar>& t, std::span<const ValueRef> xs) {
    return varying(t, OpKind::NegativeMeanVarying, xs);
}

/// <x, y> over two equal-length sequences. Children are stored as
/// x_0..x_{n-1}, y_0..y_{n-1}.
template <std::floating_point Scalar>
ValueRef inner_product(Tape<Scalar>& tape, std::span<const ValueRef> xs,
                       std::span<const ValueRef> ys) {
    if (xs.empty()) throw std::invalid_argument("innerProduct: empty input sequence");
    if (xs.size() != ys.size()) {
        throw std::invalid_argument("innerProduct: sequence lengths differ (" +
                                    std::to_string(xs.size()) + " vs " +
                                    std::to_string(ys.size()) + ")");
    }
    Scalar acc = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        acc += tape.value_of(xs[i]) * tape.value_of(ys[i]);
    }
    return tape.emplace_with(OpKind::InnerProductNoBias, acc, 2 * xs.size(),
                             [&](NodeIndex* dst) {
                                 for (std::size_t i = 0; i < xs.size(); ++i) {
                                     dst[i] = xs[i].index;
                                     dst[xs.size() + i] = ys[i].index;
                                 }
                             });
}

/// <x, y> + b. The bias is the last child.
template <std::floating_point Scalar>
ValueRef inner_product_with_bias(Tape<Scalar>& tape, std::span<const ValueRef> xs,
                                 std::span<const ValueRef> ys, ValueRef bias) {
    if (xs.empty()) throw std::invalid_argument("innerProductWithBias: empty input sequence");
    if (xs.size() != ys.size()) {
        throw std::invalid_argument("innerProductWithBias: sequence lengths differ (" +
                                    std::to_string(xs.size()) + " vs " +
                                    std::to_string(ys.size()) + ")");
    }
    Scalar acc = tape.value_of(bias);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        acc += tape.value_of(xs[i]) * tape.value_of(ys[i]);
    }
    return tape.emplace_with(OpKind::InnerProductWithBias, acc, 2 * xs.size() + 1,
                             [&](NodeIndex* dst) {
                                 for (std::size_t i = 0; i < xs.size(); ++i) {
                                     dst[i] = xs[i].index;
                                     dst[xs.size() + i] = ys[i].index;
                                 }
                                 dst[2 * xs.size()] = bias.index;
                             });
}

// ---- in-place ----

/// Rebinds the caller's handle to a new node computing the binary op over
/// (old x, y). No existing node is mutated. On error the handle is unchanged.
template <std::floating_point Scalar>
ValueRef add_inplace(Tape<Scalar>& t, ValueRef& x, ValueRef y) { return x = add(t, x, y); }
template <std::floating_point Scalar>
ValueRef sub_inplace(Tape<Scalar>& t, ValueRef& x, ValueRef y) { return x = sub(t, x, y); }
template <std::floating_point Scalar>
ValueRef mul_inplace(Tape<Scalar>& t, ValueRef& x, ValueRef y) { return x = mul(t, x, y); }
template <std::floating_point Scalar>
ValueRef div_inplace(Tape<Scalar>& t, ValueRef& x, ValueRef y) { return x = div(t, x, y); }

// ---- composed helpers ----

/// (reduceMean, reduceMeanSquares) built in one pass over xs.
template <std::floating_point Scalar>
std::pair<ValueRef, ValueRef> reduce_mean_and_mean_squares(Tape<Scalar>& tape,
                                                           std::span<const ValueRef> xs) {
    ValueRef m = reduce_mean(tape, xs);
    ValueRef ms = reduce_mean_squares(tape, xs);
    return {m, ms};
}

/// sum(x_i^2)/n - (sum(x_j)/n)^2, composed from core nodes.
template <std::floating_point Scalar>
ValueRef variance_biased(Tape<Scalar>& tape, std::span<const ValueRef> xs) {
    auto [m, ms] = reduce_mean_and_mean_squares(tape, xs);
    return sub(tape, ms, sqr(tape, m));
}

/// Unbiased variance n/(n-1) * varianceBiased. Requires n >= 2.
template <std::floating_point Scalar>
ValueRef variance(Tape<Scalar>& tape, std::span<const ValueRef> xs) {
    if (xs.size() < 2) {
        throw std::invalid_argument("variance: needs at least 2 inputs, got " +
                                    std::to_string(xs.size()));
    }
    const auto n = static_cast<Scalar>(xs.size());
    return mul_by_constant(tape, variance_biased(tape, xs), n / (n - Scalar(1)));
}

// ---- backward propagation kernel ----

namespace detail {

/// Accumulates grad contributions of node i into its children. Assumes
/// grads[i] is final. MulVarying uses scratch for suffix products so that
/// zero inputs stay exact; scratch must hold at least arity entries.
template <std::floating_point Scalar>
void propagate_node(Tape<Scalar>& tape, NodeIndex i, std::span<Scalar> scratch) {
    const Scalar g = tape.grad_at(i);
    const Scalar y = tape.value_at(i);
    const std::span<const NodeIndex> kids = tape.children_at(i);
    switch (tape.op_at(i)) {
        case OpKind::Leaf:
            break;
        case OpKind::Relu:
            tape.add_grad(kids[0], tape.value_at(kids[0]) > Scalar(0) ? g : Scalar(0));
            break;
        case OpKind::Tanh:
            tape.add_grad(kids[0], g * (Scalar(1) - y * y));
            break;
        case OpKind::Exp:
            tape.add_grad(kids[0], g * y);
            break;
        case OpKind::NegLog:
            tape.add_grad(kids[0], -g / tape.value_at(kids[0]));
            break;
        case OpKind::Sigmoid:
            tape.add_grad(kids[0], g * y * (Scalar(1) - y));
            break;
        case OpKind::Inv:
            tape.add_grad(kids[0], -g * y * y);
            break;
        case OpKind::Sqr:
            tape.add_grad(kids[0], g * Scalar(2) * tape.value_at(kids[0]));
            break;
        case OpKind::Cub: {
            const Scalar x = tape.value_at(kids[0]);
            tape.add_grad(kids[0], g * Scalar(3) * x * x);
            break;
        }
        case OpKind::Log:
            tape.add_grad(kids[0], g / tape.value_at(kids[0]));
            break;
        case OpKind::Sqrt:
            tape.add_grad(kids[0], g / (Scalar(2) * y));
            break;
        case OpKind::InvSqrt:
            tape.add_grad(kids[0], -g * y / (Scalar(2) * tape.value_at(kids[0])));
            break;
        case OpKind::MulByConst:
            tape.add_grad(kids[0], g * tape.constant_at(i));
            break;
        case OpKind::Add:
            tape.add_grad(kids[0], g);
            tape.add_grad(kids[1], g);
            break;
        case OpKind::Sub:
            tape.add_grad(kids[0], g);
            tape.add_grad(kids[1], -g);
            break;
        case OpKind::Mul:
            tape.add_grad(kids[0], g * tape.value_at(kids[1]));
            tape.add_grad(kids[1], g * tape.value_at(kids[0]));
            break;
        case OpKind::Div: {
            const Scalar b = tape.value_at(kids[1]);
            tape.add_grad(kids[0], g / b);
            tape.add_grad(kids[1], -g * tape.value_at(kids[0]) / (b * b));
            break;
        }
        case OpKind::Mean:
            tape.add_grad(kids[0], g / Scalar(2));
            tape.add_grad(kids[1], g / Scalar(2));
            break;
        case OpKind::AddSquares:
            tape.add_grad(kids[0], g * Scalar(2) * tape.value_at(kids[0]));
            tape.add_grad(kids[1], g * Scalar(2) * tape.value_at(kids[1]));
            break;
        case OpKind::MeanSquares:
            tape.add_grad(kids[0], g * tape.value_at(kids[0]));
            tape.add_grad(kids[1], g * tape.value_at(kids[1]));
            break;
        case OpKind::NegativeMean:
            tape.add_grad(kids[0], -g / Scalar(2));
            tape.add_grad(kids[1], -g / Scalar(2));
            break;
        case OpKind::AddVarying:
            for (NodeIndex c : kids) tape.add_grad(c, g);
            break;
        case OpKind::SubVarying:
            tape.add_grad(kids[0], g);
            for (std::size_t k = 1; k < kids.size(); ++k) tape.add_grad(kids[k], -g);
            break;
        case OpKind::MulVarying: {
            // d/dx_i = prefix(i) * suffix(i+1), exact when inputs include zeros
            const std::size_t n = kids.size();
            Scalar suffix = Scalar(1);
            for (std::size_t k = n; k-- > 0;) {
                scratch[k] = suffix;
                suffix *= tape.value_at(kids[k]);
            }
            Scalar prefix = Scalar(1);
            for (std::size_t k = 0; k < n; ++k) {
                tape.add_grad(kids[k], g * prefix * scratch[k]);
                prefix *= tape.value_at(kids[k]);
            }
            break;
        }
        case OpKind::MeanVarying: {
            const Scalar d = g / static_cast<Scalar>(kids.size());
            for (NodeIndex c : kids) tape.add_grad(c, d);
            break;
        }
        case OpKind::SumOfSquaresVarying:
            for (NodeIndex c : kids) tape.add_grad(c, g * Scalar(2) * tape.value_at(c));
            break;
        case OpKind::MeanSquaresVarying: {
            const Scalar s = g * Scalar(2) / static_cast<Scalar>(kids.size());
            for (NodeIndex c : kids) tape.add_grad(c, s * tape.value_at(c));
            break;
        }
        case OpKind::NegativeMeanVarying: {
            const Scalar d = -g / static_cast<Scalar>(kids.size());
            for (NodeIndex c : kids) tape.add_grad(c, d);
            break;
        }
        case OpKind::InnerProductNoBias: {
            const std::size_t n = kids.size() / 2;
            for (std::size_t k = 0; k < n; ++k) {
                tape.add_grad(kids[k], g * tape.value_at(kids[n + k]));
                tape.add_grad(kids[n + k], g * tape.value_at(kids[k]));
            }
            break;
        }
        case OpKind::InnerProductWithBias: {
            const std::size_t n = (kids.size() - 1) / 2;
            for (std::size_t k = 0; k < n; ++k) {
                tape.add_grad(kids[k], g * tape.value_at(kids[n + k]));
                tape.add_grad(kids[n + k], g * tape.value_at(kids[k]));
            }
            tape.add_grad(kids.back(), g);
            break;
        }
    }
}

}  // namespace detail

}  // namespace tapegrad
