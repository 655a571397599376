#pragma once

// Shared helpers for the unit and acceptance suites: an allocation probe, a
// central finite-difference oracle, and a replayable random-graph recipe whose
// interpreter evaluates graphs independently of the tape engine.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "tapegrad/backprop.hpp"
#include "tapegrad/ops.hpp"
#include "tapegrad/tape.hpp"

namespace testsupport {

// ---- global allocation probe (operator new/delete hooks live in alloc_probe.cpp) ----

std::uint64_t allocation_count();

// ---- finite differences ----

/// Central finite difference d f / d x_i at x, step h.
inline double central_diff(const std::function<double(std::span<const double>)>& f,
                           std::vector<double> x, std::size_t i, double h = 1e-6) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    return (up - down) / (2.0 * h);
}

/// True when |got - want| is within rel_tol of |want|, with an absolute floor
/// for values near zero.
inline bool close_rel(double got, double want, double rel_tol = 1e-5, double abs_tol = 1e-8) {
    const double diff = std::abs(got - want);
    if (diff <= abs_tol) return true;
    return diff <= rel_tol * std::max(std::abs(got), std::abs(want));
}

// ---- deterministic RNG helpers ----

struct TestRng {
    std::mt19937_64 gen;
    explicit TestRng(std::uint64_t seed) : gen(seed) {}

    double unit() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>((static_cast<__uint128_t>(gen()) * n) >> 64);
    }
};

// ---- replayable random graph recipes ----

/// A straight-line program over the engine's operator set. The interpreter
/// (eval) is a direct recomputation that never touches the tape, so it serves
/// as the independent function oracle for finite-difference checks.
struct GraphRecipe {
    struct Step {
        tapegrad::OpKind op;
        std::vector<std::uint32_t> args;  // indices of earlier slots
        double constant = 0.0;            // for mulByConstant
    };

    std::size_t leaf_count = 0;
    std::vector<Step> steps;  // slot k = leaf_count + position in steps

    std::size_t slot_count() const { return leaf_count + steps.size(); }

    /// Recomputes every slot from leaf values; returns the last slot's value.
    double eval(std::span<const double> leaf_values) const {
        using tapegrad::OpKind;
        std::vector<double> v(slot_count());
        for (std::size_t i = 0; i < leaf_count; ++i) v[i] = leaf_values[i];
        std::size_t out = leaf_count;
        for (const Step& s : steps) {
            auto a = [&](std::size_t k) { return v[s.args[k]]; };
            double r = 0.0;
            switch (s.op) {
                case OpKind::Leaf: break;
                case OpKind::Relu: r = a(0) > 0 ? a(0) : 0; break;
                case OpKind::Tanh: r = std::tanh(a(0)); break;
                case OpKind::Exp: r = std::exp(a(0)); break;
                case OpKind::NegLog: r = -std::log(a(0)); break;
                case OpKind::Sigmoid: r = 1.0 / (1.0 + std::exp(-a(0))); break;
                case OpKind::Inv: r = 1.0 / a(0); break;
                case OpKind::Sqr: r = a(0) * a(0); break;
                case OpKind::Cub: r = a(0) * a(0) * a(0); break;
                case OpKind::Log: r = std::log(a(0)); break;
                case OpKind::Sqrt: r = std::sqrt(a(0)); break;
                case OpKind::InvSqrt: r = 1.0 / std::sqrt(a(0)); break;
                case OpKind::MulByConst: r = a(0) * s.constant; break;
                case OpKind::Add: r = a(0) + a(1); break;
                case OpKind::Sub: r = a(0) - a(1); break;
                case OpKind::Mul: r = a(0) * a(1); break;
                case OpKind::Div: r = a(0) / a(1); break;
                case OpKind::Mean: r = (a(0) + a(1)) / 2.0; break;
                case OpKind::AddSquares: r = a(0) * a(0) + a(1) * a(1); break;
                case OpKind::MeanSquares: r = (a(0) * a(0) + a(1) * a(1)) / 2.0; break;
                case OpKind::NegativeMean: r = -(a(0) + a(1)) / 2.0; break;
                case OpKind::AddVarying:
                    for (std::size_t k = 0; k < s.args.size(); ++k) r += a(k);
                    break;
                case OpKind::SubVarying:
                    r = a(0);
                    for (std::size_t k = 1; k < s.args.size(); ++k) r -= a(k);
                    break;
                case OpKind::MulVarying:
                    r = 1.0;
                    for (std::size_t k = 0; k < s.args.size(); ++k) r *= a(k);
                    break;
                case OpKind::MeanVarying:
                    for (std::size_t k = 0; k < s.args.size(); ++k) r += a(k);
                    r /= static_cast<double>(s.args.size());
                    break;
                case OpKind::SumOfSquaresVarying:
                    for (std::size_t k = 0; k < s.args.size(); ++k) r += a(k) * a(k);
                    break;
                case OpKind::MeanSquaresVarying:
                    for (std::size_t k = 0; k < s.args.size(); ++k) r += a(k) * a(k);
                    r /= static_cast<double>(s.args.size());
                    break;
                case OpKind::NegativeMeanVarying:
                    for (std::size_t k = 0; k < s.args.size(); ++k) r += a(k);
                    r /= -static_cast<double>(s.args.size());
                    break;
                case OpKind::InnerProductNoBias: {
                    const std::size_t n = s.args.size() / 2;
                    for (std::size_t k = 0; k < n; ++k) r += a(k) * a(n + k);
                    break;
                }
                case OpKind::InnerProductWithBias: {
                    const std::size_t n = (s.args.size() - 1) / 2;
                    r = a(s.args.size() - 1);
                    for (std::size_t k = 0; k < n; ++k) r += a(k) * a(n + k);
                    break;
                }
            }
            v[out++] = r;
        }
        return v.back();
    }

    /// Builds the recipe on a tape; returns refs of all slots (leaves first).
    template <typename Scalar>
    std::vector<tapegrad::ValueRef> build(tapegrad::Tape<Scalar>& tape,
                                          std::span<const double> leaf_values) const {
        using tapegrad::OpKind;
        using tapegrad::ValueRef;
        std::vector<ValueRef> refs;
        refs.reserve(slot_count());
        for (std::size_t i = 0; i < leaf_count; ++i) {
            refs.push_back(tape.leaf(static_cast<Scalar>(leaf_values[i])));
        }
        std::vector<ValueRef> args;
        for (const Step& s : steps) {
            args.clear();
            for (std::uint32_t idx : s.args) args.push_back(refs[idx]);
            ValueRef r{};
            switch (tapegrad::arity_of(s.op)) {
                case tapegrad::OpArity::Leaf:
                    r = tape.leaf(0);
                    break;
                case tapegrad::OpArity::Unary:
                    r = s.op == OpKind::MulByConst
                            ? tapegrad::mul_by_constant(tape, args[0],
                                                        static_cast<Scalar>(s.constant))
                            : tapegrad::unary(tape, s.op, args[0]);
                    break;
                case tapegrad::OpArity::Binary:
                    r = tapegrad::binary(tape, s.op, args[0], args[1]);
                    break;
                case tapegrad::OpArity::Varying:
                    if (s.op == OpKind::InnerProductNoBias) {
                        const std::size_t n = args.size() / 2;
                        r = tapegrad::inner_product(
                            tape, std::span<const ValueRef>(args.data(), n),
                            std::span<const ValueRef>(args.data() + n, n));
                    } else if (s.op == OpKind::InnerProductWithBias) {
                        const std::size_t n = (args.size() - 1) / 2;
                        r = tapegrad::inner_product_with_bias(
                            tape, std::span<const ValueRef>(args.data(), n),
                            std::span<const ValueRef>(args.data() + n, n), args.back());
                    } else {
                        r = tapegrad::varying(tape, s.op, std::span<const ValueRef>(args));
                    }
                    break;
            }
            refs.push_back(r);
        }
        return refs;
    }
};

/// Random recipe over the full op set. Leaf values are kept away from domain
/// boundaries so that a +-h perturbation stays in-domain: ops with positivity
/// or nonzero constraints draw their inputs from dedicated leaves rather than
/// arbitrary intermediate slots.
inline GraphRecipe random_recipe(TestRng& rng, std::size_t max_nodes,
                                 std::vector<double>& leaf_values) {
    using tapegrad::OpKind;
    GraphRecipe recipe;
    leaf_values.clear();

    // 2..6 general leaves in [-2, 2], away from relu kinks at 0.
    const std::size_t general_leaves = 2 + rng.below(5);
    for (std::size_t i = 0; i < general_leaves; ++i) {
        double v = rng.uniform(-2.0, 2.0);
        if (std::abs(v) < 1e-2) v += v >= 0 ? 0.05 : -0.05;
        leaf_values.push_back(v);
    }
    // 4 positive leaves in [0.5, 2.5] for log/sqrt/div-style consumers.
    const std::size_t first_positive = leaf_values.size();
    for (std::size_t i = 0; i < 4; ++i) {
        leaf_values.push_back(rng.uniform(0.5, 2.5));
    }
    recipe.leaf_count = leaf_values.size();

    static constexpr OpKind kSafeOps[] = {
        OpKind::Relu, OpKind::Tanh, OpKind::Sigmoid, OpKind::Sqr, OpKind::Cub,
        OpKind::MulByConst, OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::Mean,
        OpKind::AddSquares, OpKind::MeanSquares, OpKind::NegativeMean,
        OpKind::AddVarying, OpKind::SubVarying, OpKind::MulVarying, OpKind::MeanVarying,
        OpKind::SumOfSquaresVarying, OpKind::MeanSquaresVarying, OpKind::NegativeMeanVarying,
        OpKind::InnerProductNoBias, OpKind::InnerProductWithBias,
    };
    // Ops whose argument must stay strictly positive (or nonzero): fed from
    // the positive leaf block only.
    static constexpr OpKind kGuardedOps[] = {
        OpKind::Exp, OpKind::NegLog, OpKind::Inv, OpKind::Log,
        OpKind::Sqrt, OpKind::InvSqrt, OpKind::Div,
    };

    const std::size_t op_count = 1 + rng.below(max_nodes > recipe.leaf_count
                                                   ? max_nodes - recipe.leaf_count
                                                   : 1);
    for (std::size_t n = 0; n < op_count; ++n) {
        GraphRecipe::Step step;
        const std::size_t live = recipe.leaf_count + recipe.steps.size();
        auto any_slot = [&] { return static_cast<std::uint32_t>(rng.below(live)); };
        auto positive_leaf = [&] {
            return static_cast<std::uint32_t>(first_positive + rng.below(4));
        };

        if (rng.below(5) == 0) {
            step.op = kGuardedOps[rng.below(std::size(kGuardedOps))];
            if (step.op == OpKind::Div) {
                step.args = {any_slot(), positive_leaf()};
            } else if (step.op == OpKind::Exp) {
                // exp is total but bounded inputs keep FD well-conditioned
                step.args = {positive_leaf()};
            } else {
                step.args = {positive_leaf()};
            }
        } else {
            step.op = kSafeOps[rng.below(std::size(kSafeOps))];
            switch (tapegrad::arity_of(step.op)) {
                case tapegrad::OpArity::Unary:
                    step.args = {any_slot()};
                    if (step.op == OpKind::MulByConst) {
                        step.constant = rng.uniform(-2.0, 2.0);
                    }
                    break;
                case tapegrad::OpArity::Binary:
                    step.args = {any_slot(), any_slot()};
                    break;
                case tapegrad::OpArity::Varying: {
                    std::size_t n_args = 1 + rng.below(5);
                    if (step.op == OpKind::InnerProductNoBias) {
                        step.args.resize(2 * n_args);
                    } else if (step.op == OpKind::InnerProductWithBias) {
                        step.args.resize(2 * n_args + 1);
                    } else {
                        step.args.resize(n_args);
                    }
                    for (auto& a : step.args) a = any_slot();
                    break;
                }
                default:
                    break;
            }
        }
        recipe.steps.push_back(std::move(step));
    }

    // Make the root depend on everything so gradients are generally nonzero:
    // final reduceSum over every op slot plus all leaves.
    GraphRecipe::Step root;
    root.op = OpKind::AddVarying;
    for (std::uint32_t i = 0; i < recipe.leaf_count + recipe.steps.size(); ++i) {
        root.args.push_back(i);
    }
    recipe.steps.push_back(std::move(root));
    return recipe;
}

}  // namespace testsupport
