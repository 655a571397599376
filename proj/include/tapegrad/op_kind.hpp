#pragma once

#include <cstdint>
#include <string_view>

namespace tapegrad {

/// Operation tag stored per node. One code per supported scalar operator,
/// plus Leaf for input nodes.
enum class OpKind : std::uint8_t {
    Leaf,
    // unary
    Relu,
    Tanh,
    Exp,
    NegLog,
    Sigmoid,
    Inv,
    Sqr,
    Cub,
    Log,
    Sqrt,
    InvSqrt,
    // binary
    Add,
    Sub,
    Mul,
    MulByConst,  // single child; the constant lives in the node's constant slot
    Div,
    Mean,
    AddSquares,
    MeanSquares,
    NegativeMean,
    // varying arity
    AddVarying,
    SubVarying,
    MulVarying,
    MeanVarying,
    SumOfSquaresVarying,
    MeanSquaresVarying,
    NegativeMeanVarying,
    InnerProductNoBias,    // children: x_0..x_{n-1}, y_0..y_{n-1}
    InnerProductWithBias,  // children: x_0..x_{n-1}, y_0..y_{n-1}, b
};

enum class OpArity : std::uint8_t { Leaf, Unary, Binary, Varying };

constexpr OpArity arity_of(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::Leaf:
            return OpArity::Leaf;
        case OpKind::Relu:
        case OpKind::Tanh:
        case OpKind::Exp:
        case OpKind::NegLog:
        case OpKind::Sigmoid:
        case OpKind::Inv:
        case OpKind::Sqr:
        case OpKind::Cub:
        case OpKind::Log:
        case OpKind::Sqrt:
        case OpKind::InvSqrt:
        case OpKind::MulByConst:  // one child; the constant is not a node
            return OpArity::Unary;
        case OpKind::Add:
        case OpKind::Sub:
        case OpKind::Mul:
        case OpKind::Div:
        case OpKind::Mean:
        case OpKind::AddSquares:
        case OpKind::MeanSquares:
        case OpKind::NegativeMean:
            return OpArity::Binary;
        case OpKind::AddVarying:
        case OpKind::SubVarying:
        case OpKind::MulVarying:
        case OpKind::MeanVarying:
        case OpKind::SumOfSquaresVarying:
        case OpKind::MeanSquaresVarying:
        case OpKind::NegativeMeanVarying:
        case OpKind::InnerProductNoBias:
        case OpKind::InnerProductWithBias:
            return OpArity::Varying;
    }
    return OpArity::Leaf;  // unreachable for valid tags
}

/// User-facing mnemonic, used by the exporters and error messages.
constexpr std::string_view op_name(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Relu: return "relu";
        case OpKind::Tanh: return "tanh";
        case OpKind::Exp: return "exp";
        case OpKind::NegLog: return "negativeLog";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Inv: return "inv";
        case OpKind::Sqr: return "sqr";
        case OpKind::Cub: return "pow3";
        case OpKind::Log: return "logarithm";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::InvSqrt: return "invSqrt";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::MulByConst: return "mulByConstant";
        case OpKind::Div: return "div";
        case OpKind::Mean: return "mean";
        case OpKind::AddSquares: return "addSquares";
        case OpKind::MeanSquares: return "meanSquares";
        case OpKind::NegativeMean: return "negativeMean";
        case OpKind::AddVarying: return "reduceSum";
        case OpKind::SubVarying: return "reduceSub";
        case OpKind::MulVarying: return "reduceMul";
        case OpKind::MeanVarying: return "reduceMean";
        case OpKind::SumOfSquaresVarying: return "reduceSumOfSquares";
        case OpKind::MeanSquaresVarying: return "reduceMeanSquares";
        case OpKind::NegativeMeanVarying: return "reduceNegativeMean";
        case OpKind::InnerProductNoBias: return "innerProduct";
        case OpKind::InnerProductWithBias: return "innerProductWithBias";
    }
    return "?";
}

}  // namespace tapegrad
