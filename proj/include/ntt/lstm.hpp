#pragma once

#include <cmath>
#include <string>

#include "ntt/autodiff.hpp"
#include "ntt/rng.hpp"

namespace ntt {

/// Gate order in the stacked 4d rows: input, forget, cell candidate, output.
struct LstmCellParams {
  Parameter* w_input = nullptr;   // 4d × d_in
  Parameter* w_hidden = nullptr;  // 4d × d
  Parameter* bias = nullptr;      // 4d
  std::size_t d = 0;
  std::size_t d_in = 0;

  /// Registers "<prefix>.W_x", "<prefix>.W_h", "<prefix>.b". Weights are
  /// uniform in [−1/√d, 1/√d]; forget-gate bias 1, other biases 0.
  static LstmCellParams create(ParameterSet& params, const std::string& prefix, std::size_t d_in, std::size_t d,
                               Rng& rng) {
    if (d == 0 || d_in == 0) throw Error("lstm '" + prefix + "': dimensions must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    auto uniform = [&](std::size_t rows, std::size_t cols) {
      Tensor t({rows, cols});
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
      return t;
    };
    LstmCellParams cell;
    cell.d = d;
    cell.d_in = d_in;
    cell.w_input = &params.add(prefix + ".W_x", uniform(4 * d, d_in));
    cell.w_hidden = &params.add(prefix + ".W_h", uniform(4 * d, d));
    Tensor b({4 * d});
    for (std::size_t i = d; i < 2 * d; ++i) b[i] = 1.0;
    cell.bias = &params.add(prefix + ".b", std::move(b));
    return cell;
  }
};

struct LstmState {
  Var h;
  Var c;
};

inline LstmState zero_lstm_state(Tape& tape, std::size_t d) {
  return {tape.constant(Tensor({d})), tape.constant(Tensor({d}))};
}

inline LstmState lstm_step(const LstmCellParams& cell, Var x, const LstmState& prev) {
  Tape& tape = x.tape();
  const std::size_t d = cell.d;
  if (x.shape() != Shape{cell.d_in} || prev.h.shape() != Shape{d} || prev.c.shape() != Shape{d}) {
    throw Error("lstm_step: expected x " + shape_str({cell.d_in}) + ", h/c " + shape_str({d}) + "; got x " +
                shape_str(x.shape()) + ", h " + shape_str(prev.h.shape()) + ", c " + shape_str(prev.c.shape()));
  }
  Var z = add({matvec(tape.param(*cell.w_input), x), matvec(tape.param(*cell.w_hidden), prev.h),
               tape.param(*cell.bias)});
  Var in_gate = sigmoid(slice(z, 0, d));
  Var forget_gate = sigmoid(slice(z, d, d));
  Var candidate = tanh(slice(z, 2 * d, d));
  Var out_gate = sigmoid(slice(z, 3 * d, d));
  Var c = add(mul(forget_gate, prev.c), mul(in_gate, candidate));
  Var h = mul(out_gate, tanh(c));
  return {h, c};
}

}  // namespace ntt
