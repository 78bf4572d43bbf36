#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "contrastcat/numkernel/tape.hpp"

namespace ccat::nk {

// Differentiable ops. Each records its forward value on the tape together
// with an exact analytic backward rule.

Var matmul(Tape& t, Var a, Var b);
/// a·bᵀ
Var matmul_nt(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
/// m + broadcast of a 1×cols row to every row.
Var add_row(Tape& t, Var m, Var row);
Var hadamard(Tape& t, Var a, Var b);
Var scale(Tape& t, Var m, double s);
Var softmax_rows(Tape& t, Var m, double scale, std::span<const bool> key_mask = {});
Var layernorm(Tape& t, Var m, Var gain, Var bias, double eps);
Var gelu(Tape& t, Var m);
/// 1×1 sum of all entries.
Var sum(Tape& t, Var m);
/// Columns [first, first + count).
Var slice_cols(Tape& t, Var m, std::size_t first, std::size_t count);
Var concat_cols(Tape& t, std::span<const Var> parts);
/// Rows of table selected by index (embedding lookup). Gradients scatter-add
/// back into the table.
Var gather_rows(Tape& t, Var table, std::span<const std::size_t> rows);
/// First `count` rows.
Var take_rows(Tape& t, Var m, std::size_t count);
/// 1×1 entry (r, c).
Var pick(Tape& t, Var m, std::size_t r, std::size_t c);
/// Softmax over the single row of a 1×C matrix.
Var softmax_row_vector(Tape& t, Var logits);
/// 1×1 cross-entropy of a 1×C logit row against a class index.
Var cross_entropy(Tape& t, Var logits, std::size_t label);

}  // namespace ccat::nk
