#pragma once

#include <cstdint>
#include <span>

#include "mufasa/nn/tape.hpp"

namespace mufasa::nn {

// Elementwise and structural ops. Shape errors throw std::invalid_argument.

Var add(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var relu(Tape& t, Var a);
Var sum(Tape& t, Var a);
Var reshape(Tape& t, Var a, Shape shape);
Var transpose(Tape& t, Var a);

/// x[N, d_in] W[d_out, d_in]^T + b[d_out].
Var linear(Tape& t, Var x, Var w, Var b);
/// a[n, k] b[k, m].
Var matmul(Tape& t, Var a, Var b);
/// a[n, k] b[m, k]^T.
Var matmul_nt(Tape& t, Var a, Var b);

Var concat_cols(Tape& t, std::span<const Var> parts);
Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t end);
Var gather_rows(Tape& t, Var x, std::span<const std::size_t> rows);

/// Channel-wise max over rows of x[N, d] -> [d]; the gradient goes to the lowest-index argmax.
Var maxpool_rows(Tape& t, Var x);
/// Channel-wise max of x[N, d] per segment id -> [num_segments, d]; empty segments are zero.
Var segment_max(Tape& t, Var x, std::span<const std::size_t> segment, std::size_t num_segments);

/// Max-subtracted softmax along `axis`.
Var softmax(Tape& t, Var x, std::size_t axis);
/// Divides each slice along `axis` by its sum (inputs assumed non-negative with positive sums).
Var normalize_sum(Tape& t, Var x, std::size_t axis);

/// Same-padded, stride-1 cross-correlation: img[C_in, H, W], w[C_out, C_in, k, k], b[C_out].
Var conv2d(Tape& t, Var img, Var w, Var b);

/// Writes row r of rows[K, C] to grid cell cells[r] of a [C, H, W] image (rows at the same
/// cell are summed; negative cells are skipped).
Var scatter_to_grid(Tape& t, Var rows, std::span<const std::int64_t> cells, std::size_t height,
                    std::size_t width);
/// Reads the channel vector at cells[n] of img[C, H, W] -> [N, C]; negative cells read zeros.
Var gather_from_grid(Tape& t, Var img, std::span<const std::int64_t> cells);

// Losses, each returning a scalar sum of per-element weighted terms.

/// Binary focal loss on logits[N] with targets in {0, 1}.
Var sigmoid_focal_loss(Tape& t, Var logits, std::span<const double> targets,
                       std::span<const double> weights, double alpha, double gamma);
/// Softmax cross-entropy on logits[N, K] with integer labels; rows with weight 0 are ignored.
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels,
                          std::span<const double> weights);
/// Smooth-L1 between pred[N, D] and target[N, D], each row weighted.
Var smooth_l1(Tape& t, Var pred, const Tensor& target, std::span<const double> row_weights,
              double beta);
/// Binary cross-entropy with logits[N] and soft targets in [0, 1].
Var bce_with_logits(Tape& t, Var logits, std::span<const double> targets,
                    std::span<const double> weights);

double sigmoid(double x);
double softplus(double x);

}  // namespace mufasa::nn
