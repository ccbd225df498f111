#include "kpt/fine.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kpt/errors.hpp"
#include "kpt/ops.hpp"

namespace kpt {

NeighborWindow gather_neighbors(std::size_t grid_rows, std::size_t grid_cols, std::size_t patch_index) {
  if (grid_rows == 0 || grid_cols == 0 || patch_index >= grid_rows * grid_cols) {
    throw InputError("gather_neighbors: patch index " + std::to_string(patch_index) + " outside a " +
                     std::to_string(grid_rows) + "x" + std::to_string(grid_cols) + " grid");
  }
  const auto r0 = static_cast<long>(patch_index / grid_cols), c0 = static_cast<long>(patch_index % grid_cols);
  const auto rows = static_cast<long>(grid_rows), cols = static_cast<long>(grid_cols);
  NeighborWindow w;
  std::size_t k = 0;
  for (long dr = -1; dr <= 1; ++dr) {
    for (long dc = -1; dc <= 1; ++dc, ++k) {
      const long r = r0 + dr, c = c0 + dc;
      w.valid[k] = r >= 0 && r < rows && c >= 0 && c < cols;
      const long rc = std::clamp(r, 0L, rows - 1), cc = std::clamp(c, 0L, cols - 1);
      w.cells[k] = static_cast<std::size_t>(rc * cols + cc);
      w.offsets[k] = {8.0 * static_cast<double>(dc), 8.0 * static_cast<double>(dr)};
    }
  }
  return w;
}

FineContext make_context(const DenseFeatureGrid& grid, std::size_t patch_index, const Tensor& original,
                         const Tensor& attended) {
  const NeighborWindow w = gather_neighbors(grid.rows, grid.cols, patch_index);
  FineContext ctx;
  ctx.original = original;
  ctx.attended = attended;
  ctx.neighbors = gather_rows(grid.features, w.cells);
  ctx.offsets = w.offsets;
  ctx.valid = w.valid;
  return ctx;
}

FineBatch batch_of(const FineContext& ctx) {
  if (!ctx.valid[4] || ctx.offsets[4].x != 0 || ctx.offsets[4].y != 0) {
    throw ContractError("fine context: the center neighbor must be valid at offset (0, 0)");
  }
  FineBatch b;
  b.original = ctx.original;
  b.attended = ctx.attended;
  b.neighbors = ctx.neighbors;
  b.offsets.assign(ctx.offsets.begin(), ctx.offsets.end());
  b.valid.assign(ctx.valid.begin(), ctx.valid.end());
  return b;
}

FineParams make_fine(ParamStore& store, const std::string& prefix, std::size_t dim, const FineConfig& cfg, Rng& rng) {
  FineParams p;
  p.dim = dim;
  p.proj = store.create_uniform(prefix + ".proj", {dim, dim}, dim, rng);
  p.posenc = make_mlp(store, prefix + ".posenc", {2, cfg.hidden, dim}, rng);
  p.aam = make_aam(store, prefix + ".aam", dim, cfg.depth, rng);
  p.head = make_mlp(store, prefix + ".head", {dim + 2, cfg.hidden, 2}, rng);
  return p;
}

FineOutput refine_batch(const FineBatch& batch, const FineParams& params) {
  const std::size_t b = batch.size(), d = params.dim;
  if (batch.original.dim(1) != d || batch.attended.dim(1) != d || batch.neighbors.dim(1) != d) {
    throw DimensionError("refine: descriptor width does not match the fine module");
  }
  if (batch.attended.dim(0) != b || batch.neighbors.dim(0) != kWindow * b || batch.offsets.size() != kWindow * b ||
      batch.valid.size() != kWindow * b) {
    throw DimensionError("refine: batch parts disagree on the number of contexts");
  }

  // Query rows interleaved per context: (original_b, attended_b).
  std::vector<std::size_t> qidx(2 * b);
  for (std::size_t i = 0; i < b; ++i) {
    qidx[2 * i] = i;
    qidx[2 * i + 1] = b + i;
  }
  const Tensor queries =
      gather_rows(matmul(concat_rows({batch.original, batch.attended}), params.proj), qidx);

  std::vector<Real> rel(2 * kWindow * b);
  std::vector<Real> key_w(kWindow * b);
  std::vector<std::uint8_t> mask(kWindow * b);
  for (std::size_t j = 0; j < kWindow * b; ++j) {
    rel[2 * j] = static_cast<Real>(batch.offsets[j].x / 8.0);
    rel[2 * j + 1] = static_cast<Real>(batch.offsets[j].y / 8.0);
    key_w[j] = batch.valid[j] ? Real(1) : Real(0);
    mask[j] = batch.valid[j] ? 1 : 0;
  }
  const Tensor rel_t = Tensor::from({kWindow * b, 2}, rel);
  const Tensor nb = add(batch.neighbors, mlp_forward(rel_t, params.posenc));

  EncodedSet qs, ns;
  qs.features = queries;
  ns.features = nb;
  for (std::size_t i = 0; i <= b; ++i) {
    qs.offsets.push_back(2 * i);
    ns.offsets.push_back(kWindow * i);
  }
  AamOptions opts;
  opts.require_ocl = false;
  opts.key_weights2 = key_w;
  const auto [q_out, n_out] = aam_forward(qs, ns, params.aam, opts);

  std::vector<std::size_t> pair_idx(2 * b);
  std::vector<Real> ones(2 * b, Real(1));
  for (std::size_t i = 0; i < 2 * b; ++i) pair_idx[i] = i;
  const Tensor q = weighted_gather(q_out.features, pair_idx, ones, 2);

  const Tensor scores = scale(segment_dot(q, n_out.features, kWindow), Real(1) / std::sqrt(static_cast<Real>(d)));
  const Tensor w = masked_softmax_rows(scores, mask);
  const Tensor expect = segment_weighted_sum(w, rel_t);  // in units of 8 px
  const Tensor z = mlp_forward(concat_cols(q, expect), params.head);
  return {scale(tanh(z), static_cast<Real>(kMaxOffset)), w};
}

Vec2 refine(const FineContext& ctx, const FineParams& params) {
  NoGradGuard guard;
  const FineOutput out = refine_batch(batch_of(ctx), params);
  return {static_cast<double>(out.offsets.at(0, 0)), static_cast<double>(out.offsets.at(0, 1))};
}

}  // namespace kpt
