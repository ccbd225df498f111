#include "kpt/attention.hpp"

#include "kpt/errors.hpp"
#include "kpt/ops.hpp"

namespace kpt {

EncodedSet EncodedSet::single(Tensor features) {
  EncodedSet s;
  s.offsets = {0, features.dim(0)};
  s.features = std::move(features);
  return s;
}

Tensor encode_positions(const Tensor& feats, std::span<const Vec2> positions, double width, double height,
                        const MlpParams& mlp) {
  if (feats.rank() != 2 || feats.dim(0) != positions.size()) {
    throw DimensionError("encode_positions: " + std::to_string(positions.size()) + " positions for features " +
                         shape_str(feats.shape()));
  }
  if (!(width > 0) || !(height > 0)) throw InputError("encode_positions: image extent must be positive");
  std::vector<Real> norm;
  norm.reserve(positions.size() * 2);
  for (const auto& p : positions) {
    norm.push_back(static_cast<Real>(p.x / width));
    norm.push_back(static_cast<Real>(p.y / height));
  }
  return add(feats, mlp_forward(Tensor::from({positions.size(), 2}, std::move(norm)), mlp));
}

EncodedSet append_ocl(const EncodedSet& set, const Tensor& ocl) {
  if (set.with_ocl) throw ContractError("append_ocl: set already carries the occlusion token");
  if (ocl.numel() != set.dim()) throw DimensionError("append_ocl: token width differs from the set width");
  const Tensor table = concat_rows({set.features, reshape(ocl, {1, set.dim()})});
  const std::size_t token_row = set.rows();
  std::vector<std::size_t> idx;
  idx.reserve(set.rows() + set.segments());
  EncodedSet out;
  out.with_ocl = true;
  out.offsets.push_back(0);
  for (std::size_t s = 0; s < set.segments(); ++s) {
    for (std::size_t r = set.offsets[s]; r < set.offsets[s + 1]; ++r) idx.push_back(r);
    idx.push_back(token_row);
    out.offsets.push_back(idx.size());
  }
  out.features = gather_rows(table, idx);
  return out;
}

AttentionLayerParams make_attention_layer(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng) {
  AttentionLayerParams p;
  p.wq = store.create_uniform(prefix + ".wq", {dim, dim}, dim, rng);
  p.wk = store.create_uniform(prefix + ".wk", {dim, dim}, dim, rng);
  p.wv = store.create_uniform(prefix + ".wv", {dim, dim}, dim, rng);
  p.ffn = make_mlp(store, prefix + ".ffn", {dim, 2 * dim, dim}, rng);
  p.ln1_gamma = store.create_constant(prefix + ".ln1.gamma", {dim}, Real(1));
  p.ln1_beta = store.create_constant(prefix + ".ln1.beta", {dim}, Real(0));
  p.ln2_gamma = store.create_constant(prefix + ".ln2.gamma", {dim}, Real(1));
  p.ln2_beta = store.create_constant(prefix + ".ln2.beta", {dim}, Real(0));
  return p;
}

EncodedSet attention_layer(const EncodedSet& target, const EncodedSet& source, const AttentionLayerParams& params,
                           std::span<const Real> source_key_weights) {
  if (target.dim() != source.dim() || target.dim() != params.wq.dim(0)) {
    throw DimensionError("attention_layer: set widths " + std::to_string(target.dim()) + " and " +
                         std::to_string(source.dim()) + " do not match the layer width " +
                         std::to_string(params.wq.dim(0)));
  }
  if (target.segments() != source.segments()) {
    throw DimensionError("attention_layer: target and source have different segment counts");
  }
  std::vector<AttentionSegment> segs;
  segs.reserve(target.segments());
  for (std::size_t s = 0; s < target.segments(); ++s) {
    segs.push_back({target.offsets[s], target.offsets[s + 1], source.offsets[s], source.offsets[s + 1]});
  }
  const Tensor q = matmul(target.features, params.wq);
  const Tensor k = matmul(source.features, params.wk);
  const Tensor v = matmul(source.features, params.wv);
  const Tensor message = linear_attention(q, k, v, segs, source_key_weights);
  const Tensor h = layer_norm_rows(add(target.features, message), params.ln1_gamma, params.ln1_beta);
  const Tensor out = layer_norm_rows(add(h, mlp_forward(h, params.ffn)), params.ln2_gamma, params.ln2_beta);
  return {out, target.offsets, target.with_ocl};
}

AamParams make_aam(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t depth, Rng& rng) {
  AamParams p;
  p.dim = dim;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::string base = prefix + ".layer" + std::to_string(i);
    p.blocks.push_back({make_attention_layer(store, base + ".self1", dim, rng),
                        make_attention_layer(store, base + ".self2", dim, rng),
                        make_attention_layer(store, base + ".cross12", dim, rng),
                        make_attention_layer(store, base + ".cross21", dim, rng)});
  }
  return p;
}

std::pair<EncodedSet, EncodedSet> aam_forward(const EncodedSet& f1, const EncodedSet& f2, const AamParams& params,
                                              const AamOptions& options) {
  if (options.require_ocl && !f2.with_ocl) throw ContractError("aam_forward: second set must carry the OCL token");
  if (f1.dim() != f2.dim()) throw DimensionError("aam_forward: set widths differ");
  EncodedSet a = f1, b = f2;
  for (const auto& block : params.blocks) {
    a = attention_layer(a, a, block.self1, options.key_weights1);
    b = attention_layer(b, b, block.self2, options.key_weights2);
    EncodedSet a_next = attention_layer(a, b, block.cross12, options.key_weights2);
    EncodedSet b_next = attention_layer(b, a, block.cross21, options.key_weights1);
    a = std::move(a_next);
    b = std::move(b_next);
  }
  return {a, b};
}

}  // namespace kpt
