#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kpt/geometry.hpp"
#include "kpt/linear_attention.hpp"
#include "kpt/nn.hpp"

namespace kpt {

/// A stack of feature sets sharing a width. Segment s spans rows
/// [offsets[s], offsets[s+1]); a single set has offsets {0, N}. With
/// `with_ocl`, the last row of every segment is the occlusion token.
struct EncodedSet {
  Tensor features;
  std::vector<std::size_t> offsets;
  bool with_ocl = false;

  static EncodedSet single(Tensor features);
  std::size_t rows() const { return features.dim(0); }
  std::size_t dim() const { return features.dim(1); }
  std::size_t segments() const { return offsets.size() - 1; }
};

/// feats + MLP(p / (W, H)). Positions are normalized to [0,1]^2 first.
Tensor encode_positions(const Tensor& feats, std::span<const Vec2> positions, double width, double height,
                        const MlpParams& mlp);

/// Appends the token row to every segment. The token gets no positional term.
EncodedSet append_ocl(const EncodedSet& set, const Tensor& ocl);

struct AttentionLayerParams {
  Tensor wq, wk, wv;  // [D x D]
  MlpParams ffn;      // D -> 2D -> D
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

AttentionLayerParams make_attention_layer(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng);

/// Post-norm encoder layer: h = LN1(t + A(t Wq, s Wk, s Wv)), out = LN2(h + FFN(h)).
/// Segment i of `target` attends to segment i of `source`. Optional key
/// weights (one per source row) silence masked source rows.
EncodedSet attention_layer(const EncodedSet& target, const EncodedSet& source, const AttentionLayerParams& params,
                           std::span<const Real> source_key_weights = {});

struct AamBlockParams {
  AttentionLayerParams self1, self2, cross12, cross21;
};

struct AamParams {
  std::size_t dim = 0;
  std::vector<AamBlockParams> blocks;
  std::size_t depth() const { return blocks.size(); }
};

AamParams make_aam(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t depth, Rng& rng);

struct AamOptions {
  bool require_ocl = true;                 // the second set must carry the token
  std::span<const Real> key_weights1 = {};  // per-row weights when set 1 acts as keys
  std::span<const Real> key_weights2 = {};
};

/// Repeats [self(F1), self(F2), cross(F1<-F2), cross(F2<-F1)] per block. The
/// two cross layers read the same post-self sets.
std::pair<EncodedSet, EncodedSet> aam_forward(const EncodedSet& f1, const EncodedSet& f2, const AamParams& params,
                                              const AamOptions& options = {});

}  // namespace kpt
