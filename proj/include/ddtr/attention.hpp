#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ddtr/layers.hpp"
#include "ddtr/tensor.hpp"

namespace ddtr {

/// Per-head projections of multi-head attention, stacked along columns.
///
/// Head m uses columns [m·d/M, (m+1)·d/M) of w_q, w_k and w_v, and the same
/// row block of w_o, so concat_m(head_m)·w_o equals Σ_m head_m·W_mo.
struct AttentionParams {
  std::size_t heads = 1;
  Tensor w_q, w_k, w_v, w_o;  // each [d×d]

  static AttentionParams create(ParameterSet& params, const std::string& name, std::size_t dim, std::size_t heads,
                                Rng& rng);
  std::size_t dim() const { return w_q.extent(0); }
  void validate() const;
};

/// softmax(Q_m K_mᵀ / √(d/M)) V_m for every head m, concatenated along columns.
/// q: [Nq×d], k, v: [Nk×d].
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value, const AttentionParams& p);

/// Self-attention with Q = K = x_f + x_p and V = x_f.
Tensor mhsa(const Tensor& x_f, const Tensor& x_p, const AttentionParams& p);

/// Q = q_c + q_p, K = x_enc + x_p, V = q_c. The value rows pair with key rows,
/// so the query and token counts must agree.
Tensor mh_cross_attention(const Tensor& q_c, const Tensor& q_p, const Tensor& x_enc, const Tensor& x_p,
                          const AttentionParams& p);

struct LevelShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t start = 0;  // first token row of this level
};

/// Placement of per-level H×W maps inside one concatenated token matrix.
struct FeatureLayout {
  std::vector<LevelShape> levels;

  void append(std::size_t height, std::size_t width);
  std::size_t tokens() const;
};

/// Normalized (x, y) per query plus the index of the layout level it reads.
struct ReferencePoints {
  Tensor xy;  // [N×2]
  std::vector<std::size_t> levels;
};

struct DeformableParams {
  std::size_t heads = 1;
  std::size_t samples = 1;
  Linear offsets;  // d → heads·samples·2, in units of the level's cells
  Linear weights;  // d → heads·samples attention logits
  Tensor w_v, w_o;

  static DeformableParams create(ParameterSet& params, const std::string& name, std::size_t dim, std::size_t heads,
                                 std::size_t samples, Rng& rng);
  std::size_t dim() const { return w_v.extent(0); }
};

/// Fused sampling core. For query q, head m, sample s the location is
/// ref_q + (Δx/W_l, Δy/H_l); the bilinear read of head m's value channels is
/// weighted by attn[q, m·k+s]. Returns [N×d].
Tensor deformable_sample(const Tensor& value, const FeatureLayout& layout, const Tensor& ref_xy,
                         std::span<const std::size_t> levels, const Tensor& offsets, const Tensor& attn,
                         std::size_t heads, std::size_t samples);

/// Per-head softmax over the k sample logits; [N × M·k].
Tensor deformable_attention_weights(const Tensor& queries, const DeformableParams& p);

Tensor deformable_mhsa(const Tensor& queries, const ReferencePoints& refs, const Tensor& value_input,
                       const FeatureLayout& layout, const DeformableParams& p);

}  // namespace ddtr
