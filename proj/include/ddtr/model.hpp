#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddtr/attention.hpp"
#include "ddtr/layers.hpp"
#include "ddtr/set_loss.hpp"
#include "ddtr/tensor.hpp"

namespace ddtr {

enum class QueryInit { Static, Pure, Mixed };

std::string to_string(QueryInit q);
QueryInit parse_query_init(const std::string& s);

inline constexpr std::size_t kLevelCount = 4;
inline constexpr std::size_t kLevelStride[kLevelCount] = {8, 16, 32, 64};
inline constexpr std::size_t kLevelChannels[kLevelCount] = {16, 32, 64, 64};

struct ModelConfig {
  double resolution_scale = 1.0;
  std::size_t encoder_layers = 1;
  std::vector<int> feature_levels{2};
  std::size_t num_queries = 20;
  QueryInit query_init = QueryInit::Static;
  bool ibbr = false;
  std::size_t model_dim = 32;
  std::size_t heads = 4;
  std::size_t samples = 4;
  std::size_t ffn_dim = 64;
  std::size_t decoder_layers = 6;
  int num_classes = 2;
  LossWeights loss;

  void validate() const;
  int max_level() const { return feature_levels.back(); }
};

/// Backbone maps of the computed stages; maps[l] is level l+1 as [C×H×W].
struct FeaturePyramid {
  std::vector<Tensor> maps;
};

/// Projected token sequence of the selected levels and the encoder output.
struct Encoded {
  FeatureLayout layout;
  Tensor tokens;    // [T×d] after the 1×1 projection
  Tensor pos;       // [T×d] sine encoding + level embedding
  Tensor memory;    // [T×d] encoder output
  ReferencePoints token_refs;  // each token's own cell center
};

struct ObjectQueries {
  Tensor content;     // q_c [N×d]
  Tensor position;    // q_p [N×d]
  ReferencePoints refs;
  std::vector<std::size_t> selected;  // token rows behind pure/mixed queries
  std::optional<HeadOutput> proposals;
};

struct Predictions {
  std::vector<HeadOutput> layers;   // one per decoder layer; boxes are (cx, cy, w, h)
  std::vector<Tensor> references;   // reference points [N×2] used by each layer
  std::optional<HeadOutput> proposals;

  const HeadOutput& final() const { return layers.back(); }
};

/// sigmoid(inverse_sigmoid(ref) + offset) for ref, offset: [N×2].
Tensor refine_reference(const Tensor& ref, const Tensor& offset);

/// 2-D sine/cosine encoding of an H×W grid; rows in raster order. The first
/// d/2 channels encode y, the rest x, both scaled to (0, 2π].
Tensor positional_encoding(std::size_t height, std::size_t width, std::size_t dim);

/// Indices of the n largest scores, ties broken by lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t n);

struct ModelCost {
  std::size_t params = 0;
  std::size_t madds = 0;
  std::size_t backbone_params = 0;
  std::size_t backbone_madds = 0;
};

class DeformableDetr {
 public:
  DeformableDetr(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// image: [1×H×W] at the working resolution, H, W ≥ 64.
  FeaturePyramid backbone_forward(const Tensor& image) const;
  Encoded encode(const FeaturePyramid& pyramid) const;
  ObjectQueries init_queries(const Encoded& enc) const;
  Predictions decode(const ObjectQueries& queries, const Encoded& enc) const;
  /// Resizes by resolution_scale, then runs the full pipeline.
  Predictions forward(const RowMatrix& image) const;
  /// Full pipeline on an image already at the working resolution, [1×H×W].
  Predictions forward_scaled(const Tensor& image) const;

  /// Class logits and boxes of the shared prediction heads for rows x with
  /// reference points ref [N×2].
  HeadOutput predict(const Tensor& x, const Tensor& ref, Tensor* box_delta = nullptr) const;

 private:
  struct EncoderLayer {
    DeformableParams attn;
    LayerNorm norm1, norm2;
    FeedForward ffn;
  };
  struct DecoderLayer {
    AttentionParams self_attn;
    LayerNorm norm1;
    DeformableParams cross_attn;
    LayerNorm norm2;
    FeedForward ffn;
    LayerNorm norm3;
  };

  ModelConfig cfg_;
  ParameterSet params_;
  std::vector<Conv2d> stem_;            // stride 8 before level 1
  std::vector<Conv2d> stages_;          // stages_[i] produces level i+2
  std::vector<Linear> input_proj_;      // per selected level
  Tensor level_embed_;                  // [L×d]
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Linear class_head_;
  Mlp3 box_head_;
  Tensor query_content_;                // static/mixed q_c
  Tensor query_position_;               // static q_p
  Linear ref_head_;                     // static: q_p → reference logits
  Linear proposal_pos_;                 // pure/mixed: [pos ‖ S⁻¹(box)] → q_p
};

/// Exact parameter count and analytic multiply-add estimate for one forward
/// pass on a height×width input (before resolution scaling).
ModelCost count_params_and_flops(const ModelConfig& cfg, std::size_t height, std::size_t width);

}  // namespace ddtr
