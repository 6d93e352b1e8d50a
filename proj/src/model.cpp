#include "ddtr/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "ddtr/ops.hpp"
#include "ddtr/synthetic.hpp"

namespace ddtr {

namespace {

constexpr double kClassPrior = 0.01;
constexpr double kBoxSizePrior = 0.1;
constexpr std::size_t kStemConvs = 3;
constexpr std::size_t kStemChannels[kStemConvs] = {8, 16, 16};

std::size_t conv_out(std::size_t n) { return (n + 2 - 3) / 2 + 1; }

Tensor normal_parameter(Shape shape, double sd, Rng& rng) {
  std::vector<double> data(element_count(shape));
  for (double& v : data) v = rng.normal(0.0, sd);
  return Tensor::parameter(std::move(shape), std::move(data));
}

// [C×H×W] → [H·W×C]
Tensor to_tokens(const Tensor& map) {
  const std::size_t c = map.extent(0), hw = map.extent(1) * map.extent(2);
  return transpose(reshape(map, {c, hw}));
}

}  // namespace

std::string to_string(QueryInit q) {
  switch (q) {
    case QueryInit::Static: return "static";
    case QueryInit::Pure: return "pure";
    case QueryInit::Mixed: return "mixed";
  }
  return "static";
}

QueryInit parse_query_init(const std::string& s) {
  if (s == "static") return QueryInit::Static;
  if (s == "pure") return QueryInit::Pure;
  if (s == "mixed") return QueryInit::Mixed;
  throw std::invalid_argument("query_init must be static, pure or mixed, got '" + s + "'");
}

void ModelConfig::validate() const {
  static constexpr double kScales[] = {0.25, 0.5, 0.75, 1.0};
  if (std::find(std::begin(kScales), std::end(kScales), resolution_scale) == std::end(kScales)) {
    throw std::invalid_argument("resolution_scale must be one of 0.25, 0.5, 0.75, 1.0");
  }
  if (encoder_layers != 0 && encoder_layers != 1 && encoder_layers != 3 && encoder_layers != 6) {
    throw std::invalid_argument("encoder_layers must be one of 0, 1, 3, 6");
  }
  if (feature_levels.empty()) throw std::invalid_argument("feature_levels must not be empty");
  for (std::size_t i = 0; i < feature_levels.size(); ++i) {
    if (feature_levels[i] < 1 || feature_levels[i] > static_cast<int>(kLevelCount)) {
      throw std::invalid_argument("feature level " + std::to_string(feature_levels[i]) + " outside 1..4");
    }
    if (i > 0 && feature_levels[i] <= feature_levels[i - 1]) {
      throw std::invalid_argument("feature_levels must be strictly ascending without duplicates");
    }
  }
  if (num_queries == 0) throw std::invalid_argument("num_queries must be at least 1");
  if (model_dim == 0 || model_dim % 4 != 0) throw std::invalid_argument("model_dim must be a positive multiple of 4");
  if (heads == 0 || model_dim % heads != 0) throw std::invalid_argument("model_dim must be divisible by heads");
  if (samples == 0) throw std::invalid_argument("samples must be at least 1");
  if (ffn_dim == 0) throw std::invalid_argument("ffn_dim must be at least 1");
  if (decoder_layers == 0) throw std::invalid_argument("decoder_layers must be at least 1");
  if (num_classes < 1) throw std::invalid_argument("num_classes must be at least 1");
  loss.validate();
}

Tensor refine_reference(const Tensor& ref, const Tensor& offset) {
  return sigmoid(add(inverse_sigmoid(ref), offset));
}

Tensor positional_encoding(std::size_t height, std::size_t width, std::size_t dim) {
  if (dim == 0 || dim % 4 != 0) throw std::invalid_argument("positional_encoding: dim must be a multiple of 4");
  if (height == 0 || width == 0) throw std::invalid_argument("positional_encoding: empty grid");
  const std::size_t half = dim / 2;
  std::vector<double> inv_freq(half);
  for (std::size_t k = 0; k < half; ++k) {
    inv_freq[k] = 1.0 / std::pow(10000.0, 2.0 * static_cast<double>(k / 2) / static_cast<double>(half));
  }
  Tensor pe({height * width, dim});
  auto d = pe.data();
  for (std::size_t i = 0; i < height; ++i) {
    const double y = static_cast<double>(i + 1) / static_cast<double>(height) * 2.0 * std::numbers::pi;
    for (std::size_t j = 0; j < width; ++j) {
      const double x = static_cast<double>(j + 1) / static_cast<double>(width) * 2.0 * std::numbers::pi;
      double* row = d.data() + (i * width + j) * dim;
      for (std::size_t k = 0; k < half; ++k) {
        row[k] = k % 2 == 0 ? std::sin(y * inv_freq[k]) : std::cos(y * inv_freq[k]);
        row[half + k] = k % 2 == 0 ? std::sin(x * inv_freq[k]) : std::cos(x * inv_freq[k]);
      }
    }
  }
  return pe;
}

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t n) {
  if (n > scores.size()) {
    throw std::invalid_argument("top-k selection of " + std::to_string(n) + " from only " +
                                std::to_string(scores.size()) + " tokens");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(n);
  return idx;
}

DeformableDetr::DeformableDetr(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  const std::size_t d = cfg_.model_dim;
  const auto top = static_cast<std::size_t>(cfg_.max_level());

  std::size_t in = 1;
  for (std::size_t i = 0; i < kStemConvs; ++i) {
    stem_.push_back(Conv2d::create(params_, "backbone.stem" + std::to_string(i), in, kStemChannels[i], 3, 2, 1, rng, true));
    in = kStemChannels[i];
  }
  for (std::size_t level = 2; level <= top; ++level) {
    stages_.push_back(Conv2d::create(params_, "backbone.level" + std::to_string(level), kLevelChannels[level - 2],
                                     kLevelChannels[level - 1], 3, 2, 1, rng, true));
  }
  for (int level : cfg_.feature_levels) {
    input_proj_.push_back(Linear::create(params_, "input_proj.level" + std::to_string(level),
                                         kLevelChannels[static_cast<std::size_t>(level) - 1], d, rng));
  }
  level_embed_ = params_.add("level_embed", normal_parameter({cfg_.feature_levels.size(), d}, 1.0, rng));

  for (std::size_t i = 0; i < cfg_.encoder_layers; ++i) {
    const std::string n = "encoder" + std::to_string(i);
    EncoderLayer layer{DeformableParams::create(params_, n + ".attn", d, cfg_.heads, cfg_.samples, rng),
                       LayerNorm::create(params_, n + ".norm1", d), LayerNorm::create(params_, n + ".norm2", d),
                       FeedForward::create(params_, n + ".ffn", d, cfg_.ffn_dim, rng)};
    // residual branches start at zero so stacked layers begin near the identity
    for (double& v : layer.attn.w_o.data()) v = 0.0;
    for (double& v : layer.ffn.output.weight.data()) v = 0.0;
    encoder_.push_back(std::move(layer));
  }
  for (std::size_t i = 0; i < cfg_.decoder_layers; ++i) {
    const std::string n = "decoder" + std::to_string(i);
    DecoderLayer layer{AttentionParams::create(params_, n + ".self_attn", d, cfg_.heads, rng),
                       LayerNorm::create(params_, n + ".norm1", d),
                       DeformableParams::create(params_, n + ".cross_attn", d, cfg_.heads, cfg_.samples, rng),
                       LayerNorm::create(params_, n + ".norm2", d),
                       FeedForward::create(params_, n + ".ffn", d, cfg_.ffn_dim, rng),
                       LayerNorm::create(params_, n + ".norm3", d)};
    decoder_.push_back(std::move(layer));
  }

  const auto classes = static_cast<std::size_t>(cfg_.num_classes);
  class_head_ = Linear::create(params_, "class_head", d, classes, rng);
  for (double& b : class_head_.bias.data()) b = -std::log((1.0 - kClassPrior) / kClassPrior);
  box_head_ = Mlp3::create(params_, "box_head", d, d, 4, rng);
  for (double& w : box_head_.l3.weight.data()) w = 0.0;
  const double size_logit = std::log(kBoxSizePrior / (1.0 - kBoxSizePrior));
  box_head_.l3.bias.data()[2] = size_logit;
  box_head_.l3.bias.data()[3] = size_logit;

  const std::size_t n = cfg_.num_queries;
  switch (cfg_.query_init) {
    case QueryInit::Static:
      query_content_ = params_.add("query.content", zeros_parameter({n, d}));
      query_position_ = params_.add("query.position", normal_parameter({n, d}, 1.0, rng));
      ref_head_ = Linear::create(params_, "query.reference", d, 2, rng);
      break;
    case QueryInit::Mixed:
      query_content_ = params_.add("query.content", normal_parameter({n, d}, 1.0, rng));
      [[fallthrough]];
    case QueryInit::Pure:
      proposal_pos_ = Linear::create(params_, "query.proposal_pos", d + 4, d, rng);
      break;
  }
}

FeaturePyramid DeformableDetr::backbone_forward(const Tensor& image) const {
  if (image.dim() != 3 || image.extent(0) != 1) {
    throw ShapeError("backbone: expected a [1×H×W] image, got " + to_string(image.shape()));
  }
  if (image.extent(1) < kMinImageExtent || image.extent(2) < kMinImageExtent) {
    throw std::invalid_argument("backbone: image " + std::to_string(image.extent(1)) + "×" +
                                std::to_string(image.extent(2)) + " is smaller than the stride-64 minimum of " +
                                std::to_string(kMinImageExtent));
  }
  FeaturePyramid pyramid;
  Tensor x = image;
  for (const auto& conv : stem_) x = relu(conv(x));
  pyramid.maps.push_back(x);
  for (const auto& conv : stages_) {
    x = relu(conv(x));
    pyramid.maps.push_back(x);
  }
  return pyramid;
}

Encoded DeformableDetr::encode(const FeaturePyramid& pyramid) const {
  const std::size_t d = cfg_.model_dim;
  if (pyramid.maps.size() < static_cast<std::size_t>(cfg_.max_level())) {
    throw std::invalid_argument("encode: pyramid has " + std::to_string(pyramid.maps.size()) +
                                " levels, configuration selects level " + std::to_string(cfg_.max_level()));
  }
  Encoded enc;
  std::vector<Tensor> tokens, pos;
  std::vector<double> ref_xy;
  for (std::size_t s = 0; s < cfg_.feature_levels.size(); ++s) {
    const Tensor& map = pyramid.maps[static_cast<std::size_t>(cfg_.feature_levels[s]) - 1];
    const std::size_t h = map.extent(1), w = map.extent(2);
    enc.layout.append(h, w);
    tokens.push_back(input_proj_[s](to_tokens(map)));
    pos.push_back(add_row(positional_encoding(h, w, d), slice_rows(level_embed_, s, s + 1)));
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        ref_xy.push_back((static_cast<double>(j) + 0.5) / static_cast<double>(w));
        ref_xy.push_back((static_cast<double>(i) + 0.5) / static_cast<double>(h));
        enc.token_refs.levels.push_back(s);
      }
    }
  }
  enc.tokens = tokens.size() == 1 ? tokens[0] : concat(tokens, 0);
  enc.pos = pos.size() == 1 ? pos[0] : concat(pos, 0);
  enc.token_refs.xy = Tensor({enc.layout.tokens(), 2}, std::move(ref_xy));

  Tensor x = enc.tokens;
  for (const auto& layer : encoder_) {
    const Tensor a = deformable_mhsa(add(x, enc.pos), enc.token_refs, x, enc.layout, layer.attn);
    x = layer.norm1(add(x, a));
    x = layer.norm2(add(x, layer.ffn(x)));
  }
  enc.memory = x;
  return enc;
}

HeadOutput DeformableDetr::predict(const Tensor& x, const Tensor& ref, Tensor* box_delta) const {
  const Tensor logits = class_head_(x);
  const Tensor delta = box_head_(x);
  const std::vector<Tensor> parts{inverse_sigmoid(ref), Tensor({ref.rows(), 2})};
  const Tensor boxes = sigmoid(add(delta, concat(parts, 1)));
  if (box_delta) *box_delta = delta;
  return HeadOutput{logits, boxes};
}

ObjectQueries DeformableDetr::init_queries(const Encoded& enc) const {
  const std::size_t n = cfg_.num_queries;
  const std::size_t t = enc.layout.tokens();
  ObjectQueries q;
  if (cfg_.query_init == QueryInit::Static) {
    q.content = query_content_;
    q.position = query_position_;
    q.refs.xy = sigmoid(ref_head_(query_position_));
    for (std::size_t i = 0; i < n; ++i) q.refs.levels.push_back(i % enc.layout.levels.size());
    return q;
  }
  if (n > t) {
    throw std::invalid_argument(to_string(cfg_.query_init) + " query initialization needs " + std::to_string(n) +
                                " tokens but the encoder produced only " + std::to_string(t));
  }
  const HeadOutput all = predict(enc.memory, enc.token_refs.xy);
  const std::size_t c = all.logits.cols();
  std::vector<double> score(t);
  const auto ld = all.logits.data();
  for (std::size_t i = 0; i < t; ++i) score[i] = *std::max_element(ld.begin() + i * c, ld.begin() + (i + 1) * c);
  q.selected = top_k_indices(score, n);

  const HeadOutput chosen{gather_rows(all.logits, q.selected), gather_rows(all.boxes, q.selected)};
  q.proposals = chosen;
  const Tensor box = chosen.boxes.detach();
  const std::vector<Tensor> pos_in{gather_rows(enc.pos, q.selected), inverse_sigmoid(box)};
  q.position = proposal_pos_(concat(pos_in, 1));
  q.content = cfg_.query_init == QueryInit::Pure ? gather_rows(enc.memory, q.selected) : query_content_;
  q.refs.xy = slice_cols(box, 0, 2);
  for (auto row : q.selected) q.refs.levels.push_back(enc.token_refs.levels[row]);
  return q;
}

Predictions DeformableDetr::decode(const ObjectQueries& queries, const Encoded& enc) const {
  Predictions out;
  out.proposals = queries.proposals;
  Tensor tgt = queries.content;
  ReferencePoints refs = queries.refs;
  for (const auto& layer : decoder_) {
    tgt = layer.norm1(add(tgt, mhsa(tgt, queries.position, layer.self_attn)));
    const Tensor ca = deformable_mhsa(add(tgt, queries.position), refs, enc.memory, enc.layout, layer.cross_attn);
    tgt = layer.norm2(add(tgt, ca));
    tgt = layer.norm3(add(tgt, layer.ffn(tgt)));
    Tensor delta;
    out.layers.push_back(predict(tgt, refs.xy, &delta));
    out.references.push_back(refs.xy);
    if (cfg_.ibbr) refs.xy = refine_reference(refs.xy, slice_cols(delta, 0, 2)).detach();
  }
  return out;
}

Predictions DeformableDetr::forward(const RowMatrix& image) const {
  const RowMatrix scaled = resize_pixels(image, cfg_.resolution_scale);
  Tensor x({1, static_cast<std::size_t>(scaled.rows()), static_cast<std::size_t>(scaled.cols())});
  std::copy(scaled.data(), scaled.data() + scaled.size(), x.data().begin());
  return forward_scaled(x);
}

Predictions DeformableDetr::forward_scaled(const Tensor& image) const {
  const Encoded enc = encode(backbone_forward(image));
  return decode(init_queries(enc), enc);
}

ModelCost count_params_and_flops(const ModelConfig& cfg, std::size_t height, std::size_t width) {
  cfg.validate();
  ModelCost cost;
  {
    const DeformableDetr model(cfg, 0);
    for (const auto& p : model.parameters().items()) {
      cost.params += p.tensor.size();
      if (p.backbone) cost.backbone_params += p.tensor.size();
    }
  }
  std::size_t h = static_cast<std::size_t>(std::lround(static_cast<double>(height) * cfg.resolution_scale));
  std::size_t w = static_cast<std::size_t>(std::lround(static_cast<double>(width) * cfg.resolution_scale));
  const std::size_t d = cfg.model_dim, mk = cfg.heads * cfg.samples, n = cfg.num_queries;
  const auto classes = static_cast<std::size_t>(cfg.num_classes);

  std::size_t in = 1;
  std::vector<std::size_t> level_h, level_w;
  for (std::size_t i = 0; i < kStemConvs; ++i) {
    h = conv_out(h);
    w = conv_out(w);
    cost.backbone_madds += h * w * kStemChannels[i] * in * 9;
    in = kStemChannels[i];
  }
  level_h.push_back(h);
  level_w.push_back(w);
  for (std::size_t level = 2; level <= static_cast<std::size_t>(cfg.max_level()); ++level) {
    h = conv_out(h);
    w = conv_out(w);
    cost.backbone_madds += h * w * kLevelChannels[level - 1] * kLevelChannels[level - 2] * 9;
    level_h.push_back(h);
    level_w.push_back(w);
  }

  std::size_t t = 0, proj = 0;
  for (int level : cfg.feature_levels) {
    const auto l = static_cast<std::size_t>(level) - 1;
    const std::size_t tl = level_h[l] * level_w[l];
    t += tl;
    proj += tl * kLevelChannels[l] * d;
  }
  // deformable layer: offset + weight projections, value/output projections, bilinear taps
  auto deformable = [&](std::size_t rows, std::size_t tokens) {
    return rows * d * mk * 3 + tokens * d * d + rows * d * d + rows * cfg.samples * 4 * d;
  };
  const std::size_t ffn = 2 * d * cfg.ffn_dim;
  const std::size_t heads_cost = d * classes + 2 * d * d + 4 * d;

  std::size_t madds = cost.backbone_madds + proj;
  madds += cfg.encoder_layers * (deformable(t, t) + t * ffn);
  if (cfg.query_init == QueryInit::Static) {
    madds += n * d * 2;
  } else {
    madds += t * heads_cost + n * (d + 4) * d;
  }
  madds += cfg.decoder_layers * (4 * n * d * d + 2 * n * n * d + deformable(n, t) + n * ffn + n * heads_cost);
  cost.madds = madds;
  return cost;
}

}  // namespace ddtr
