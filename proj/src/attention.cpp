#include "ddtr/attention.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ddtr/bilinear.hpp"
#include "ddtr/ops.hpp"

namespace ddtr {

AttentionParams AttentionParams::create(ParameterSet& params, const std::string& name, std::size_t dim,
                                        std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) throw ShapeError("attention: model dim must be divisible by head count");
  AttentionParams p;
  p.heads = heads;
  p.w_q = params.add(name + ".w_q", xavier_uniform({dim, dim}, dim, dim, rng));
  p.w_k = params.add(name + ".w_k", xavier_uniform({dim, dim}, dim, dim, rng));
  p.w_v = params.add(name + ".w_v", xavier_uniform({dim, dim}, dim, dim, rng));
  p.w_o = params.add(name + ".w_o", xavier_uniform({dim, dim}, dim, dim, rng));
  return p;
}

void AttentionParams::validate() const {
  const std::size_t d = w_q.extent(0);
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: model dim must be divisible by head count");
  for (const Tensor* w : {&w_q, &w_k, &w_v, &w_o}) {
    if (w->shape() != Shape{d, d}) throw ShapeError("attention: projection must be [d×d], got " + to_string(w->shape()));
  }
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  if (q.dim() != 2 || k.dim() != 2 || v.dim() != 2) throw ShapeError("attention_core: operands must be matrices");
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d) throw ShapeError("attention_core: feature extents differ");
  if (k.rows() != v.rows()) {
    throw ShapeError("attention_core: " + std::to_string(k.rows()) + " keys but " + std::to_string(v.rows()) +
                     " values");
  }
  if (heads == 0 || d % heads != 0) throw ShapeError("attention_core: dim not divisible by heads");
  const auto nq = static_cast<Eigen::Index>(q.rows());
  const auto dh = static_cast<Eigen::Index>(d / heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out(Shape{q.rows(), d});
  std::vector<RowMatrix> probs(heads);
  const auto qm = q.matrix();
  const auto km = k.matrix();
  const auto vm = v.matrix();
  auto om = out.matrix();
  for (std::size_t m = 0; m < heads; ++m) {
    const auto c0 = static_cast<Eigen::Index>(m) * dh;
    RowMatrix s = (qm.middleCols(c0, dh) * km.middleCols(c0, dh).transpose()) * scale;
    for (Eigen::Index r = 0; r < nq; ++r) {
      const double mx = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - mx).exp();
      s.row(r) /= s.row(r).sum();
    }
    om.middleCols(c0, dh).noalias() = s * vm.middleCols(c0, dh);
    probs[m] = std::move(s);
  }

  if (needs_grad({&q, &k, &v})) {
    Tape::active()->record({q, k, v}, {out}, [q, k, v, out, probs = std::move(probs), heads, dh, scale]() mutable {
      const auto g = out.grad_matrix();
      const auto qm = q.matrix();
      const auto km = k.matrix();
      const auto vm = v.matrix();
      for (std::size_t m = 0; m < heads; ++m) {
        const auto c0 = static_cast<Eigen::Index>(m) * dh;
        const RowMatrix& a = probs[m];
        const auto gh = g.middleCols(c0, dh);
        if (v.requires_grad()) v.grad_matrix_buffer().middleCols(c0, dh).noalias() += a.transpose() * gh;
        if (!q.requires_grad() && !k.requires_grad()) continue;
        const RowMatrix da = gh * vm.middleCols(c0, dh).transpose();
        const Eigen::VectorXd rowdot = (da.array() * a.array()).rowwise().sum();
        const RowMatrix ds = (a.array() * (da.colwise() - rowdot).array()).matrix() * scale;
        if (q.requires_grad()) q.grad_matrix_buffer().middleCols(c0, dh).noalias() += ds * km.middleCols(c0, dh);
        if (k.requires_grad()) k.grad_matrix_buffer().middleCols(c0, dh).noalias() += ds.transpose() * qm.middleCols(c0, dh);
      }
    });
  }
  return out;
}

Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value, const AttentionParams& p) {
  p.validate();
  if (query.dim() != 2 || query.cols() != p.dim()) {
    throw ShapeError("attention: query " + to_string(query.shape()) + " does not match model dim " +
                     std::to_string(p.dim()));
  }
  const Tensor heads = attention_core(matmul(query, p.w_q), matmul(key, p.w_k), matmul(value, p.w_v), p.heads);
  return matmul(heads, p.w_o);
}

Tensor mhsa(const Tensor& x_f, const Tensor& x_p, const AttentionParams& p) {
  const Tensor qk = add(x_f, x_p);
  return multi_head_attention(qk, qk, x_f, p);
}

Tensor mh_cross_attention(const Tensor& q_c, const Tensor& q_p, const Tensor& x_enc, const Tensor& x_p,
                          const AttentionParams& p) {
  if (q_c.rows() != x_enc.rows()) {
    throw ShapeError("mh_cross_attention: V = q_c pairs with encoder keys, so " + std::to_string(q_c.rows()) +
                     " queries need " + std::to_string(q_c.rows()) + " tokens, got " + std::to_string(x_enc.rows()));
  }
  return multi_head_attention(add(q_c, q_p), add(x_enc, x_p), q_c, p);
}

// ---------------------------------------------------------------------------

void FeatureLayout::append(std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ShapeError("feature level extents must be positive");
  levels.push_back(LevelShape{height, width, tokens()});
}

std::size_t FeatureLayout::tokens() const {
  if (levels.empty()) return 0;
  const auto& last = levels.back();
  return last.start + last.height * last.width;
}

DeformableParams DeformableParams::create(ParameterSet& params, const std::string& name, std::size_t dim,
                                          std::size_t heads, std::size_t samples, Rng& rng) {
  if (heads == 0 || dim % heads != 0) throw ShapeError("deformable attention: dim not divisible by heads");
  if (samples == 0) throw std::invalid_argument("deformable attention: need at least one sample");
  DeformableParams p;
  p.heads = heads;
  p.samples = samples;
  p.offsets = Linear::create(params, name + ".offsets", dim, heads * samples * 2, rng);
  for (double& w : p.offsets.weight.data()) w = 0.0;
  // initial sampling pattern: head m looks along direction θ_m, sample s at (s+1)/2 cells
  auto bias = p.offsets.bias.data();
  for (std::size_t m = 0; m < heads; ++m) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(heads);
    double dx = std::cos(theta), dy = std::sin(theta);
    const double norm = std::max(std::abs(dx), std::abs(dy));
    dx /= norm;
    dy /= norm;
    for (std::size_t s = 0; s < samples; ++s) {
      const double r = 0.5 * static_cast<double>(s + 1);
      bias[(m * samples + s) * 2] = dx * r;
      bias[(m * samples + s) * 2 + 1] = dy * r;
    }
  }
  p.weights = Linear::create(params, name + ".weights", dim, heads * samples, rng);
  for (double& w : p.weights.weight.data()) w = 0.0;
  p.w_v = params.add(name + ".w_v", xavier_uniform({dim, dim}, dim, dim, rng));
  p.w_o = params.add(name + ".w_o", xavier_uniform({dim, dim}, dim, dim, rng));
  return p;
}

Tensor deformable_sample(const Tensor& value, const FeatureLayout& layout, const Tensor& ref_xy,
                         std::span<const std::size_t> levels, const Tensor& offsets, const Tensor& attn,
                         std::size_t heads, std::size_t samples) {
  if (value.dim() != 2 || value.rows() != layout.tokens()) {
    throw ShapeError("deformable_sample: value " + to_string(value.shape()) + " does not match layout of " +
                     std::to_string(layout.tokens()) + " tokens");
  }
  const std::size_t n = ref_xy.rows();
  const std::size_t d = value.cols();
  if (ref_xy.cols() != 2) throw ShapeError("deformable_sample: reference points must be [N×2]");
  if (heads == 0 || d % heads != 0) throw ShapeError("deformable_sample: dim not divisible by heads");
  if (levels.size() != n) throw ShapeError("deformable_sample: one level index per query required");
  if (offsets.shape() != Shape{n, heads * samples * 2}) {
    throw ShapeError("deformable_sample: offsets must be [N×" + std::to_string(heads * samples * 2) + "], got " +
                     to_string(offsets.shape()));
  }
  if (attn.shape() != Shape{n, heads * samples}) {
    throw ShapeError("deformable_sample: attention weights must be [N×" + std::to_string(heads * samples) + "]");
  }
  for (auto l : levels) {
    if (l >= layout.levels.size()) {
      throw std::out_of_range("deformable_sample: level " + std::to_string(l) + " not among " +
                              std::to_string(layout.levels.size()) + " provided maps");
    }
  }
  const std::size_t dh = d / heads;
  const std::size_t per_query = heads * samples;

  std::vector<BilinearStencil> stencils(n * per_query);
  auto rd = ref_xy.data();
  auto od = offsets.data();
  auto ad = attn.data();
  auto vd = value.data();
  Tensor out(Shape{n, d});
  auto outd = out.data();
  for (std::size_t q = 0; q < n; ++q) {
    const LevelShape& lv = layout.levels[levels[q]];
    const double inv_w = 1.0 / static_cast<double>(lv.width);
    const double inv_h = 1.0 / static_cast<double>(lv.height);
    for (std::size_t m = 0; m < heads; ++m) {
      for (std::size_t s = 0; s < samples; ++s) {
        const std::size_t j = m * samples + s;
        const double x = rd[q * 2] + od[q * per_query * 2 + j * 2] * inv_w;
        const double y = rd[q * 2 + 1] + od[q * per_query * 2 + j * 2 + 1] * inv_h;
        if (!std::isfinite(x) || !std::isfinite(y)) throw std::domain_error("deformable_sample: non-finite location");
        auto& st = stencils[q * per_query + j];
        st = BilinearStencil::at(lv.height, lv.width, x, y);
        const double a = ad[q * per_query + j];
        for (int t = 0; t < 4; ++t) {
          const double wa = a * st.weight[t];
          if (wa == 0.0) continue;
          const double* src = &vd[(lv.start + st.index[t]) * d + m * dh];
          double* dst = &outd[q * d + m * dh];
          for (std::size_t c = 0; c < dh; ++c) dst[c] += wa * src[c];
        }
      }
    }
  }

  if (needs_grad({&value, &ref_xy, &offsets, &attn})) {
    std::vector<std::size_t> lv_copy(levels.begin(), levels.end());
    Tape::active()->record(
        {value, ref_xy, offsets, attn}, {out},
        [value, ref_xy, offsets, attn, out, layout, lv_copy, stencils = std::move(stencils), heads, samples, d, dh, n,
         per_query]() mutable {
          auto g = out.grad();
          auto vd = value.data();
          auto ad = attn.data();
          std::span<double> gv, gr, go, ga;
          if (value.requires_grad()) gv = value.grad_buffer();
          if (ref_xy.requires_grad()) gr = ref_xy.grad_buffer();
          if (offsets.requires_grad()) go = offsets.grad_buffer();
          if (attn.requires_grad()) ga = attn.grad_buffer();
          for (std::size_t q = 0; q < n; ++q) {
            const LevelShape& lv = layout.levels[lv_copy[q]];
            const double inv_w = 1.0 / static_cast<double>(lv.width);
            const double inv_h = 1.0 / static_cast<double>(lv.height);
            for (std::size_t m = 0; m < heads; ++m) {
              const double* gq = &g[q * d + m * dh];
              for (std::size_t s = 0; s < samples; ++s) {
                const std::size_t j = m * samples + s;
                const auto& st = stencils[q * per_query + j];
                const double a = ad[q * per_query + j];
                double da = 0.0, dx = 0.0, dy = 0.0;
                for (int t = 0; t < 4; ++t) {
                  const std::size_t row = (lv.start + st.index[t]) * d + m * dh;
                  double dot = 0.0;
                  for (std::size_t c = 0; c < dh; ++c) dot += gq[c] * vd[row + c];
                  da += st.weight[t] * dot;
                  dx += st.dweight_dx[t] * dot;
                  dy += st.dweight_dy[t] * dot;
                  if (!gv.empty()) {
                    const double wa = a * st.weight[t];
                    for (std::size_t c = 0; c < dh; ++c) gv[row + c] += wa * gq[c];
                  }
                }
                if (!ga.empty()) ga[q * per_query + j] += da;
                if (!gr.empty()) {
                  gr[q * 2] += a * dx;
                  gr[q * 2 + 1] += a * dy;
                }
                if (!go.empty()) {
                  go[q * per_query * 2 + j * 2] += a * dx * inv_w;
                  go[q * per_query * 2 + j * 2 + 1] += a * dy * inv_h;
                }
              }
            }
          }
        });
  }
  return out;
}

Tensor deformable_attention_weights(const Tensor& queries, const DeformableParams& p) {
  const Tensor logits = p.weights(queries);
  const std::size_t n = queries.rows();
  const Tensor grouped = reshape(logits, Shape{n, p.heads, p.samples});
  return reshape(softmax(grouped, 2), Shape{n, p.heads * p.samples});
}

Tensor deformable_mhsa(const Tensor& queries, const ReferencePoints& refs, const Tensor& value_input,
                       const FeatureLayout& layout, const DeformableParams& p) {
  if (queries.dim() != 2 || queries.cols() != p.dim()) {
    throw ShapeError("deformable_mhsa: queries " + to_string(queries.shape()) + " do not match model dim");
  }
  if (refs.xy.rows() != queries.rows()) throw ShapeError("deformable_mhsa: one reference point per query required");
  const Tensor offsets = p.offsets(queries);
  const Tensor attn = deformable_attention_weights(queries, p);
  const Tensor value = matmul(value_input, p.w_v);
  const Tensor sampled = deformable_sample(value, layout, refs.xy, refs.levels, offsets, attn, p.heads, p.samples);
  return matmul(sampled, p.w_o);
}

}  // namespace ddtr
