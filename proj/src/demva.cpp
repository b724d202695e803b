#include "mufasa/demva.hpp"

#include <stdexcept>

namespace mufasa::demva {

void init_memory(nn::Parameters& params, const ExternalMemory& mem, nn::Rng& rng, FuseMode mode) {
  if (mem.slots == 0 || mem.dim == 0) throw std::invalid_argument("demva: empty memory shape");
  nn::Tensor k({mem.slots, mem.dim}), v({mem.slots, mem.dim});
  nn::glorot_fill(k, mem.dim, mem.slots, rng);
  nn::glorot_fill(v, mem.slots, mem.dim, rng);
  params[mem.key_name()] = std::move(k);
  params[mem.value_name()] = std::move(v);
  if (mode == FuseMode::ConcatProject)
    nn::init_mlp(params, mem.projection_prefix(), {{2 * mem.dim, mem.dim}}, rng);
}

AttentionOutput external_attention(nn::Tape& t, const nn::Parameters& params,
                                   const ExternalMemory& mem, nn::Var feat, FuseMode mode) {
  const nn::Shape s = t.shape(feat);
  if (s.size() != 3 || s[0] != mem.dim)
    throw std::invalid_argument("demva '" + mem.prefix + "': feature map " + nn::shape_string(s) +
                                " does not match memory width " + std::to_string(mem.dim));
  const std::size_t C = s[0], N = s[1] * s[2];
  const nn::Var mk = t.parameter(mem.key_name(), nn::param_at(params, mem.key_name()));
  const nn::Var mv = t.parameter(mem.value_name(), nn::param_at(params, mem.value_name()));
  if (t.shape(mk) != nn::Shape{mem.slots, C} || t.shape(mv) != nn::Shape{mem.slots, C})
    throw std::invalid_argument("demva '" + mem.prefix + "': memory shape mismatch");

  const nn::Var F = nn::transpose(t, nn::reshape(t, feat, {C, N}));  // [N, C]
  const nn::Var logits = nn::matmul_nt(t, F, mk);                    // [N, S]
  const nn::Var a_soft = nn::softmax(t, logits, 1);
  const nn::Var a_col = nn::normalize_sum(t, a_soft, 0);
  const nn::Var A = nn::normalize_sum(t, a_col, 1);
  const nn::Var G = nn::matmul(t, A, mv);  // [N, C]

  nn::Var fused;
  if (mode == FuseMode::Add) {
    fused = nn::add(t, F, G);
  } else {
    const std::array<nn::Var, 2> parts{F, G};
    fused = nn::mlp_forward(t, params, mem.projection_prefix(), {{2 * C, C}}, nn::concat_cols(t, parts));
  }
  return {nn::reshape(t, nn::transpose(t, fused), s), A};
}

ExternalMemory bev_memory(const DemvaConfig& config, std::size_t channels) {
  return {"demva.bev", config.slots, channels};
}

ExternalMemory cyl_memory(const DemvaConfig& config, std::size_t channels) {
  return {"demva.cyl", config.slots, channels};
}

std::pair<nn::Var, nn::Var> demva_fuse(nn::Tape& t, const nn::Parameters& params,
                                       const DemvaConfig& config, nn::Var bev, nn::Var cyl) {
  nn::Var b = bev, c = cyl;
  if (config.bev)
    b = external_attention(t, params, bev_memory(config, t.shape(bev).at(0)), bev, config.mode).output;
  if (config.cyl)
    c = external_attention(t, params, cyl_memory(config, t.shape(cyl).at(0)), cyl, config.mode).output;
  return {b, c};
}

nn::MlpSpec fusion_spec(const FusionConfig& config, std::size_t d_sp, std::size_t c_bev,
                        std::size_t c_cyl) {
  return {{d_sp + c_bev + c_cyl, config.hidden, config.d_fused}};
}

nn::Var multiview_to_points(nn::Tape& t, const nn::Parameters& params, const FusionConfig& config,
                            nn::Var bev_out, nn::Var cyl_out,
                            const projection::PillarAssignment& assign_bev,
                            const projection::PillarAssignment& assign_cyl,
                            std::span<const std::size_t> subset, nn::Var f_sp) {
  if (assign_bev.pillar.size() != assign_cyl.pillar.size())
    throw std::invalid_argument("demva: view assignments come from different frames");
  if (t.shape(f_sp).at(0) != subset.size())
    throw std::invalid_argument("demva: point features do not match the sampled subset");
  projection::PillarAssignment sb{{}, assign_bev.height, assign_bev.width};
  projection::PillarAssignment sc{{}, assign_cyl.height, assign_cyl.width};
  for (std::size_t i : subset) {
    if (i >= assign_bev.pillar.size()) throw std::invalid_argument("demva: subset index out of range");
    sb.pillar.push_back(assign_bev.pillar[i]);
    sc.pillar.push_back(assign_cyl.pillar[i]);
  }
  const nn::Var gb = projection::gather_to_points(t, bev_out, sb);
  const nn::Var gc = projection::gather_to_points(t, cyl_out, sc);
  const std::array<nn::Var, 3> parts{f_sp, gb, gc};
  const auto spec = fusion_spec(config, t.shape(f_sp)[1], t.shape(gb)[1], t.shape(gc)[1]);
  return nn::mlp_forward(t, params, config.prefix, spec, nn::concat_cols(t, parts));
}

}  // namespace mufasa::demva
