#pragma once

#include <string>
#include <utility>

#include "mufasa/nn/mlp.hpp"
#include "mufasa/projection.hpp"

namespace mufasa::demva {

enum class FuseMode { Add, ConcatProject };

/// Learnable key/value memories of one view, stored as `<prefix>.m_k` and `<prefix>.m_v`, [S, d].
struct ExternalMemory {
  std::string prefix;
  std::size_t slots = 64;
  std::size_t dim = 0;

  std::string key_name() const { return prefix + ".m_k"; }
  std::string value_name() const { return prefix + ".m_v"; }
  std::string projection_prefix() const { return prefix + ".proj"; }
};

void init_memory(nn::Parameters& params, const ExternalMemory& mem, nn::Rng& rng,
                 FuseMode mode = FuseMode::Add);

struct AttentionOutput {
  nn::Var output;     ///< [C, H, W]
  nn::Var attention;  ///< [N, S], rows sum to one
};

/// F = flatten(feat) [N, d]; A = rownorm(colnorm(softmax_S(F m_k^T))); G = A m_v; fused with feat.
AttentionOutput external_attention(nn::Tape& t, const nn::Parameters& params,
                                   const ExternalMemory& mem, nn::Var feat,
                                   FuseMode mode = FuseMode::Add);

struct DemvaConfig {
  bool bev = true;
  bool cyl = true;
  std::size_t slots = 64;
  FuseMode mode = FuseMode::Add;
};

ExternalMemory bev_memory(const DemvaConfig& config, std::size_t channels);
ExternalMemory cyl_memory(const DemvaConfig& config, std::size_t channels);

/// Each view attends to its own memory; a view switched off passes through unchanged.
std::pair<nn::Var, nn::Var> demva_fuse(nn::Tape& t, const nn::Parameters& params,
                                       const DemvaConfig& config, nn::Var bev, nn::Var cyl);

struct FusionConfig {
  std::size_t hidden = 64;
  std::size_t d_fused = 32;
  std::string prefix = "fusion";
};

nn::MlpSpec fusion_spec(const FusionConfig& config, std::size_t d_sp, std::size_t c_bev,
                        std::size_t c_cyl);

/// Gathers each point's pillar vector from both views, concatenates (f_sp, bev, cyl) and
/// applies the fusion MLP -> [S, d_fused]. `subset` selects the rows of the assignments.
nn::Var multiview_to_points(nn::Tape& t, const nn::Parameters& params, const FusionConfig& config,
                            nn::Var bev_out, nn::Var cyl_out,
                            const projection::PillarAssignment& assign_bev,
                            const projection::PillarAssignment& assign_cyl,
                            std::span<const std::size_t> subset, nn::Var f_sp);

}  // namespace mufasa::demva
