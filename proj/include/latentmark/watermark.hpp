#pragma once

#include <cstdint>

#include "latentmark/grid.hpp"
#include "latentmark/sampler.hpp"
#include "latentmark/schedule.hpp"

namespace latentmark {

struct WatermarkPair {
    LatentGrid w_s;
    LatentGrid w_d;
    double init_variance = 0.01;
    double sigma_td = 0.1;
};

struct EmbedConfig {
    int t_detail = -1;  // timestep carrying the detail watermark; -1 disables it
};

// which watermarks are active; the ablation studies flip the single modes
enum class WatermarkMode { dual, structure_only, detail_only };

WatermarkHooks make_hooks(const WatermarkPair& pair, const EmbedConfig& embed, WatermarkMode mode);

WatermarkPair init_watermarks(int channels, int height, int width, double variance,
                              std::uint64_t seed);

// Structure embedding, two stages: blend y = w_s + gamma x_T with gamma
// chosen so independent terms would hit var(x_T), then rescale y to hit it
// exactly regardless of correlation. Output variance equals var(x_T) to
// roundoff; w_s = 0 returns x_T bitwise.
LatentGrid embed_structure(const LatentGrid& x_T, const LatentGrid& w_s);

// (d embed_structure / d w_s)^T upstream, x_T held fixed
LatentGrid embed_structure_vjp_w(const LatentGrid& x_T, const LatentGrid& w_s,
                                 const LatentGrid& upstream);

// DDIM step at t_detail with the stochastic slot replaced by w_d; linear in
// w_d with unit coefficient
LatentGrid embed_detail(const LatentGrid& x_td, const LatentGrid& eps_hat, int t, int t_prev,
                        const LatentGrid& w_d, double sigma_td, const NoiseScheduleD& sched);

}  // namespace latentmark
