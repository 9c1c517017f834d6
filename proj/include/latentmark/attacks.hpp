#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "latentmark/grid.hpp"
#include "latentmark/prior.hpp"
#include "latentmark/sampler.hpp"

namespace latentmark {

// spatial primitives, also reused by the training-time transforms
LatentGrid hflip_grid(const LatentGrid& g);
LatentGrid rotate_grid(const LatentGrid& g, double degrees);  // zero fill, exact on square 90s
LatentGrid resize_through(const LatentGrid& g, double scale);
LatentGrid center_crop_through(const LatentGrid& g, double ratio);
LatentGrid gaussian_blur_grid(const LatentGrid& g, double sigma_px);
LatentGrid gaussian_blur_transpose(const LatentGrid& g, double sigma_px);
LatentGrid brightness_grid(const LatentGrid& g, double factor);
LatentGrid contrast_grid(const LatentGrid& g, double factor);
LatentGrid saturation_grid(const LatentGrid& g, double factor);  // needs 3 channels
LatentGrid quantize_grid(const LatentGrid& g, int bits);
LatentGrid random_erase_grid(const LatentGrid& g, double area_ratio, std::uint64_t seed);
LatentGrid additive_noise_grid(const LatentGrid& g, double sigma, std::uint64_t seed);

// re-noise to t_a with fresh noise, then denoise unconditionally along the
// base grid's timesteps <= t_a; t_a = 0 is the identity
LatentGrid regenerate(const LatentGrid& image, int t_a, const MixturePrior& prior,
                      const NoiseScheduleD& sched, const SamplerConfig& base,
                      std::uint64_t seed);

struct AttackSpec {
    std::string kind = "none";
    std::map<std::string, double> params;
    std::uint64_t seed = 0;

    double param(const std::string& name, double fallback) const;
    std::string label() const;
};

struct AttackContext {
    const MixturePrior* prior = nullptr;
    const NoiseScheduleD* sched = nullptr;
    SamplerConfig sampler;  // regeneration reuses this timestep grid
};

// default blur width fraction, scaled down from radius 11 at 512 px
inline constexpr double kBlurSigmaFrac = 11.0 / 512.0;

LatentGrid apply_attack(const LatentGrid& image, const AttackSpec& spec,
                        const AttackContext& ctx);

}  // namespace latentmark
