#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <vector>

#include "latentmark/sampler.hpp"
#include "latentmark/watermark.hpp"

namespace latentmark {

enum class GradMethod { adjoint, reference, finite_diff };

struct GradResult {
    LatentGrid grad_ws;
    LatentGrid grad_wd;
    GradMethod method = GradMethod::adjoint;
};

// everything that pins one watermarked sampling path
struct PathConfig {
    SamplerConfig sampler;
    EmbedConfig embed;
    WatermarkMode mode = WatermarkMode::dual;
};

// Live-buffer bookkeeping for the gradient passes. begin() pins the baseline
// so only buffers the pass itself retains are counted; sample_boundary()
// runs once per backward step.
struct MemoryStats {
    bool begun = false;
    std::int64_t baseline = 0;
    std::int64_t peak_retained = 0;
    std::vector<std::int64_t> boundary_retained;

    void begin() {
        begun = true;
        baseline = GridBufferCount::now();
        peak_retained = 0;
        boundary_retained.clear();
    }
    void sample_boundary() {
        const std::int64_t r = GridBufferCount::now() - baseline;
        boundary_retained.push_back(r);
        peak_retained = std::max(peak_retained, r);
    }
};

// discrete increment x_{t_prev} - x_t of the (possibly watermarked) step at t
LatentGrid residual_f(const LatentGrid& x, int t, const PathConfig& cfg,
                      const MixturePrior& prior, const NoiseScheduleD& sched,
                      const WatermarkPair& pair);

// Backward sweep with O(1) retained state: predecessors are reconstructed by
// inverting each step with fixed-point corrections run to tolerance, the
// adjoint is pushed through the hand-derived denoiser VJP, and watermark
// gradients are picked up at their injection points.
GradResult adjoint_gradient(const LatentGrid& x0, const LatentGrid& dldx0, const LatentGrid& x_T,
                            const PathConfig& cfg, const MixturePrior& prior,
                            const NoiseScheduleD& sched, const WatermarkPair& pair,
                            MemoryStats* stats = nullptr);

// exact reverse mode through a recorded trajectory; memory grows with N
GradResult reference_gradient(const Trajectory& traj, const LatentGrid& dldx0,
                              const LatentGrid& x_T, const PathConfig& cfg,
                              const MixturePrior& prior, const NoiseScheduleD& sched,
                              const WatermarkPair& pair, MemoryStats* stats = nullptr);

using OutputGradFn = std::function<LatentGrid(const LatentGrid& x0)>;

// forward + backward in one call so MemoryStats sees the whole path,
// including the recorded trajectory on the reference side
GradResult grad_via_adjoint(const LatentGrid& x_T, const PathConfig& cfg,
                            const MixturePrior& prior, const NoiseScheduleD& sched,
                            const WatermarkPair& pair, const OutputGradFn& out_grad,
                            MemoryStats* stats = nullptr);

GradResult grad_via_reference(const LatentGrid& x_T, const PathConfig& cfg,
                              const MixturePrior& prior, const NoiseScheduleD& sched,
                              const WatermarkPair& pair, const OutputGradFn& out_grad,
                              MemoryStats* stats = nullptr);

struct FdCoord {
    int which = 0;  // 0 = w_s, 1 = w_d
    Eigen::Index idx = 0;
};

struct FdResult {
    GradResult grad;
    std::vector<FdCoord> coords;  // coordinates actually probed
};

// central differences on a sampled coordinate subset; untouched coordinates
// stay zero in the result
FdResult finite_diff_gradient(const std::function<double(const WatermarkPair&)>& evaluator,
                              const WatermarkPair& pair, double h, int min_coords,
                              std::uint64_t seed);

}  // namespace latentmark
