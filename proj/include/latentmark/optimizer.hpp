#pragma once

#include <cstdint>
#include <vector>

#include "latentmark/adjoint.hpp"
#include "latentmark/codec.hpp"
#include "latentmark/losses.hpp"

namespace latentmark {

// Differentiable distortion applied to the finished latent inside the
// message loss. Averaging the hinge over a small set of these makes the
// decoded bits survive the matching attacks.
struct TrainTransform {
    enum class Kind {
        identity,
        hflip,
        brightness,
        contrast,
        gaussian_blur,
        additive_noise,
        regenerate
    };
    Kind kind = Kind::identity;
    double factor = 1.0;     // brightness/contrast
    double sigma_frac = 0.0; // blur sigma as a width fraction
    double sigma = 0.0;      // additive noise stddev
    int t_a = 0;             // regenerate strength

    std::string name() const;
};

struct OptimizeSetup {
    const MixturePrior* prior = nullptr;
    const NoiseScheduleD* sched = nullptr;
    SamplerConfig sampler;
    EmbedConfig embed;
    WatermarkMode mode = WatermarkMode::dual;
    const FeatureExtractor* extractor = nullptr;
    const CarrierSet* carriers = nullptr;
    LossWeights weights;
    double margin = 1.0;
    std::vector<TrainTransform> transforms;  // empty means clean-only hinge
    double lr = 0.002;
    int iterations = 1200;
    int early_stop_after = 50;  // consecutive zero-hinge iterations; 0 disables
    std::uint64_t run_seed = 0;

    void validate() const;
};

struct ObjectiveEval {
    LossBreakdown loss;
    double bit_acc = 0.0;
    LatentGrid x0w;
};

// full objective at fixed transform draws; iter_seed pins the stochastic
// transforms so finite differences see a smooth function
ObjectiveEval evaluate_objective(const LatentGrid& x_T, const Message& m,
                                 const WatermarkPair& init, const WatermarkPair& pair,
                                 const OptimizeSetup& setup, std::uint64_t iter_seed);

GradResult objective_gradient(const LatentGrid& x_T, const Message& m, const WatermarkPair& init,
                              const WatermarkPair& pair, const OptimizeSetup& setup,
                              std::uint64_t iter_seed, GradMethod method,
                              MemoryStats* stats = nullptr);

struct HistoryRow {
    int iteration = 0;
    LossBreakdown loss;
    double bit_acc = 0.0;
};

enum class OptimizeStatus { budget_exhausted, early_stopped, diverged };

struct OptimizeResult {
    WatermarkPair pair;
    LatentGrid x0w;
    std::vector<HistoryRow> history;
    OptimizeStatus status = OptimizeStatus::budget_exhausted;
};

OptimizeResult optimize_watermark(const LatentGrid& x_T, const Message& m,
                                  const WatermarkPair& init, const OptimizeSetup& setup);

}  // namespace latentmark
