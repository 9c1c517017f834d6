#pragma once

#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "latentmark/attacks.hpp"
#include "latentmark/optimizer.hpp"

namespace latentmark {

inline constexpr const char* kToolVersion = "0.1.0";

// procedural component means so priors are fully config-defined
struct PatternSpec {
    std::string kind = "constant";  // constant, hgrad, vgrad, checker, blob
    double amplitude = 1.0;
    std::map<std::string, double> params;
};

struct PriorComponentSpec {
    double weight = 1.0;
    double sigma2 = 1.0;
    std::string label;
    PatternSpec pattern;
};

LatentGrid build_pattern(const PatternSpec& spec, int channels, int height, int width);
MixturePrior build_prior(const std::vector<PriorComponentSpec>& specs, int channels, int height,
                         int width);

struct ExperimentConfig {
    int channels = 1, height = 8, width = 8;

    int total_steps = 1000;
    double beta_start = 1e-4, beta_end = 2e-2;
    std::string schedule_kind = "linear";

    int num_steps = 20;
    double guidance_scale = 0.0;
    std::optional<std::string> condition;

    std::vector<PriorComponentSpec> prior;

    int t_detail = 251;
    double sigma_td = 0.1;
    double init_variance = 0.01;

    int k = 16, dim = 256, hidden = 256;
    std::uint64_t extractor_seed = 101, carrier_seed = 202;
    int corpus = 2048;
    double margin = 1.0;
    double fpr = 1e-3;

    LossWeights weights;

    double lr = 0.002;
    int iterations = 600;
    int early_stop_after = 50;
    std::vector<TrainTransform> train_transforms;

    std::vector<AttackSpec> attacks;
    int images = 20;
    WatermarkMode mode = WatermarkMode::dual;
    std::uint64_t master_seed = 1;
    std::string output_dir;

    void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

// the canonical small-grid configuration; docs/desk.json is this serialized
ExperimentConfig desk_config();

// heavyweight derived state shared by one experiment
struct ExperimentContext {
    NoiseScheduleD sched;
    MixturePrior prior;
    SamplerConfig sampler;
    EmbedConfig embed;
    FeatureExtractor extractor;
    CarrierSet carriers;

    ExperimentContext(NoiseScheduleD s, MixturePrior p) : sched(std::move(s)), prior(std::move(p)) {}
};

// corpus of unconditional unwatermarked samples -> embeddings -> whitening
CarrierSet calibrate_carriers(const ExperimentConfig& cfg, const NoiseScheduleD& sched,
                              const MixturePrior& prior, const FeatureExtractor& extractor);

ExperimentContext build_context(const ExperimentConfig& cfg);

OptimizeSetup make_optimize_setup(const ExperimentConfig& cfg, const ExperimentContext& ctx,
                                  std::uint64_t run_seed);

struct RobustnessReport {
    int k = 0;
    double fpr = 1e-3;
    int images = 0;
    std::string config_digest;
    double wall_time_sec = 0.0;
    std::vector<std::string> attack_labels;     // clean row is implicit and first
    std::vector<std::vector<int>> matched;      // per surviving image: clean then per attack
    std::vector<int> image_indices;             // config image index per matched row
    std::vector<int> failed_images;
    std::vector<std::string> failure_reasons;

    struct Row {
        std::string label;
        double mean_accuracy = 0.0;
        double tpr = 0.0;
    };
    std::vector<Row> rows;  // derived; clean first

    bool operator==(const RobustnessReport&) const;
};

bool operator==(const RobustnessReport::Row&, const RobustnessReport::Row&);

nlohmann::json report_to_json(const RobustnessReport& r);
RobustnessReport report_from_json(const nlohmann::json& j);

std::uint64_t fnv1a64(const std::string& s);

// artifacts_dir empty -> nothing persisted
RobustnessReport run_experiment(const ExperimentConfig& cfg,
                                const std::string& artifacts_dir = "");

std::vector<std::string> write_report(const RobustnessReport& report, const std::string& dir,
                                      bool csv, bool json, bool plot);

void write_history_csv(const std::vector<HistoryRow>& history, const std::string& path);
void write_history_svg(const std::vector<HistoryRow>& history, const std::string& path);
void write_accuracy_svg(const RobustnessReport& report, const std::string& path);

// manifest helper; throws if a listed artifact does not exist
void write_manifest(const std::string& path, const nlohmann::json& manifest);

}  // namespace latentmark
