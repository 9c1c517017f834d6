#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "latentmark/grid.hpp"

namespace latentmark {

// Fixed two-layer tanh network standing in for a pretrained feature
// extractor. Weights are seeded and never trained. First-layer rows mix a
// plain gaussian draw with its grid-Laplacian filtered copy, which gives the
// features the edge sensitivity a learned encoder picks up from data.
struct FeatureExtractor {
    int channels = 0;
    int height = 0;
    int width = 0;
    int in_dim = 0;
    int hidden_dim = 0;
    int out_dim = 0;
    std::uint64_t seed = 0;
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;
    Eigen::VectorXd b2;
};

FeatureExtractor build_extractor(int channels, int height, int width, int hidden_dim, int out_dim,
                                 std::uint64_t seed);

Eigen::VectorXd extract(const LatentGrid& image, const FeatureExtractor& ex);

// (d extract / d image)^T upstream
LatentGrid extract_input_vjp(const LatentGrid& image, const FeatureExtractor& ex,
                             const Eigen::VectorXd& upstream);

struct Message {
    std::vector<int> bits;  // each exactly -1 or +1
    int k() const { return static_cast<int>(bits.size()); }
};

Message random_message(int k, Rng& rng);

// Carriers are orthonormal directions in the whitened embedding space;
// projections of unwatermarked content onto them come out ~N(0,1), which is
// what makes clean decodes coin flips.
struct CarrierSet {
    int k = 0;
    int dim = 0;
    std::uint64_t seed = 0;
    Eigen::VectorXd mean;     // corpus embedding mean
    Eigen::MatrixXd whiten;   // inverse square root of covariance on its leading eigenspace
    Eigen::MatrixXd carriers; // k x dim, orthonormal rows inside that eigenspace
};

CarrierSet whiten_carriers(const Eigen::MatrixXd& corpus_embeddings, int k, std::uint64_t seed);

// signed projections of an embedding onto every carrier, after whitening
Eigen::VectorXd projections(const Eigen::VectorXd& embedding, const CarrierSet& cs);

Message decode(const Eigen::VectorXd& embedding, const CarrierSet& cs);

double msg_loss(const Eigen::VectorXd& embedding, const CarrierSet& cs, const Message& m,
                double margin);

Eigen::VectorXd msg_loss_embedding_grad(const Eigen::VectorXd& embedding, const CarrierSet& cs,
                                        const Message& m, double margin);

double bit_accuracy(const Message& a, const Message& b);

int matched_bits(const Message& a, const Message& b);

// "+-++-" style round-trip for configs and reports
std::string bits_string(const Message& m);
Message message_from_bits(const std::string& s);

// smallest tau with P(Binomial(k, 1/2) >= tau) <= fpr, exact integer tail;
// k+1 when even tau = k cannot reach the target
int detection_threshold(int k, double fpr);

double tpr_at_fpr(const std::vector<int>& matched_counts, int k, double fpr);

}  // namespace latentmark
