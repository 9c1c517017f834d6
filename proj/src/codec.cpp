#include "latentmark/codec.hpp"

#include <cmath>

#include "latentmark/errors.hpp"

namespace latentmark {

namespace {

Eigen::MatrixXd seeded_gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                                       double scale) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.gaussian();
    return m;
}

// how strongly first-layer rows lean on the Laplacian filtered draw
constexpr double kLapMix = 1.0;

// 4-neighbour graph Laplacian per channel plane, applied to each row of m in
// place; symmetric, so it is its own transpose
void filter_rows_laplacian(Eigen::MatrixXd& m, int channels, int height, int width) {
    const int plane = height * width;
    Eigen::RowVectorXd row(m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        row = m.row(r);
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x) {
                    const Eigen::Index p = c * plane + y * width + x;
                    double acc = 0.0;
                    int deg = 0;
                    if (y > 0) acc += row[p - width], ++deg;
                    if (y + 1 < height) acc += row[p + width], ++deg;
                    if (x > 0) acc += row[p - 1], ++deg;
                    if (x + 1 < width) acc += row[p + 1], ++deg;
                    m(r, p) = deg * row[p] - acc;
                }
    }
}

// mean squared row norm of that Laplacian, for unit variance renormalisation
double laplacian_power(int channels, int height, int width) {
    double acc = 0.0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int deg = (y > 0) + (y + 1 < height) + (x > 0) + (x + 1 < width);
            acc += double(deg) * deg + deg;
        }
    return channels * acc / double(channels * height * width);
}

}  // namespace

FeatureExtractor build_extractor(int channels, int height, int width, int hidden_dim, int out_dim,
                                 std::uint64_t seed) {
    if (channels < 1 || height < 1 || width < 1 || hidden_dim < 1 || out_dim < 1)
        throw ParamError("extractor dims must be positive");
    FeatureExtractor ex;
    ex.channels = channels;
    ex.height = height;
    ex.width = width;
    ex.in_dim = channels * height * width;
    ex.hidden_dim = hidden_dim;
    ex.out_dim = out_dim;
    ex.seed = seed;
    Rng rng(derive_seed(seed, {0x5eed}));
    const double scale = 1.0 / std::sqrt(double(ex.in_dim));
    const Eigen::MatrixXd smooth = seeded_gaussian_matrix(hidden_dim, ex.in_dim, rng, scale);
    Eigen::MatrixXd edged = seeded_gaussian_matrix(hidden_dim, ex.in_dim, rng, scale);
    filter_rows_laplacian(edged, channels, height, width);
    const double norm = std::sqrt(1.0 + kLapMix * kLapMix * laplacian_power(channels, height, width));
    ex.w1 = (smooth + kLapMix * edged) / norm;
    ex.b1 = seeded_gaussian_matrix(hidden_dim, 1, rng, 0.1).col(0);
    ex.w2 = seeded_gaussian_matrix(out_dim, hidden_dim, rng, 1.0 / std::sqrt(double(hidden_dim)));
    ex.b2 = seeded_gaussian_matrix(out_dim, 1, rng, 0.1).col(0);
    return ex;
}

namespace {

// input layer norm keeps the tanh units in their responsive range whatever
// the prior's scale; the epsilon keeps constant grids differentiable
constexpr double kNormEps = 1e-8;

// smallest kept eigenvalue of the corpus covariance, as a fraction of the largest
constexpr double kEigFloorFrac = 1e-2;

struct NormedInput {
    Eigen::ArrayXd z;
    double sd = 1.0;
};

NormedInput normalize_input(const LatentGrid& image, const FeatureExtractor& ex,
                            const char* what) {
    if (image.size() != ex.in_dim)
        throw ShapeError(std::string(what) + ": image size does not match extractor input");
    const Eigen::Map<const Eigen::ArrayXd> v(image.array().data(), image.size());
    NormedInput n;
    n.z = v - v.mean();
    n.sd = std::sqrt(n.z.square().mean() + kNormEps);
    n.z /= n.sd;
    return n;
}

Eigen::ArrayXd mirror_columns(const Eigen::ArrayXd& z, int channels, int height, int width) {
    Eigen::ArrayXd out(z.size());
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < height; ++y) {
            const Eigen::Index row = (static_cast<Eigen::Index>(c) * height + y) * width;
            for (int x = 0; x < width; ++x) out[row + x] = z[row + (width - 1 - x)];
        }
    return out;
}

}  // namespace

// Features are averaged over the horizontal-flip orbit, mimicking the flip
// stability an augmentation-trained encoder has; mirrored inputs extract to
// identical embeddings.
Eigen::VectorXd extract(const LatentGrid& image, const FeatureExtractor& ex) {
    const NormedInput n = normalize_input(image, ex, "extract");
    const Eigen::ArrayXd zf = mirror_columns(n.z, image.channels(), image.height(), image.width());
    Eigen::VectorXd h = (ex.w1 * n.z.matrix() + ex.b1).array().tanh().matrix() +
                        (ex.w1 * zf.matrix() + ex.b1).array().tanh().matrix();
    return 0.5 * (ex.w2 * h) + ex.b2;
}

LatentGrid extract_input_vjp(const LatentGrid& image, const FeatureExtractor& ex,
                             const Eigen::VectorXd& upstream) {
    if (upstream.size() != ex.out_dim)
        throw ShapeError("extract_input_vjp: upstream size does not match extractor output");
    const NormedInput n = normalize_input(image, ex, "extract_input_vjp");
    const Eigen::ArrayXd zf = mirror_columns(n.z, image.channels(), image.height(), image.width());
    const Eigen::VectorXd gh = 0.5 * (ex.w2.transpose() * upstream);
    auto branch = [&](const Eigen::ArrayXd& zin) {
        const Eigen::ArrayXd h = (ex.w1 * zin.matrix() + ex.b1).array().tanh();
        const Eigen::VectorXd gpre = (gh.array() * (1.0 - h.square())).matrix();
        return Eigen::ArrayXd((ex.w1.transpose() * gpre).array());
    };
    // the mirror is its own inverse, so its transpose is another mirror
    const Eigen::ArrayXd gz =
        branch(n.z) +
        mirror_columns(branch(zf), image.channels(), image.height(), image.width());
    // layer-norm backward, exact for z = (v - mean)/sd with the eps inside sd
    const Eigen::ArrayXd gv = (gz - gz.mean() - n.z * (gz * n.z).mean()) / n.sd;
    LatentGrid out = LatentGrid::zeros_like(image);
    out.array() = gv;
    return out;
}

Message random_message(int k, Rng& rng) {
    if (k < 1) throw ParamError("message length must be positive");
    Message m;
    m.bits.resize(static_cast<std::size_t>(k));
    for (auto& b : m.bits) b = rng.coin() ? 1 : -1;
    return m;
}

CarrierSet whiten_carriers(const Eigen::MatrixXd& corpus_embeddings, int k, std::uint64_t seed) {
    const Eigen::Index m = corpus_embeddings.rows();
    const Eigen::Index d = corpus_embeddings.cols();
    if (k < 1) throw ParamError("carrier count must be positive");
    if (k > d) throw ParamError("carrier count cannot exceed embedding dimension");
    if (m < d) throw ParamError("whitening corpus needs at least D rows");

    CarrierSet cs;
    cs.k = k;
    cs.dim = static_cast<int>(d);
    cs.seed = seed;
    cs.mean = corpus_embeddings.colwise().mean();
    const Eigen::MatrixXd centered = corpus_embeddings.rowwise() - cs.mean.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(m);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success)
        throw DegenerateError("whitening eigendecomposition failed");
    const Eigen::ArrayXd evals = es.eigenvalues().array();
    const double lead = evals.maxCoeff();
    if (!(lead > 0.0)) throw DegenerateError("whitening covariance is degenerate");

    // Whitening is restricted to the well estimated part of the spectrum.
    // Embeddings of natural content live on a much lower dimensional sheet
    // than the raw feature dimension, and dividing by near zero tail
    // eigenvalues would turn sampling noise into the dominant signal.
    const double floor = kEigFloorFrac * lead;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < d; ++i)
        if (evals(i) >= floor) ++rank;
    rank = std::max<Eigen::Index>(rank, k);
    // eigenvalues come out ascending
    const Eigen::MatrixXd basis = es.eigenvectors().rightCols(rank);
    const Eigen::ArrayXd kept = evals.tail(rank);
    if (kept.minCoeff() <= 0.0)
        throw DegenerateError("whitening spectrum has a nonpositive kept eigenvalue");
    cs.whiten = basis * kept.rsqrt().matrix().asDiagonal() * basis.transpose();

    // orthonormal carrier rows from a seeded gaussian draw inside the kept
    // eigenspace, expressed in the original feature coordinates
    Rng rng(derive_seed(seed, {0xca22}));
    const Eigen::MatrixXd g = seeded_gaussian_matrix(rank, k, rng, 1.0);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rank, k);
    cs.carriers = (basis * q).transpose();
    return cs;
}

Eigen::VectorXd projections(const Eigen::VectorXd& embedding, const CarrierSet& cs) {
    if (embedding.size() != cs.dim) throw ShapeError("projections: embedding dimension mismatch");
    return cs.carriers * (cs.whiten * (embedding - cs.mean));
}

Message decode(const Eigen::VectorXd& embedding, const CarrierSet& cs) {
    const Eigen::VectorXd p = projections(embedding, cs);
    Message m;
    m.bits.resize(static_cast<std::size_t>(cs.k));
    for (int i = 0; i < cs.k; ++i) m.bits[static_cast<std::size_t>(i)] = p[i] >= 0.0 ? 1 : -1;
    return m;
}

double msg_loss(const Eigen::VectorXd& embedding, const CarrierSet& cs, const Message& m,
                double margin) {
    if (margin < 0.0) throw ParamError("hinge margin must be nonnegative");
    if (m.k() != cs.k) throw ShapeError("msg_loss: message length does not match carriers");
    const Eigen::VectorXd p = projections(embedding, cs);
    double loss = 0.0;
    for (int i = 0; i < cs.k; ++i)
        loss += std::max(0.0, margin - p[i] * m.bits[static_cast<std::size_t>(i)]);
    return loss / static_cast<double>(cs.k);
}

Eigen::VectorXd msg_loss_embedding_grad(const Eigen::VectorXd& embedding, const CarrierSet& cs,
                                        const Message& m, double margin) {
    if (margin < 0.0) throw ParamError("hinge margin must be nonnegative");
    if (m.k() != cs.k) throw ShapeError("msg_loss_embedding_grad: message length mismatch");
    const Eigen::VectorXd p = projections(embedding, cs);
    Eigen::VectorXd dldp = Eigen::VectorXd::Zero(cs.k);
    for (int i = 0; i < cs.k; ++i) {
        const double mi = static_cast<double>(m.bits[static_cast<std::size_t>(i)]);
        if (margin - p[i] * mi > 0.0) dldp[i] = -mi / static_cast<double>(cs.k);
    }
    return cs.whiten.transpose() * (cs.carriers.transpose() * dldp);
}

int matched_bits(const Message& a, const Message& b) {
    if (a.k() != b.k()) throw ShapeError("matched_bits: message lengths differ");
    int n = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i)
        if (a.bits[i] == b.bits[i]) ++n;
    return n;
}

double bit_accuracy(const Message& a, const Message& b) {
    return static_cast<double>(matched_bits(a, b)) / static_cast<double>(a.k());
}

std::string bits_string(const Message& m) {
    std::string s;
    s.reserve(m.bits.size());
    for (int b : m.bits) s.push_back(b > 0 ? '+' : '-');
    return s;
}

Message message_from_bits(const std::string& s) {
    Message m;
    m.bits.reserve(s.size());
    for (char c : s) {
        if (c == '+')
            m.bits.push_back(1);
        else if (c == '-')
            m.bits.push_back(-1);
        else
            throw ParamError("message strings use only '+' and '-'");
    }
    if (m.bits.empty()) throw ParamError("empty message string");
    return m;
}

int detection_threshold(int k, double fpr) {
    if (k < 1 || k > 64) throw ParamError("detection_threshold supports 1 <= k <= 64");
    if (!(fpr > 0.0 && fpr < 1.0)) throw ParamError("fpr must be in (0, 1)");

    // C(k, j) row of Pascal's triangle, exact
    std::vector<unsigned __int128> binom(static_cast<std::size_t>(k) + 1, 0);
    binom[0] = 1;
    for (int row = 1; row <= k; ++row)
        for (int j = row; j >= 1; --j) binom[static_cast<std::size_t>(j)] += binom[static_cast<std::size_t>(j) - 1];

    const long double denom = std::pow(2.0L, static_cast<long double>(k));
    unsigned __int128 tail = 0;
    // walk tau downward accumulating the tail; remember the smallest tau
    // still meeting the target
    int best = k + 1;
    for (int tau = k; tau >= 0; --tau) {
        tail += binom[static_cast<std::size_t>(tau)];
        const long double p = static_cast<long double>(tail) / denom;
        if (p <= static_cast<long double>(fpr))
            best = tau;
        else
            break;
    }
    return best;
}

double tpr_at_fpr(const std::vector<int>& matched_counts, int k, double fpr) {
    if (matched_counts.empty()) throw ReportError("tpr_at_fpr: no matched-bit counts");
    const int tau = detection_threshold(k, fpr);
    int hits = 0;
    for (int c : matched_counts) {
        if (c < 0 || c > k) throw ParamError("tpr_at_fpr: count outside [0, k]");
        if (c >= tau) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(matched_counts.size());
}

}  // namespace latentmark
