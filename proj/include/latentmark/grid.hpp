#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>

#include "latentmark/errors.hpp"
#include "latentmark/rng.hpp"

namespace latentmark {

// Counts live heap buffers held by Grid instances. The adjoint pass is
// contractually O(1) in trajectory length, and the tests enforce that by
// sampling this counter at step boundaries, so every Grid special member
// below has to keep it exact.
class GridBufferCount {
public:
    static std::atomic<std::int64_t>& live() {
        static std::atomic<std::int64_t> n{0};
        return n;
    }
    static std::int64_t now() { return live().load(std::memory_order_relaxed); }
};

// Channels-first latent tensor backed by a flat Eigen array. Math code is
// expected to go through array() so Eigen expressions fuse; operator() is
// for tests and spatial code (attacks, plotting).
template <typename Scalar>
class Grid {
public:
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    Grid() = default;

    Grid(int channels, int height, int width)
        : channels_(channels), height_(height), width_(width) {
        if (channels <= 0 || height <= 0 || width <= 0)
            throw ShapeError("grid dims must be positive");
        data_ = Array::Zero(static_cast<Eigen::Index>(channels) * height * width);
        GridBufferCount::live().fetch_add(1, std::memory_order_relaxed);
    }

    Grid(const Grid& other)
        : channels_(other.channels_), height_(other.height_), width_(other.width_),
          data_(other.data_) {
        if (data_.size() > 0) GridBufferCount::live().fetch_add(1, std::memory_order_relaxed);
    }

    Grid(Grid&& other) noexcept
        : channels_(other.channels_), height_(other.height_), width_(other.width_),
          data_(std::move(other.data_)) {
        other.channels_ = other.height_ = other.width_ = 0;
        other.data_.resize(0);
    }

    Grid& operator=(const Grid& other) {
        if (this == &other) return *this;
        const bool had = data_.size() > 0;
        const bool has = other.data_.size() > 0;
        channels_ = other.channels_;
        height_ = other.height_;
        width_ = other.width_;
        data_ = other.data_;
        if (has && !had) GridBufferCount::live().fetch_add(1, std::memory_order_relaxed);
        if (!has && had) GridBufferCount::live().fetch_sub(1, std::memory_order_relaxed);
        return *this;
    }

    Grid& operator=(Grid&& other) noexcept {
        if (this == &other) return *this;
        if (data_.size() > 0) GridBufferCount::live().fetch_sub(1, std::memory_order_relaxed);
        channels_ = other.channels_;
        height_ = other.height_;
        width_ = other.width_;
        data_ = std::move(other.data_);
        other.channels_ = other.height_ = other.width_ = 0;
        other.data_.resize(0);
        return *this;
    }

    ~Grid() {
        if (data_.size() > 0) GridBufferCount::live().fetch_sub(1, std::memory_order_relaxed);
    }

    static Grid constant(int c, int h, int w, Scalar v) {
        Grid g(c, h, w);
        g.data_.setConstant(v);
        return g;
    }

    static Grid gaussian(int c, int h, int w, Rng& rng, Scalar stddev = Scalar(1)) {
        Grid g(c, h, w);
        for (Eigen::Index i = 0; i < g.data_.size(); ++i)
            g.data_[i] = stddev * static_cast<Scalar>(rng.gaussian());
        return g;
    }

    static Grid zeros_like(const Grid& ref) {
        return Grid(ref.channels_, ref.height_, ref.width_);
    }

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    Eigen::Index size() const { return data_.size(); }

    Scalar& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
    Scalar operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

    Array& array() { return data_; }
    const Array& array() const { return data_; }

    bool same_shape(const Grid& o) const {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }

    void require_same_shape(const Grid& o, const char* what) const {
        if (!same_shape(o)) throw ShapeError(std::string(what) + ": shape mismatch");
    }

private:
    Eigen::Index index(int c, int y, int x) const {
        return (static_cast<Eigen::Index>(c) * height_ + y) * width_ + x;
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    Array data_;
};

using LatentGrid = Grid<double>;

template <typename Scalar>
Scalar mean(const Grid<Scalar>& g) {
    return g.array().mean();
}

// biased (1/n) variance throughout; the embedding math depends on that choice
template <typename Scalar>
Scalar variance(const Grid<Scalar>& g) {
    const Scalar m = g.array().mean();
    return (g.array() - m).square().mean();
}

template <typename Scalar>
Scalar dot(const Grid<Scalar>& a, const Grid<Scalar>& b) {
    a.require_same_shape(b, "dot");
    return (a.array() * b.array()).sum();
}

template <typename Scalar>
Scalar rms_diff(const Grid<Scalar>& a, const Grid<Scalar>& b) {
    a.require_same_shape(b, "rms_diff");
    return std::sqrt((a.array() - b.array()).square().mean());
}

}  // namespace latentmark
