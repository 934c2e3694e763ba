#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace eatseg {

/// Dense row-major 2-D grid. Used for CT slices (HU), masks and image planes.
template <typename T>
struct Plane {
    int rows = 0;
    int cols = 0;
    std::vector<T> px;

    Plane() = default;
    Plane(int r, int c, T fill = T{}) : rows(r), cols(c), px(static_cast<std::size_t>(r) * c, fill) {}

    T& at(int r, int c) { return px[static_cast<std::size_t>(r) * cols + c]; }
    const T& at(int r, int c) const { return px[static_cast<std::size_t>(r) * cols + c]; }
    std::size_t size() const { return px.size(); }
    bool same_shape(const Plane& o) const { return rows == o.rows && cols == o.cols; }

    template <typename U>
    bool same_shape(const Plane<U>& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Plane&) const = default;
};

using HuPlane = Plane<std::int16_t>;
using Mask = Plane<std::uint8_t>;
using ImagePlane = Plane<float>;

struct Shape4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::size_t numel() const { return static_cast<std::size_t>(n) * c * h * w; }
    bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

/// NCHW float tensor. Value type; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape4 s, float fill = 0.f) : shape_(s), data_(s.numel(), fill) {}
    Tensor(int n, int c, int h, int w, float fill = 0.f) : Tensor(Shape4{n, c, h, w}, fill) {}

    const Shape4& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t numel() const { return data_.size(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(shape_.h) * shape_.w; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> span() { return data_; }
    std::span<const float> span() const { return data_; }

    float* plane(int n, int c) { return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * plane_size(); }
    const float* plane(int n, int c) const {
        return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * plane_size();
    }
    float& at(int n, int c, int y, int x) { return plane(n, c)[static_cast<std::size_t>(y) * shape_.w + x]; }
    float at(int n, int c, int y, int x) const { return plane(n, c)[static_cast<std::size_t>(y) * shape_.w + x]; }

    void fill(float v);
    void reshape(Shape4 s);  // numel must match

    bool operator==(const Tensor&) const = default;

private:
    Shape4 shape_{};
    std::vector<float> data_;
};

}  // namespace eatseg
