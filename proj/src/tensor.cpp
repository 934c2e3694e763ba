#include "eatseg/tensor.hpp"

#include <algorithm>

#include "eatseg/errors.hpp"

namespace eatseg {

std::string to_string(const Shape4& s) {
    return "(" + std::to_string(s.n) + ", " + std::to_string(s.c) + ", " + std::to_string(s.h) + ", " +
           std::to_string(s.w) + ")";
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(Shape4 s) {
    require(s.numel() == data_.size(), ErrorKind::invalid_argument,
            "reshape " + to_string(shape_) + " -> " + to_string(s) + " changes element count");
    shape_ = s;
}

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid-argument";
        case ErrorKind::not_found: return "not-found";
        case ErrorKind::missing_asset: return "missing-asset";
        case ErrorKind::parse: return "parse";
        case ErrorKind::configuration: return "configuration";
        case ErrorKind::data_leak: return "data-leak";
        case ErrorKind::undefined_correlation: return "undefined-correlation";
        case ErrorKind::divergence: return "divergence";
        case ErrorKind::format: return "format";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

}  // namespace eatseg
