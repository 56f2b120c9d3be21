#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dsvq {

// Thrown when operand shapes do not line up. Messages name both shapes.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Thrown on domain violations: non-finite data, out-of-range codes, empty groups.
class InvalidInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Thrown when an iterative kernel fails to converge or produces non-finite state.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg, std::size_t iterations = 0)
        : std::runtime_error(msg), iterations_(iterations) {}
    std::size_t iterations() const { return iterations_; }

private:
    std::size_t iterations_ = 0;
};

// Thrown on malformed container bytes. Carries the byte offset of the defect.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& msg, std::uint64_t offset)
        : std::runtime_error(msg + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::uint64_t offset() const { return offset_; }

private:
    std::uint64_t offset_ = 0;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double sigmoid_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
}

// sigmoid(40) rounds to exactly 1.0 in f64; used where a clip factor of 1 must be exact.
inline constexpr double kUnitClipLogit = 40.0;

// Finite stand-in for an unbounded headroom direction.
inline constexpr double kHeadroomCap = 1e30;

}  // namespace dsvq
