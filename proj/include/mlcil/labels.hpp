#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

#include "mlcil/errors.hpp"

namespace mlcil {

// per-class supervision states for a sample
inline constexpr std::int8_t kIgnore = -1;
inline constexpr std::int8_t kNegative = 0;
inline constexpr std::int8_t kPositive = 1;

// dense samples x classes matrix of {-1, 0, 1}
class LabelMatrix {
  public:
    LabelMatrix() = default;
    LabelMatrix(std::size_t samples, std::size_t classes, std::int8_t fill = kIgnore)
        : n_(samples), c_(classes), v_(samples * classes, fill) {
        require(fill == kIgnore || fill == kNegative || fill == kPositive,
                "LabelMatrix: fill must be -1, 0 or 1");
    }

    std::size_t samples() const { return n_; }
    std::size_t classes() const { return c_; }

    std::int8_t at(std::size_t i, std::size_t j) const {
        require(i < n_ && j < c_, "LabelMatrix: index out of range");
        return v_[i * c_ + j];
    }

    void set(std::size_t i, std::size_t j, std::int8_t s) {
        require(i < n_ && j < c_, "LabelMatrix: index out of range");
        require(s == kIgnore || s == kNegative || s == kPositive,
                "LabelMatrix: state must be -1, 0 or 1");
        v_[i * c_ + j] = s;
    }

    std::size_t count(std::int8_t s) const {
        std::size_t c = 0;
        for (auto v : v_) c += (v == s);
        return c;
    }

    const std::vector<std::int8_t>& data() const { return v_; }

  private:
    std::size_t n_ = 0, c_ = 0;
    std::vector<std::int8_t> v_;
};

}  // namespace mlcil
