#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace weightcorr {

/// Channels x height x width. Flat feature vectors use height = width = 1.
struct Shape {
  std::size_t channels = 0;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const noexcept { return channels * height * width; }
  bool is_flat() const noexcept { return height == 1 && width == 1; }
  bool operator==(const Shape&) const = default;
};

enum class Split { kTrain, kTest };

std::string_view to_string(Split split);

/// n samples stored contiguously, one label per sample.
struct Dataset {
  Shape sample_shape;
  std::vector<double> inputs;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  Split split = Split::kTrain;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> sample(std::size_t i) const {
    return std::span<const double>(inputs).subspan(i * sample_shape.size(), sample_shape.size());
  }

  /// Throws FormatError if n == 0, sizes disagree or a label is out of range.
  void validate() const;

  /// First `n` samples (or all, if fewer).
  Dataset head(std::size_t n) const;
};

}  // namespace weightcorr
