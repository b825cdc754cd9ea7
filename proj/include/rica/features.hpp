#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rica/tensor.hpp"

namespace rica {

// Pooled clip features of one video: `clips` rows of `dim` float values.
struct FeatureSequence {
  std::string id;
  std::size_t clips = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  Tensor to_tensor() const;
  // Throws DataError if the shape is inconsistent or any value is not finite.
  void check() const;

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

}  // namespace rica
