#include "rica/features.hpp"

#include <algorithm>
#include <cmath>

#include "rica/error.hpp"

namespace rica {

Tensor FeatureSequence::to_tensor() const {
  check();
  return Tensor({clips, dim}, std::vector<double>(values.begin(), values.end()));
}

void FeatureSequence::check() const {
  if (clips == 0 || dim == 0) throw DataError("feature sequence '" + id + "' is empty");
  if (values.size() != clips * dim) {
    throw DataError("feature sequence '" + id + "' has " + std::to_string(values.size()) +
                    " values for shape " + std::to_string(clips) + "x" + std::to_string(dim));
  }
  if (!std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); })) {
    throw DataError("feature sequence '" + id + "' contains non-finite values");
  }
}

}  // namespace rica
