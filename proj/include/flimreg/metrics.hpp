#pragma once

// Similarity of a registered pair, for reporting. Inputs are gray planes on
// the 0..255 scale; only pixels non-zero in both images (the mutual
// foreground) take part. Errors: DimensionMismatch, EmptyOverlap.

#include "flimreg/types.hpp"

namespace flimreg::metrics {

inline constexpr int kNmiBins = 64;

/// Mean squared difference on the [0, 1] scale.
double mse(const ScalarPlane& a, const ScalarPlane& b);
/// (H(a) + H(b)) / H(a, b) from a 64 x 64 joint histogram; 2 when the joint
/// entropy is zero.
double nmi(const ScalarPlane& a, const ScalarPlane& b);
/// Zero-mean normalised cross-correlation; 0 when either side is constant.
double ncc(const ScalarPlane& a, const ScalarPlane& b);

}  // namespace flimreg::metrics
