#pragma once

#include <optional>

#include "mripet/transform.hpp"
#include "mripet/volume.hpp"

namespace mripet {

/// Centroid and orientation of an intensity distribution. Columns of `axes`
/// are principal directions ordered by descending eigenvalue, forming a
/// right-handed orthonormal frame.
struct PrincipalAxes {
  Vec3 centroid = Vec3::Zero();
  Mat3 axes = Mat3::Identity();
  Vec3 eigenvalues = Vec3::Zero();
};

struct Moments {
  Vec3 centroid = Vec3::Zero();
  Mat3 covariance = Mat3::Zero();
};

/// Intensity-weighted first and second central moments in world mm.
/// Negative intensities carry zero weight. With `threshold` set, every voxel
/// above it weighs 1 and the rest 0.
Moments intensity_moments(const Volume &vol,
                          std::optional<double> threshold = std::nullopt);

PrincipalAxes principal_axes(const Vec3 &centroid, const Mat3 &covariance);

inline PrincipalAxes principal_axes(const Moments &m) {
  return principal_axes(m.centroid, m.covariance);
}

/// Rotation + translation taking fixed-frame points onto the moving frame,
/// centered on the fixed centroid. Scale and shear start at identity.
AffineTransform initial_affine(const PrincipalAxes &fixed, const PrincipalAxes &moving);

}  // namespace mripet
