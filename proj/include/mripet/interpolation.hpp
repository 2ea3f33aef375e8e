#pragma once

#include "mripet/transform.hpp"
#include "mripet/volume.hpp"

namespace mripet {

/// Cubic B-spline coefficients of a volume, on the volume's own grid. The
/// spline through them reproduces every original sample.
struct SplineCoefficients {
  Volume coeffs;
  /// Range of the original samples, kept for histogram bin mapping.
  double data_min = 0.0;
  double data_max = 0.0;

  const Geometry &geometry() const { return coeffs.geometry(); }
};

/// Causal/anticausal recursive filtering along each axis with pole
/// sqrt(3) - 2 and mirror (whole-sample symmetric) boundaries.
SplineCoefficients prefilter(const Volume &vol);

/// In-place prefilter of one strided line.
void prefilter_line(double *line, std::size_t n, std::ptrdiff_t stride);

struct SplineSample {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();  ///< d value / d world position, per mm
  bool inside = false;
};

/// Evaluates the spline at a continuous voxel index. Points outside
/// [0, n-1] on any axis return value 0, zero gradient and inside = false.
SplineSample eval(const SplineCoefficients &c, const Vec3 &index, bool with_gradient = true);

/// Trilinear interpolation of raw samples; 0 outside the grid.
double eval_linear(const Volume &vol, const Vec3 &index);

/// Resamples `moving` onto `fixed_geometry`: each output voxel is the
/// moving spline at t(fixed world point). Non-overlapping voxels are 0.
Volume resample(const Volume &moving, const CompositeTransform &t, const Geometry &fixed_geometry);
Volume resample(const SplineCoefficients &moving, const CompositeTransform &t,
                const Geometry &fixed_geometry);

}  // namespace mripet
