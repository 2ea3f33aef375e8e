#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "mripet/volume.hpp"

namespace mripet {

/// 12-DOF affine map  y = matrix * (x - center) + center + translation.
/// Parameter vector layout: the nine matrix entries row by row, then the
/// three translation components.
struct AffineTransform {
  Mat3 matrix = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  Vec3 center = Vec3::Zero();

  static constexpr std::size_t kNumParams = 12;

  Vec3 apply(const Vec3 &p) const { return matrix * (p - center) + center + translation; }

  Eigen::VectorXd params() const;
  static AffineTransform from_params(const Eigen::VectorXd &params,
                                     const Vec3 &center = Vec3::Zero());

  /// Same mapping expressed about another center.
  AffineTransform recentered(const Vec3 &new_center) const;
  AffineTransform inverse() const;
  /// (this o inner)(p) = this(inner(p)).
  AffineTransform compose(const AffineTransform &inner) const;

  bool invertible() const { return std::abs(matrix.determinant()) > 1e-12; }
};

Mat3 rotation_zyx(const Vec3 &angles);

/// matrix = Rz * Ry * Rx * H * diag(scale), with H the unit upper-triangular
/// shear [[1, h0, h1], [0, 1, h2], [0, 0, 1]].
AffineTransform affine_from_prs(const Vec3 &rotation, const Vec3 &translation,
                                const Vec3 &scale, const Vec3 &shear,
                                const Vec3 &center = Vec3::Zero());

/// Uniform cubic B-spline blending weights for a local coordinate u in
/// [0, 1], with derivatives d/du.
struct CubicBasis {
  std::array<double, 4> w{};
  std::array<double, 4> dw{};
};

CubicBasis cubic_basis(double u);

/// Centered cubic B-spline kernel beta3(t) on support (-2, 2).
double bspline3(double t);
double bspline3_derivative(double t);

class OutOfSupport : public Error {
 public:
  using Error::Error;
};

/// Cubic B-spline free-form deformation: x -> x + sum B(u)B(v)B(w) c_ijk over
/// the 4x4x4 control points around x.
struct BSplineFFD {
  Vec3 grid_origin = Vec3::Zero();
  Vec3 grid_spacing = Vec3::Ones();
  Index3 grid_dims{4, 4, 4};
  std::vector<Vec3> coefficients;

  /// Zero deformation whose lattice covers `geom` with one control point of
  /// margin before the first voxel and enough after the last.
  static BSplineFFD covering(const Geometry &geom, const Vec3 &spacing);

  std::size_t num_control_points() const {
    return static_cast<std::size_t>(grid_dims.x()) * grid_dims.y() * grid_dims.z();
  }
  std::size_t linear_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i)
           + static_cast<std::size_t>(grid_dims.x())
                 * (static_cast<std::size_t>(j) + static_cast<std::size_t>(grid_dims.y()) * k);
  }
  Vec3 control_point(int i, int j, int k) const {
    return grid_origin + Vec3(i, j, k).cwiseProduct(grid_spacing);
  }

  /// Cell base index and local coordinate per axis; false outside support.
  bool locate(const Vec3 &p, Index3 &base, Vec3 &u) const;

  std::optional<Vec3> try_displacement(const Vec3 &p) const;
  Vec3 displacement(const Vec3 &p) const;
  Vec3 apply(const Vec3 &p) const { return p + displacement(p); }

  double max_displacement_norm() const;

  /// Flattened coefficients [c0x, c0y, c0z, c1x, ...].
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd &params);

  void validate() const;
};

/// Nonzero weights dy_a / dc_{n,a}: (control point linear index, weight).
std::vector<std::pair<std::size_t, double>> ffd_param_gradient(const BSplineFFD &f,
                                                               const Vec3 &p);

/// Resamples `coarse` onto a finer lattice covering the same geometry.
/// Halving the spacing of a lattice built by `covering` is exact (knot
/// insertion); any other spacing interpolates the old displacement at the
/// new nodes.
BSplineFFD refine_ffd(const BSplineFFD &coarse, const Geometry &domain,
                      const Vec3 &new_spacing);

/// Fixed-to-moving mapping used for resampling: affine(ffd(x)).
struct CompositeTransform {
  std::optional<AffineTransform> affine;
  std::optional<BSplineFFD> ffd;

  Vec3 apply(const Vec3 &p) const;
};

using TransformFile = std::variant<AffineTransform, BSplineFFD>;

void write_transform(const AffineTransform &t, const std::filesystem::path &path);
void write_transform(const BSplineFFD &t, const std::filesystem::path &path);
TransformFile read_transform(const std::filesystem::path &path);

}  // namespace mripet
