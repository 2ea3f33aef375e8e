#include "mripet/transform.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "mripet/interpolation.hpp"

namespace mripet {

Eigen::VectorXd AffineTransform::params() const {
  Eigen::VectorXd p(kNumParams);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p[r * 3 + c] = matrix(r, c);
  p.tail<3>() = translation;
  return p;
}

AffineTransform AffineTransform::from_params(const Eigen::VectorXd &params,
                                             const Vec3 &center) {
  if (params.size() != static_cast<Eigen::Index>(kNumParams))
    throw Error("affine parameter vector must have 12 entries");
  AffineTransform t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.matrix(r, c) = params[r * 3 + c];
  t.translation = params.tail<3>();
  t.center = center;
  return t;
}

AffineTransform AffineTransform::recentered(const Vec3 &new_center) const {
  AffineTransform t = *this;
  t.center = new_center;
  // M(x - c) + c + t == M(x - c') + c' + t'  =>  t' = t + (M - I)(c' - c)
  t.translation = translation + (matrix - Mat3::Identity()) * (new_center - center);
  return t;
}

AffineTransform AffineTransform::inverse() const {
  if (!invertible()) throw Error("affine transform is not invertible");
  AffineTransform inv;
  inv.matrix = matrix.inverse();
  // Inverse maps the image of the center back onto the center.
  inv.center = center + translation;
  inv.translation = -translation;
  return inv;
}

AffineTransform AffineTransform::compose(const AffineTransform &inner) const {
  AffineTransform t;
  t.matrix = matrix * inner.matrix;
  t.center = inner.center;
  t.translation = apply(inner.apply(inner.center)) - inner.center;
  return t;
}

Mat3 rotation_zyx(const Vec3 &angles) {
  return (Eigen::AngleAxisd(angles.z(), Vec3::UnitZ())
          * Eigen::AngleAxisd(angles.y(), Vec3::UnitY())
          * Eigen::AngleAxisd(angles.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

AffineTransform affine_from_prs(const Vec3 &rotation, const Vec3 &translation,
                                const Vec3 &scale, const Vec3 &shear, const Vec3 &center) {
  if ((scale.array() == 0.0).any()) throw Error("affine scale factors must be nonzero");
  Mat3 h = Mat3::Identity();
  h(0, 1) = shear[0];
  h(0, 2) = shear[1];
  h(1, 2) = shear[2];
  AffineTransform t;
  t.matrix = rotation_zyx(rotation) * h * scale.asDiagonal();
  t.translation = translation;
  t.center = center;
  return t;
}

CubicBasis cubic_basis(double u) {
  const double u2 = u * u;
  const double u3 = u2 * u;
  const double v = 1.0 - u;
  CubicBasis b;
  b.w = {v * v * v / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
         (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0, u3 / 6.0};
  b.dw = {-0.5 * v * v, (3.0 * u2 - 4.0 * u) / 2.0, (-3.0 * u2 + 2.0 * u + 1.0) / 2.0,
          0.5 * u2};
  return b;
}

double bspline3(double t) {
  const double a = std::abs(t);
  if (a < 1.0) return (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0;
  if (a < 2.0) {
    const double b = 2.0 - a;
    return b * b * b / 6.0;
  }
  return 0.0;
}

double bspline3_derivative(double t) {
  const double a = std::abs(t);
  const double s = t < 0.0 ? -1.0 : 1.0;
  if (a < 1.0) return s * (-2.0 * a + 1.5 * a * a);
  if (a < 2.0) {
    const double b = 2.0 - a;
    return -s * 0.5 * b * b;
  }
  return 0.0;
}

BSplineFFD BSplineFFD::covering(const Geometry &geom, const Vec3 &spacing) {
  if ((spacing.array() <= 0.0).any()) throw Error("FFD grid spacing must be positive");
  BSplineFFD f;
  f.grid_spacing = spacing;
  f.grid_origin = geom.origin - spacing;
  const Vec3 extent = geom.extent();
  for (int a = 0; a < 3; ++a) {
    const int intervals = std::max(1, static_cast<int>(std::ceil(extent[a] / spacing[a] - 1e-9)));
    f.grid_dims[a] = intervals + 3;
  }
  f.coefficients.assign(f.num_control_points(), Vec3::Zero());
  return f;
}

void BSplineFFD::validate() const {
  if ((grid_dims.array() < 4).any()) throw Error("FFD grid needs >= 4 control points per axis");
  if ((grid_spacing.array() <= 0.0).any()) throw Error("FFD grid spacing must be positive");
  if (coefficients.size() != num_control_points())
    throw Error("FFD coefficient count does not match grid dims");
}

bool BSplineFFD::locate(const Vec3 &p, Index3 &base, Vec3 &u) const {
  constexpr double eps = 1e-9;
  for (int a = 0; a < 3; ++a) {
    const double g = (p[a] - grid_origin[a]) / grid_spacing[a];
    const double upper = grid_dims[a] - 2;
    if (!(g >= 1.0 - eps && g <= upper + eps)) return false;
    double cell = std::floor(g);
    if (cell < 1.0) cell = 1.0;
    if (cell > upper - 1.0) cell = upper - 1.0;
    base[a] = static_cast<int>(cell) - 1;
    u[a] = std::clamp(g - cell, 0.0, 1.0);
  }
  return true;
}

std::optional<Vec3> BSplineFFD::try_displacement(const Vec3 &p) const {
  Index3 base;
  Vec3 u;
  if (!locate(p, base, u)) return std::nullopt;
  const CubicBasis bx = cubic_basis(u.x()), by = cubic_basis(u.y()), bz = cubic_basis(u.z());
  Vec3 d = Vec3::Zero();
  for (int k = 0; k < 4; ++k) {
    for (int j = 0; j < 4; ++j) {
      const double wjk = by.w[j] * bz.w[k];
      const std::size_t row = linear_index(base.x(), base.y() + j, base.z() + k);
      for (int i = 0; i < 4; ++i) d += (bx.w[i] * wjk) * coefficients[row + i];
    }
  }
  return d;
}

Vec3 BSplineFFD::displacement(const Vec3 &p) const {
  auto d = try_displacement(p);
  if (!d) {
    std::ostringstream msg;
    msg << "point (" << p.transpose() << ") lies outside the FFD support";
    throw OutOfSupport(msg.str());
  }
  return *d;
}

double BSplineFFD::max_displacement_norm() const {
  double m = 0.0;
  for (const auto &c : coefficients) m = std::max(m, c.norm());
  return m;
}

Eigen::VectorXd BSplineFFD::params() const {
  Eigen::VectorXd p(3 * coefficients.size());
  for (std::size_t n = 0; n < coefficients.size(); ++n) p.segment<3>(3 * n) = coefficients[n];
  return p;
}

void BSplineFFD::set_params(const Eigen::VectorXd &params) {
  if (params.size() != static_cast<Eigen::Index>(3 * coefficients.size()))
    throw Error("FFD parameter vector has wrong length");
  for (std::size_t n = 0; n < coefficients.size(); ++n) coefficients[n] = params.segment<3>(3 * n);
}

std::vector<std::pair<std::size_t, double>> ffd_param_gradient(const BSplineFFD &f,
                                                               const Vec3 &p) {
  Index3 base;
  Vec3 u;
  if (!f.locate(p, base, u)) {
    std::ostringstream msg;
    msg << "point (" << p.transpose() << ") lies outside the FFD support";
    throw OutOfSupport(msg.str());
  }
  const CubicBasis bx = cubic_basis(u.x()), by = cubic_basis(u.y()), bz = cubic_basis(u.z());
  std::vector<std::pair<std::size_t, double>> out;
  out.reserve(64);
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) {
        const double w = bx.w[i] * by.w[j] * bz.w[k];
        if (w != 0.0)
          out.emplace_back(f.linear_index(base.x() + i, base.y() + j, base.z() + k), w);
      }
  return out;
}

namespace {
  // Cubic B-spline subdivision along one axis: fine node n sits at coarse
  // position (n + 1) / 2, so even n + 1 lands on a coarse node.
  bool subdivide_axis(const std::vector<Vec3> &in, const Index3 &in_dims, int axis, int out_len,
                      std::vector<Vec3> &out, Index3 &out_dims) {
    if (out_len + 1 > 2 * (in_dims[axis] - 1)) return false;
    out_dims = in_dims;
    out_dims[axis] = out_len;
    out.assign(static_cast<std::size_t>(out_dims.prod()), Vec3::Zero());
    const Index3 stride(1, in_dims.x(), in_dims.x() * in_dims.y());
    std::size_t o = 0;
    Index3 idx;
    for (idx.z() = 0; idx.z() < out_dims.z(); ++idx.z())
      for (idx.y() = 0; idx.y() < out_dims.y(); ++idx.y())
        for (idx.x() = 0; idx.x() < out_dims.x(); ++idx.x(), ++o) {
          const int n = idx[axis];
          const int m = (n + 1) / 2;
          Index3 src = idx;
          auto at = [&](int c) {
            src[axis] = c;
            return in[static_cast<std::size_t>(src.dot(stride))];
          };
          out[o] = (n + 1) % 2 == 0 ? Vec3((at(m - 1) + 6.0 * at(m) + at(m + 1)) / 8.0)
                                    : Vec3(0.5 * (at(m) + at(m + 1)));
        }
    return true;
  }

  bool is_dyadic_refinement(const BSplineFFD &coarse, const BSplineFFD &fine, const Geometry &domain) {
    const double tol = 1e-9;
    for (int a = 0; a < 3; ++a) {
      const double s = coarse.grid_spacing[a];
      if (std::abs(fine.grid_spacing[a] - 0.5 * s) > tol * s) return false;
      if (std::abs(coarse.grid_origin[a] - (domain.origin[a] - s)) > tol * s) return false;
    }
    return true;
  }
}  // namespace

BSplineFFD refine_ffd(const BSplineFFD &coarse, const Geometry &domain, const Vec3 &new_spacing) {
  BSplineFFD fine = BSplineFFD::covering(domain, new_spacing);
  if (is_dyadic_refinement(coarse, fine, domain)) {
    std::vector<Vec3> cur = coarse.coefficients, next;
    Index3 dims = coarse.grid_dims, next_dims;
    bool ok = true;
    for (int a = 0; a < 3 && ok; ++a) {
      ok = subdivide_axis(cur, dims, a, fine.grid_dims[a], next, next_dims);
      cur.swap(next);
      dims = next_dims;
    }
    if (ok) {
      fine.coefficients = std::move(cur);
      return fine;
    }
  }
  const Vec3 lo = domain.origin;
  const Vec3 hi = domain.origin + domain.extent();

  // Sample the old field at the new nodes (clamped into the domain), then
  // prefilter each component so the new spline interpolates those samples.
  Geometry lattice;
  lattice.dims = fine.grid_dims;
  lattice.spacing = fine.grid_spacing;
  lattice.origin = fine.grid_origin;
  std::array<Volume, 3> comp{Volume(lattice), Volume(lattice), Volume(lattice)};
  for (int k = 0; k < fine.grid_dims.z(); ++k)
    for (int j = 0; j < fine.grid_dims.y(); ++j)
      for (int i = 0; i < fine.grid_dims.x(); ++i) {
        const Vec3 node = fine.control_point(i, j, k).cwiseMax(lo).cwiseMin(hi);
        const Vec3 d = coarse.try_displacement(node).value_or(Vec3::Zero());
        for (int a = 0; a < 3; ++a) comp[a](i, j, k) = d[a];
      }
  for (int a = 0; a < 3; ++a) {
    const SplineCoefficients c = prefilter(comp[a]);
    for (std::size_t n = 0; n < fine.coefficients.size(); ++n)
      fine.coefficients[n][a] = c.coeffs.data()[n];
  }
  return fine;
}

Vec3 CompositeTransform::apply(const Vec3 &p) const {
  Vec3 q = p;
  if (ffd) q += ffd->try_displacement(p).value_or(Vec3::Zero());
  if (affine) q = affine->apply(q);
  return q;
}

namespace {
  std::string join3(const Vec3 &v) {
    return format_double(v[0]) + " " + format_double(v[1]) + " " + format_double(v[2]);
  }

  void write_text(const std::filesystem::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write transform file " + path.string());
    out << text;
    if (!out) throw IoError("failed writing transform file " + path.string());
  }

  Vec3 read_vec3(std::istream &in, const std::filesystem::path &path, const char *what) {
    Vec3 v;
    if (!(in >> v[0] >> v[1] >> v[2]))
      throw IoError("transform file " + path.string() + ": cannot read " + what);
    return v;
  }
}  // namespace

void write_transform(const AffineTransform &t, const std::filesystem::path &path) {
  std::string text = "affine\n" + join3(t.center) + "\n";
  const Eigen::VectorXd p = t.params();
  for (Eigen::Index n = 0; n < p.size(); ++n) {
    text += format_double(p[n]);
    text += n + 1 < p.size() ? " " : "\n";
  }
  write_text(path, text);
}

void write_transform(const BSplineFFD &t, const std::filesystem::path &path) {
  std::string text = "bspline\n";
  text += std::to_string(t.grid_dims.x()) + " " + std::to_string(t.grid_dims.y()) + " "
          + std::to_string(t.grid_dims.z()) + "\n";
  text += join3(t.grid_origin) + "\n" + join3(t.grid_spacing) + "\n";
  for (const auto &c : t.coefficients) text += join3(c) + "\n";
  write_text(path, text);
}

TransformFile read_transform(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transform file " + path.string());
  std::string kind;
  in >> kind;
  if (kind == "affine") {
    const Vec3 center = read_vec3(in, path, "affine center");
    Eigen::VectorXd p(12);
    for (int n = 0; n < 12; ++n)
      if (!(in >> p[n]))
        throw IoError("transform file " + path.string() + ": expected 12 affine parameters");
    return AffineTransform::from_params(p, center);
  }
  if (kind == "bspline") {
    BSplineFFD f;
    if (!(in >> f.grid_dims[0] >> f.grid_dims[1] >> f.grid_dims[2]))
      throw IoError("transform file " + path.string() + ": cannot read grid dims");
    f.grid_origin = read_vec3(in, path, "grid origin");
    f.grid_spacing = read_vec3(in, path, "grid spacing");
    if ((f.grid_dims.array() < 4).any())
      throw IoError("transform file " + path.string() + ": grid dims must be >= 4");
    f.coefficients.resize(f.num_control_points());
    for (auto &c : f.coefficients) c = read_vec3(in, path, "coefficient triple");
    f.validate();
    return f;
  }
  throw IoError("transform file " + path.string() + ": unknown kind '" + kind
                + "' (expected affine or bspline)");
}

}  // namespace mripet
