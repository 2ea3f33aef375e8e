#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "mripet/pca_init.hpp"
#include "support.hpp"

using namespace mripet;
using testing::ellipsoid_mask;
using testing::make_geometry;
using testing::random_volume;

namespace {

double axis_angle_deg(const Vec3 &a, const Vec3 &b) {
  const double c = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
  return std::acos(c) * 180.0 / M_PI;
}

Mat3 random_rotation(std::mt19937_64 &rng) {
  std::normal_distribution<double> n;
  const Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

}  // namespace

TEST_SUITE("pca_init") {

TEST_CASE("single voxel has its world position as centroid and no spread") {
  Volume v(make_geometry({5, 5, 5}, {0.5, 1.0, 2.0}, {1, 2, 3}));
  v(3, 1, 4) = 2.0;
  const Moments m = intensity_moments(v);
  CHECK((m.centroid - Vec3(2.5, 3.0, 11.0)).norm() < 1e-12);
  CHECK(m.covariance.norm() < 1e-12);
}

TEST_CASE("two equal voxels center between them") {
  Volume v(make_geometry({6, 6, 6}));
  v(1, 2, 3) = 1.0;
  v(5, 0, 1) = 1.0;
  CHECK((intensity_moments(v).centroid - Vec3(3, 1, 2)).norm() < 1e-12);
}

TEST_CASE("moments match a brute-force double loop") {
  const Volume v = random_volume(make_geometry({8, 8, 8}, {0.3, 0.4, 2.0}, {-1, 0, 5}), 17);
  double w = 0.0;
  Vec3 c = Vec3::Zero();
  for (std::size_t n = 0; n < v.size(); ++n) {
    const int i = n % 8, j = (n / 8) % 8, k = n / 64;
    const Vec3 p(-1 + 0.3 * i, 0.4 * j, 5 + 2.0 * k);
    w += v.data()[n];
    c += v.data()[n] * p;
  }
  c /= w;
  Mat3 cov = Mat3::Zero();
  for (std::size_t n = 0; n < v.size(); ++n) {
    const int i = n % 8, j = (n / 8) % 8, k = n / 64;
    const Vec3 r = Vec3(-1 + 0.3 * i, 0.4 * j, 5 + 2.0 * k) - c;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) cov(a, b) += v.data()[n] * r[a] * r[b];
  }
  cov /= w;
  const Moments m = intensity_moments(v);
  CHECK((m.centroid - c).norm() <= 1e-10 * c.norm());
  CHECK((m.covariance - cov).norm() <= 1e-10 * cov.norm());
}

TEST_CASE("moments ignore a global intensity scale") {
  const Volume v = random_volume(make_geometry({7, 6, 5}), 3);
  Volume s = v;
  for (double &x : s.data()) x *= 37.5;
  const Moments a = intensity_moments(v), b = intensity_moments(s);
  CHECK((a.centroid - b.centroid).norm() <= 1e-10 * a.centroid.norm());
  CHECK((a.covariance - b.covariance).norm() <= 1e-10 * a.covariance.norm());
}

TEST_CASE("threshold binarizes the weights") {
  Volume v(make_geometry({4, 1, 1}));
  v(0, 0, 0) = 1.0;
  v(3, 0, 0) = 100.0;
  CHECK(intensity_moments(v).centroid.x() == doctest::Approx(300.0 / 101.0));
  CHECK(intensity_moments(v, 0.5).centroid.x() == doctest::Approx(1.5));
  CHECK_THROWS_AS(intensity_moments(Volume(make_geometry({3, 3, 3}))), Error);
}

TEST_CASE("axis-aligned ellipsoid has identity axes") {
  const Geometry g = make_geometry({40, 40, 40}, {0.5, 0.5, 0.5}, {-10, -10, -10});
  const Volume v = ellipsoid_mask(g, Vec3(0.5, -1.0, 1.5), Vec3(8, 5, 3), Mat3::Identity());
  const PrincipalAxes p = principal_axes(intensity_moments(v));
  CHECK((p.axes - Mat3::Identity()).norm() < 1e-9);
  CHECK(p.eigenvalues[0] > p.eigenvalues[1]);
  CHECK(p.eigenvalues[1] > p.eigenvalues[2]);
}

TEST_CASE("isotropic covariance keeps the coordinate frame") {
  const PrincipalAxes p = principal_axes(Vec3(1, 2, 3), 4.0 * Mat3::Identity());
  CHECK(p.axes == Mat3::Identity());
  CHECK(p.eigenvalues.isApprox(Vec3::Constant(4.0)));
  CHECK(p.centroid == Vec3(1, 2, 3));
}

TEST_CASE("principal axes form a sorted right-handed orthonormal frame") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat3 r = random_rotation(rng);
    const Vec3 ev(u(rng), u(rng), u(rng));
    const Mat3 cov = r * ev.asDiagonal() * r.transpose();
    const PrincipalAxes p = principal_axes(Vec3::Zero(), cov);
    CHECK((p.axes.transpose() * p.axes - Mat3::Identity()).norm() < 1e-10);
    CHECK(p.axes.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.eigenvalues[0] >= p.eigenvalues[1]);
    CHECK(p.eigenvalues[1] >= p.eigenvalues[2]);
    CHECK(p.eigenvalues[2] >= 0.0);
    // Reconstruction holds on the first two axes whatever sign the third took.
    for (int c = 0; c < 2; ++c)
      CHECK((cov * p.axes.col(c) - p.eigenvalues[c] * p.axes.col(c)).norm() < 1e-8 * ev.maxCoeff());
    Vec3 sorted = ev;
    std::sort(sorted.data(), sorted.data() + 3, std::greater<>());
    CHECK((p.eigenvalues - sorted).norm() < 1e-8 * sorted[0]);
    for (int c = 0; c < 2; ++c) {
      Eigen::Index idx;
      p.axes.col(c).cwiseAbs().maxCoeff(&idx);
      CHECK(p.axes(idx, c) > 0.0);
    }
  }
}

TEST_CASE("rotated ellipsoid axes follow the rotation") {
  std::mt19937_64 rng(21);
  const Geometry g = make_geometry({64, 64, 64}, {0.5, 0.5, 0.5}, {-16, -16, -16});
  for (int trial = 0; trial < 3; ++trial) {
    const Mat3 r = random_rotation(rng);
    const Vec3 c(0.7, -0.4, 0.25);
    const Volume v = ellipsoid_mask(g, c, Vec3(12, 8, 5), r, 2);
    const PrincipalAxes p = principal_axes(intensity_moments(v));
    for (int a = 0; a < 3; ++a) CHECK(axis_angle_deg(p.axes.col(a), r.col(a)) < 0.5);
    CHECK((p.centroid - c).norm() < 0.1);
  }
}

TEST_CASE("initial affine of identical frames is the identity") {
  PrincipalAxes p;
  p.centroid = Vec3(3, -2, 7);
  std::mt19937_64 rng(4);
  p.axes = random_rotation(rng);
  const AffineTransform t = initial_affine(p, p);
  CHECK((t.matrix - Mat3::Identity()).norm() < 1e-12);
  CHECK(t.translation.norm() < 1e-12);
}

TEST_CASE("initial affine of a shifted frame is that shift") {
  PrincipalAxes a, b;
  a.centroid = Vec3(1, 2, 3);
  b.centroid = Vec3(4, 0, 3.5);
  const AffineTransform t = initial_affine(a, b);
  CHECK((t.matrix - Mat3::Identity()).norm() < 1e-12);
  CHECK((t.apply(Vec3(10, 10, 10)) - Vec3(13, 8, 10.5)).norm() < 1e-12);
}

TEST_CASE("initial affine maps body points of a rotated ellipsoid pair") {
  const Geometry g = make_geometry({64, 64, 64}, {0.5, 0.5, 0.5}, {-16, -16, -16});
  const Vec3 c(0.3, 0.2, -0.1);
  const Vec3 semi(12, 8, 5);
  std::mt19937_64 rng(33);
  const Mat3 r0 = Eigen::AngleAxisd(0.3, Vec3(0.2, 0.5, 1.0).normalized()).toRotationMatrix();
  const Vec3 shift(1.5, -2.0, 0.5);
  const Volume fixed = ellipsoid_mask(g, c, semi, Mat3::Identity(), 2);
  const Volume moving = ellipsoid_mask(g, c + shift, semi, r0, 2);
  const AffineTransform t = initial_affine(principal_axes(intensity_moments(fixed)),
                                           principal_axes(intensity_moments(moving)));
  for (int i = -2; i <= 2; ++i)
    for (int j = -2; j <= 2; ++j)
      for (int k = -1; k <= 1; ++k) {
        const Vec3 p = c + Vec3(0.3 * i * semi.x(), 0.3 * j * semi.y(), 0.4 * k * semi.z());
        const Vec3 truth = r0 * (p - c) + c + shift;
        CHECK((t.apply(p) - truth).norm() < 0.1);
      }
}

}
