#include "mripet/pca_init.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include <Eigen/Eigenvalues>

namespace mripet {

Moments intensity_moments(const Volume &vol, std::optional<double> threshold) {
  const Index3 &d = vol.dims();
  auto weight = [&](double v) {
    if (threshold) return v > *threshold ? 1.0 : 0.0;
    return v > 0.0 ? v : 0.0;
  };

  // Per-slice partial sums keep the accumulation order fixed.
  double total = 0.0;
  Vec3 first = Vec3::Zero();
  for (int k = 0; k < d.z(); ++k) {
    for (int j = 0; j < d.y(); ++j) {
      for (int i = 0; i < d.x(); ++i) {
        const double w = weight(vol(i, j, k));
        if (w == 0.0) continue;
        total += w;
        first += w * vol.voxel_world(i, j, k);
      }
    }
  }
  if (total <= 0.0)
    throw Error("intensity moments need at least one voxel with positive weight");

  Moments m;
  m.centroid = first / total;
  for (int k = 0; k < d.z(); ++k) {
    for (int j = 0; j < d.y(); ++j) {
      for (int i = 0; i < d.x(); ++i) {
        const double w = weight(vol(i, j, k));
        if (w == 0.0) continue;
        const Vec3 r = vol.voxel_world(i, j, k) - m.centroid;
        m.covariance.noalias() += w * r * r.transpose();
      }
    }
  }
  m.covariance /= total;
  m.covariance = 0.5 * (m.covariance + m.covariance.transpose()).eval();
  return m;
}

PrincipalAxes principal_axes(const Vec3 &centroid, const Mat3 &covariance) {
  PrincipalAxes out;
  out.centroid = centroid;

  const double scale = covariance.cwiseAbs().maxCoeff();
  if (scale == 0.0) return out;  // point mass: any frame will do

  Eigen::SelfAdjointEigenSolver<Mat3> solver(covariance);
  const Vec3 values = solver.eigenvalues();
  const Mat3 vectors = solver.eigenvectors();

  // Fully isotropic spectra keep the coordinate frame.
  const double tie = 1e-9 * std::max(values.cwiseAbs().maxCoeff(), 1e-300);
  if (values.maxCoeff() - values.minCoeff() <= tie) {
    out.eigenvalues = values.cwiseMax(0.0);
    return out;
  }

  auto dominant = [&](int c) {
    Eigen::Index idx;
    vectors.col(c).cwiseAbs().maxCoeff(&idx);
    return static_cast<int>(idx);
  };
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (std::abs(values[a] - values[b]) > tie) return values[a] > values[b];
    return dominant(a) < dominant(b);
  });

  for (int c = 0; c < 3; ++c) {
    Vec3 v = vectors.col(order[c]);
    Eigen::Index idx;
    v.cwiseAbs().maxCoeff(&idx);
    if (v[idx] < 0.0) v = -v;
    out.axes.col(c) = v.normalized();
    out.eigenvalues[c] = std::max(values[order[c]], 0.0);
  }
  out.axes.col(2) = out.axes.col(0).cross(out.axes.col(1)).normalized();
  return out;
}

AffineTransform initial_affine(const PrincipalAxes &fixed, const PrincipalAxes &moving) {
  AffineTransform t;
  t.matrix = moving.axes * fixed.axes.transpose();
  t.center = fixed.centroid;
  t.translation = moving.centroid - fixed.centroid;
  return t;
}

}  // namespace mripet
