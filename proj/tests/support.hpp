#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <unistd.h>

#include "mripet/volume.hpp"

namespace testing {

using mripet::Geometry;
using mripet::Index3;
using mripet::Vec3;
using mripet::Volume;

inline Geometry make_geometry(Index3 dims, Vec3 spacing = Vec3::Ones(), Vec3 origin = Vec3::Zero()) {
  Geometry g;
  g.dims = dims;
  g.spacing = spacing;
  g.origin = origin;
  return g;
}

inline Volume random_volume(const Geometry &g, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Volume v(g);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double &x : v.data()) x = u(rng);
  return v;
}

/// Sum of a few anisotropic Gaussian blobs placed around the center of
/// `frame` and sampled on `g`. Smooth enough that spline interpolation and
/// finite differences agree.
inline Volume smooth_blobs(const Geometry &frame, const Geometry &g, std::uint64_t seed,
                           int n_blobs = 4) {
  Volume v(g);
  std::mt19937_64 rng(seed);
  const Vec3 center = frame.origin + 0.5 * frame.extent();
  const Vec3 half = 0.5 * frame.extent();
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::uniform_real_distribution<double> w(0.12, 0.25);
  std::uniform_real_distribution<double> a(0.5, 1.5);
  struct Blob {
    Vec3 c, s;
    double amp;
  };
  std::vector<Blob> blobs;
  for (int b = 0; b < n_blobs; ++b) {
    Vec3 c = center + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(half);
    Vec3 s = Vec3(w(rng), w(rng), w(rng)).cwiseProduct(half);
    blobs.push_back({c, s, a(rng)});
  }
  for (int k = 0; k < g.dims.z(); ++k)
    for (int j = 0; j < g.dims.y(); ++j)
      for (int i = 0; i < g.dims.x(); ++i) {
        const Vec3 p = v.voxel_world(i, j, k);
        double sum = 0.0;
        for (const auto &bl : blobs)
          sum += bl.amp * std::exp(-0.5 * (p - bl.c).cwiseQuotient(bl.s).squaredNorm());
        v(i, j, k) = sum;
      }
  return v;
}

inline Volume smooth_blobs(const Geometry &g, std::uint64_t seed, int n_blobs = 4) {
  return smooth_blobs(g, g, seed, n_blobs);
}

/// `g` grown by `pad` voxels on every side.
inline Geometry padded(const Geometry &g, int pad) {
  Geometry out = g;
  out.dims = g.dims + Index3::Constant(2 * pad);
  out.origin = g.origin - pad * g.spacing;
  return out;
}

/// Voxelized solid ellipsoid with unit intensity: semi-axes along the
/// columns of `rot`.
inline Volume ellipsoid_mask(const Geometry &g, const Vec3 &center, const Vec3 &semi,
                             const Eigen::Matrix3d &rot, int supersample = 1) {
  Volume v(g);
  const int s = supersample;
  for (int k = 0; k < g.dims.z(); ++k)
    for (int j = 0; j < g.dims.y(); ++j)
      for (int i = 0; i < g.dims.x(); ++i) {
        int inside = 0;
        for (int c = 0; c < s; ++c)
          for (int b = 0; b < s; ++b)
            for (int a = 0; a < s; ++a) {
              const Vec3 off((a + 0.5) / s - 0.5, (b + 0.5) / s - 0.5, (c + 0.5) / s - 0.5);
              const Vec3 p = g.index_to_world(Vec3(i, j, k) + off);
              const Vec3 q = rot.transpose() * (p - center);
              if (q.cwiseQuotient(semi).squaredNorm() <= 1.0) ++inside;
            }
        v(i, j, k) = static_cast<double>(inside) / (s * s * s);
      }
  return v;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path()
            / ("mripet_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
