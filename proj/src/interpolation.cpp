#include "mripet/interpolation.hpp"

#include <cmath>
#include <vector>

#include "mripet/parallel.hpp"

namespace mripet {

namespace {
  const double kPole = std::sqrt(3.0) - 2.0;

  // Mirror index into [0, n) with period 2n - 2.
  inline int mirror(int k, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    k %= period;
    if (k < 0) k += period;
    return k < n ? k : period - k;
  }

  struct AxisTaps {
    int idx[4];
    double w[4];
    double dw[4];
  };

  // Returns false when q lies outside [0, n - 1].
  inline bool axis_taps(double q, int n, AxisTaps &t) {
    if (n == 1) {
      if (std::abs(q) > 0.5) return false;
      for (int m = 0; m < 4; ++m) {
        t.idx[m] = 0;
        t.w[m] = m == 1 ? 1.0 : 0.0;
        t.dw[m] = 0.0;
      }
      return true;
    }
    if (!(q >= 0.0 && q <= n - 1)) return false;
    double cell = std::floor(q);
    if (cell > n - 2) cell = n - 2;
    const double u = q - cell;
    const CubicBasis b = cubic_basis(u);
    const int c = static_cast<int>(cell);
    for (int m = 0; m < 4; ++m) {
      t.idx[m] = mirror(c - 1 + m, n);
      t.w[m] = b.w[m];
      t.dw[m] = b.dw[m];
    }
    return true;
  }
}  // namespace

void prefilter_line(double *line, std::size_t n, std::ptrdiff_t stride) {
  if (n < 2) return;
  const double z = kPole;
  const double gain = (1.0 - z) * (1.0 - 1.0 / z);
  auto at = [&](std::size_t k) -> double & { return line[static_cast<std::ptrdiff_t>(k) * stride]; };
  for (std::size_t k = 0; k < n; ++k) at(k) *= gain;

  // Causal initialization, exact for the mirror-extended signal.
  const std::size_t horizon = static_cast<std::size_t>(
      std::ceil(std::log(1e-16) / std::log(std::abs(z))));
  double c0;
  if (horizon < n) {
    double zk = z;
    c0 = at(0);
    for (std::size_t k = 1; k < horizon; ++k) {
      c0 += zk * at(k);
      zk *= z;
    }
  } else {
    double zk = z;
    const double iz = 1.0 / z;
    double z2n = std::pow(z, static_cast<double>(n - 1));
    c0 = at(0) + z2n * at(n - 1);
    z2n *= z2n * iz;
    for (std::size_t k = 1; k + 1 < n; ++k) {
      c0 += (zk + z2n) * at(k);
      zk *= z;
      z2n *= iz;
    }
    c0 /= 1.0 - zk * zk;
  }
  at(0) = c0;
  for (std::size_t k = 1; k < n; ++k) at(k) += z * at(k - 1);

  at(n - 1) = (z / (z * z - 1.0)) * (z * at(n - 2) + at(n - 1));
  for (std::size_t k = n - 1; k-- > 0;) at(k) = z * (at(k + 1) - at(k));
}

SplineCoefficients prefilter(const Volume &vol) {
  SplineCoefficients out{vol, vol.min_value(), vol.max_value()};
  const Index3 d = vol.dims();
  double *data = out.coeffs.data().data();
  const std::ptrdiff_t sx = 1, sy = d.x(), sz = static_cast<std::ptrdiff_t>(d.x()) * d.y();

  for (int k = 0; k < d.z(); ++k)
    for (int j = 0; j < d.y(); ++j) prefilter_line(data + j * sy + k * sz, d.x(), sx);
  for (int k = 0; k < d.z(); ++k)
    for (int i = 0; i < d.x(); ++i) prefilter_line(data + i * sx + k * sz, d.y(), sy);
  for (int j = 0; j < d.y(); ++j)
    for (int i = 0; i < d.x(); ++i) prefilter_line(data + i * sx + j * sy, d.z(), sz);
  return out;
}

SplineSample eval(const SplineCoefficients &c, const Vec3 &q, bool with_gradient) {
  SplineSample s;
  const Index3 &d = c.coeffs.dims();
  AxisTaps tx, ty, tz;
  if (!axis_taps(q.x(), d.x(), tx) || !axis_taps(q.y(), d.y(), ty)
      || !axis_taps(q.z(), d.z(), tz))
    return s;
  s.inside = true;

  const double *data = c.coeffs.data().data();
  const std::size_t nx = d.x();
  const std::size_t nxy = nx * d.y();
  double v = 0.0, gx = 0.0, gy = 0.0, gz = 0.0;
  for (int k = 0; k < 4; ++k) {
    double vk = 0.0, gxk = 0.0, gyk = 0.0;
    for (int j = 0; j < 4; ++j) {
      const double *row = data + static_cast<std::size_t>(tz.idx[k]) * nxy
                          + static_cast<std::size_t>(ty.idx[j]) * nx;
      double r = 0.0, rd = 0.0;
      for (int i = 0; i < 4; ++i) {
        const double cv = row[tx.idx[i]];
        r += tx.w[i] * cv;
        rd += tx.dw[i] * cv;
      }
      vk += ty.w[j] * r;
      gxk += ty.w[j] * rd;
      gyk += ty.dw[j] * r;
    }
    v += tz.w[k] * vk;
    if (with_gradient) {
      gx += tz.w[k] * gxk;
      gy += tz.w[k] * gyk;
      gz += tz.dw[k] * vk;
    }
  }
  s.value = v;
  if (with_gradient) s.gradient = Vec3(gx, gy, gz).cwiseQuotient(c.coeffs.spacing());
  return s;
}

double eval_linear(const Volume &vol, const Vec3 &q) {
  const Index3 &d = vol.dims();
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 1) {
      if (std::abs(q[a]) > 0.5) return 0.0;
      i0[a] = 0;
      f[a] = 0.0;
      continue;
    }
    if (!(q[a] >= 0.0 && q[a] <= d[a] - 1)) return 0.0;
    i0[a] = std::min(static_cast<int>(std::floor(q[a])), d[a] - 2);
    f[a] = q[a] - i0[a];
  }
  double v = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? f[2] : 1.0 - f[2];
    if (wz == 0.0) continue;
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? f[1] : 1.0 - f[1];
      if (wy == 0.0) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? f[0] : 1.0 - f[0];
        if (wx == 0.0) continue;
        v += wx * wy * wz * vol(i0[0] + dx, i0[1] + dy, i0[2] + dz);
      }
    }
  }
  return v;
}

Volume resample(const SplineCoefficients &moving, const CompositeTransform &t,
                const Geometry &fixed_geometry) {
  if (t.affine && !t.affine->invertible())
    throw Error("cannot resample through a singular affine transform");
  Volume out(fixed_geometry);
  const Index3 d = fixed_geometry.dims;
  const std::size_t n_chunks = static_cast<std::size_t>(d.z());
  parallel_chunks(n_chunks, [&](std::size_t kk) {
    const int k = static_cast<int>(kk);
    for (int j = 0; j < d.y(); ++j)
      for (int i = 0; i < d.x(); ++i) {
        const Vec3 y = t.apply(fixed_geometry.index_to_world(Vec3(i, j, k)));
        out(i, j, k) = eval(moving, moving.geometry().world_to_index(y), false).value;
      }
  });
  return out;
}

Volume resample(const Volume &moving, const CompositeTransform &t,
                const Geometry &fixed_geometry) {
  return resample(prefilter(moving), t, fixed_geometry);
}

}  // namespace mripet
