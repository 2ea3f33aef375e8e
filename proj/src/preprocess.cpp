#include "mripet/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace mripet {

void SigmoidParams::validate() const {
  if (alpha == 0.0 || !std::isfinite(alpha))
    throw Error("sigmoid alpha must be finite and nonzero");
  if (!(out_max > out_min)) throw Error("sigmoid out_max must exceed out_min");
}

double sigmoid(double intensity, const SigmoidParams &p) {
  return (p.out_max - p.out_min) / (1.0 + std::exp(-(intensity - p.beta) / p.alpha))
         + p.out_min;
}

Volume sigmoid_transform(const Volume &vol, const SigmoidParams &p) {
  p.validate();
  Volume out(vol.geometry());
  auto src = vol.data();
  auto dst = out.data();
  for (std::size_t n = 0; n < src.size(); ++n) dst[n] = sigmoid(src[n], p);
  return out;
}

double sorted_percentile(const std::vector<double> &sorted, double q) {
  if (sorted.empty()) throw Error("percentile of an empty set");
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

SigmoidParams auto_sigmoid_params(const Volume &vol, double low_pct, double high_pct) {
  if (!(low_pct >= 0.0 && low_pct < high_pct && high_pct <= 1.0))
    throw Error("sigmoid percentiles need 0 <= low < high <= 1");
  std::vector<double> nonzero;
  nonzero.reserve(vol.size());
  for (double v : vol.data())
    if (v != 0.0) nonzero.push_back(v);
  if (nonzero.empty()) throw Error("cannot derive sigmoid parameters from an all-zero volume");
  std::sort(nonzero.begin(), nonzero.end());

  const double vmax = vol.max_value();
  const double vmin = vol.min_value();
  double range = vmax - vmin;
  if (range <= 0.0) range = std::max(std::abs(vmax), 1.0);

  SigmoidParams p;
  p.beta = sorted_percentile(nonzero, 0.5 * (low_pct + high_pct));
  p.alpha = (sorted_percentile(nonzero, high_pct) - sorted_percentile(nonzero, low_pct)) / 6.0;
  p.alpha = std::max(p.alpha, 1e-9 * range);
  p.out_min = 0.0;
  p.out_max = vmax > 0.0 ? vmax : 1.0;
  return p;
}

Volume resample_slices(const Volume &vol, double z_spacing) {
  const Geometry &g = vol.geometry();
  const double s_in = g.spacing.z();
  if (z_spacing < s_in) throw Error("slab resampling can only thicken slices");
  const int n_in = g.dims.z();
  const double start = g.origin.z() - 0.5 * s_in;  // lower edge of slice 0
  const int n_out = std::max(1, static_cast<int>(std::floor(n_in * s_in / z_spacing + 1e-9)));

  Geometry out_geom = g;
  out_geom.dims.z() = n_out;
  out_geom.spacing.z() = z_spacing;
  out_geom.origin.z() = start + 0.5 * z_spacing;
  Volume out(out_geom);

  const std::size_t plane = static_cast<std::size_t>(g.dims.x()) * g.dims.y();
  for (int ko = 0; ko < n_out; ++ko) {
    const double lo = start + ko * z_spacing;
    const double hi = std::min(lo + z_spacing, start + n_in * s_in);
    double total = 0.0;
    for (int ki = 0; ki < n_in; ++ki) {
      const double a = std::max(lo, start + ki * s_in);
      const double b = std::min(hi, start + (ki + 1) * s_in);
      if (b <= a) continue;
      const double w = b - a;
      total += w;
      auto src = vol.data().subspan(plane * ki, plane);
      auto dst = out.data().subspan(plane * ko, plane);
      for (std::size_t n = 0; n < plane; ++n) dst[n] += w * src[n];
    }
    auto dst = out.data().subspan(plane * ko, plane);
    for (double &v : dst) v /= total;
  }
  return out;
}

std::pair<Volume, Volume> harmonize_slices(const Volume &a, const Volume &b) {
  const double za = a.spacing().z();
  const double zb = b.spacing().z();
  if (std::abs(za - zb) <= 1e-9 * std::max(za, zb)) return {a, b};
  if (za < zb) return {resample_slices(a, zb), b};
  return {a, resample_slices(b, za)};
}

}  // namespace mripet
