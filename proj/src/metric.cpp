#include "mripet/metric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "mripet/parallel.hpp"

namespace mripet {

namespace {
  constexpr std::size_t kChunks = 32;
}

void MetricConfig::validate() const {
  if (bins < 6)
    throw Error("metric bins must be >= 6 (two padding bins per end plus range)");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0))
    throw Error("metric sample_fraction must be in (0, 1]");
  if (!(min_overlap_fraction >= 0.0 && min_overlap_fraction <= 1.0))
    throw Error("metric min_overlap_fraction must be in [0, 1]");
}

void JointHistogram::update_marginals() {
  marg_fixed.assign(bins, 0.0);
  marg_moving.assign(bins, 0.0);
  for (int f = 0; f < bins; ++f)
    for (int m = 0; m < bins; ++m) {
      const double p = at(f, m);
      marg_fixed[f] += p;
      marg_moving[m] += p;
    }
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double mutual_information(const JointHistogram &h) {
  return entropy(h.marg_fixed) + entropy(h.marg_moving) - entropy(h.joint);
}

double normalized_mutual_information(const JointHistogram &h) {
  const double hxy = entropy(h.joint);
  if (hxy <= 0.0)
    throw DegenerateMetric("joint entropy is zero (both images constant); NMI undefined");
  return (entropy(h.marg_fixed) + entropy(h.marg_moving)) / hxy;
}

BinMapping::BinMapping(double lo, double hi, int n_bins) : min(lo), bins(n_bins) {
  const double range = hi - lo;
  width = range > 0.0 ? range / (n_bins - 2 * kPadding - 1) : 1.0;
}

int BinMapping::fixed_bin(double v) const {
  const int b = static_cast<int>(std::floor(position(v)));
  return std::clamp(b, kPadding, bins - 1 - kPadding);
}

void AffineParametric::accumulate_gradient(const Vec3 &x, const Vec3 &dcost_dy,
                                           std::span<double> grad) const {
  const Vec3 r = x - t_.center;
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) grad[row * 3 + col] += dcost_dy[row] * r[col];
    grad[9 + row] += dcost_dy[row];
  }
}

bool FfdParametric::map(const Vec3 &x, Vec3 &y) const {
  auto d = f_.try_displacement(x);
  if (!d) return false;
  y = x + *d;
  return true;
}

void FfdParametric::accumulate_gradient(const Vec3 &x, const Vec3 &dcost_dy,
                                        std::span<double> grad) const {
  Index3 base;
  Vec3 u;
  if (!f_.locate(x, base, u)) return;
  const CubicBasis bx = cubic_basis(u.x()), by = cubic_basis(u.y()), bz = cubic_basis(u.z());
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j) {
      const double wjk = by.w[j] * bz.w[k];
      const std::size_t row = f_.linear_index(base.x(), base.y() + j, base.z() + k);
      for (int i = 0; i < 4; ++i) {
        const double w = bx.w[i] * wjk;
        double *g = grad.data() + 3 * (row + i);
        g[0] += w * dcost_dy[0];
        g[1] += w * dcost_dy[1];
        g[2] += w * dcost_dy[2];
      }
    }
}

NmiMetric::NmiMetric(const Volume &fixed, const SplineCoefficients &moving,
                     const MetricConfig &cfg)
    : moving_(&moving), cfg_(cfg) {
  cfg_.validate();
  fixed_map_ = BinMapping(fixed.min_value(), fixed.max_value(), cfg_.bins);
  moving_map_ = BinMapping(moving.data_min, moving.data_max, cfg_.bins);

  const std::size_t n = fixed.size();
  std::vector<std::uint32_t> picked;
  if (cfg_.sample_fraction >= 1.0) {
    picked.resize(n);
    std::iota(picked.begin(), picked.end(), 0u);
  } else {
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg_.sample_fraction * static_cast<double>(n))));
    std::vector<std::uint32_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    std::mt19937_64 rng(cfg_.rng_seed);
    std::sample(all.begin(), all.end(), std::back_inserter(picked), count, rng);
  }

  const Index3 d = fixed.dims();
  samples_.reserve(picked.size());
  for (std::uint32_t lin : picked) {
    const int i = static_cast<int>(lin % d.x());
    const int j = static_cast<int>((lin / d.x()) % d.y());
    const int k = static_cast<int>(lin / (static_cast<std::size_t>(d.x()) * d.y()));
    samples_.push_back({fixed.voxel_world(i, j, k), fixed_map_.fixed_bin(fixed.data()[lin])});
  }
}

JointHistogram NmiMetric::accumulate(const ParametricTransform &t, bool keep_hits,
                                     std::vector<std::vector<Hit>> *hits) const {
  const int bins = cfg_.bins;
  const std::size_t cells = static_cast<std::size_t>(bins) * bins;
  std::vector<std::vector<double>> partial(kChunks);
  std::vector<std::size_t> counts(kChunks, 0);
  if (keep_hits) hits->assign(kChunks, {});

  const double eta_lo = 1.0;
  const double eta_hi = bins - 2 - 1e-9;
  const Geometry &mg = moving_->geometry();

  parallel_chunks(kChunks, [&](std::size_t c) {
    auto [begin, end] = chunk_range(samples_.size(), kChunks, c);
    auto &joint = partial[c];
    joint.assign(cells, 0.0);
    std::vector<Hit> *out = keep_hits ? &(*hits)[c] : nullptr;
    if (out) out->reserve(end - begin);
    for (std::size_t s = begin; s < end; ++s) {
      const Sample &smp = samples_[s];
      Vec3 y;
      if (!t.map(smp.world, y)) continue;
      const SplineSample val = eval(*moving_, mg.world_to_index(y), keep_hits);
      if (!val.inside) continue;
      double eta = moving_map_.position(val.value);
      bool clamped = false;
      if (eta < eta_lo) {
        eta = eta_lo;
        clamped = true;
      } else if (eta > eta_hi) {
        eta = eta_hi;
        clamped = true;
      }
      const double base = std::floor(eta);
      const CubicBasis b = cubic_basis(eta - base);
      double *row = joint.data() + static_cast<std::size_t>(smp.fixed_bin) * bins
                    + static_cast<int>(base) - 1;
      for (int m = 0; m < 4; ++m) row[m] += b.w[m];
      ++counts[c];
      if (out) out->push_back({static_cast<std::uint32_t>(s), eta, val.gradient, clamped});
    }
  });

  JointHistogram h;
  h.bins = bins;
  h.joint.assign(cells, 0.0);
  for (std::size_t c = 0; c < kChunks; ++c) {
    h.n_samples += counts[c];
    for (std::size_t n = 0; n < cells; ++n) h.joint[n] += partial[c][n];
  }
  const double need = cfg_.min_overlap_fraction * static_cast<double>(samples_.size());
  if (h.n_samples == 0 || static_cast<double>(h.n_samples) < need)
    throw DegenerateOverlap("only " + std::to_string(h.n_samples) + " of "
                            + std::to_string(samples_.size())
                            + " samples map inside the moving image (minimum overlap fraction "
                            + std::to_string(cfg_.min_overlap_fraction) + ")");
  const double inv = 1.0 / static_cast<double>(h.n_samples);
  for (double &v : h.joint) v *= inv;
  h.update_marginals();
  return h;
}

JointHistogram NmiMetric::histogram(const ParametricTransform &t) const {
  return accumulate(t, false, nullptr);
}

double NmiMetric::value(const ParametricTransform &t) const {
  return -normalized_mutual_information(histogram(t));
}

double NmiMetric::value_and_gradient(const ParametricTransform &t, Eigen::VectorXd &grad) const {
  std::vector<std::vector<Hit>> hits;
  const JointHistogram h = accumulate(t, true, &hits);
  const int bins = h.bins;

  const double hx = entropy(h.marg_fixed);
  const double hy = entropy(h.marg_moving);
  const double hxy = entropy(h.joint);
  if (hxy <= 0.0)
    throw DegenerateMetric("joint entropy is zero (both images constant); NMI undefined");
  const double nmi = (hx + hy) / hxy;

  // d(-NMI)/dP_fm; only cells with mass can have a nonzero dP.
  std::vector<double> dcost_dp(h.joint.size(), 0.0);
  for (int f = 0; f < bins; ++f) {
    if (h.marg_fixed[f] <= 0.0) continue;
    const double dhx = -(std::log(h.marg_fixed[f]) + 1.0);
    for (int m = 0; m < bins; ++m) {
      const double p = h.at(f, m);
      if (p <= 0.0) continue;
      const double dhy = -(std::log(h.marg_moving[m]) + 1.0);
      const double dhxy = -(std::log(p) + 1.0);
      dcost_dp[static_cast<std::size_t>(f) * bins + m] = -((dhx + dhy) - nmi * dhxy) / hxy;
    }
  }

  const std::size_t n_params = t.num_params();
  const double scale = 1.0 / (static_cast<double>(h.n_samples) * moving_map_.width);
  std::vector<std::vector<double>> partial(kChunks);
  parallel_chunks(kChunks, [&](std::size_t c) {
    auto &g = partial[c];
    g.assign(n_params, 0.0);
    for (const Hit &hit : hits[c]) {
      if (hit.clamped) continue;
      const Sample &smp = samples_[hit.sample];
      const double base = std::floor(hit.eta);
      const CubicBasis b = cubic_basis(hit.eta - base);
      const double *row = dcost_dp.data() + static_cast<std::size_t>(smp.fixed_bin) * bins
                          + static_cast<int>(base) - 1;
      double dcost_deta = 0.0;
      for (int m = 0; m < 4; ++m) dcost_deta += row[m] * b.dw[m];
      if (dcost_deta == 0.0) continue;
      t.accumulate_gradient(smp.world, (dcost_deta * scale) * hit.gradient, g);
    }
  });

  grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params));
  for (std::size_t c = 0; c < kChunks; ++c)
    for (std::size_t n = 0; n < n_params; ++n) grad[static_cast<Eigen::Index>(n)] += partial[c][n];
  return -nmi;
}

JointHistogram build_histogram(const Volume &fixed, const SplineCoefficients &moving,
                               const ParametricTransform &t, const MetricConfig &cfg) {
  return NmiMetric(fixed, moving, cfg).histogram(t);
}

MetricValue metric_and_gradient(const Volume &fixed, const SplineCoefficients &moving,
                                const ParametricTransform &t, const MetricConfig &cfg) {
  MetricValue out;
  out.cost = NmiMetric(fixed, moving, cfg).value_and_gradient(t, out.gradient);
  return out;
}

}  // namespace mripet
