#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mripet/interpolation.hpp"
#include "mripet/transform.hpp"
#include "mripet/volume.hpp"

namespace mripet {

class DegenerateOverlap : public Error {
 public:
  using Error::Error;
};

class DegenerateMetric : public Error {
 public:
  using Error::Error;
};

struct MetricConfig {
  int bins = 50;
  /// Fraction of fixed voxels drawn (without replacement) as samples.
  double sample_fraction = 1.0;
  std::uint64_t rng_seed = 20160912;
  /// Minimum fraction of samples that must map inside the moving image.
  double min_overlap_fraction = 0.25;

  void validate() const;
};

/// Parzen-window joint density: fixed intensities deposited with a box
/// kernel, moving intensities with a cubic B-spline kernel over 4 bins.
/// `joint` is row-major [fixed bin][moving bin].
struct JointHistogram {
  int bins = 0;
  std::vector<double> joint;
  std::vector<double> marg_fixed;
  std::vector<double> marg_moving;
  std::size_t n_samples = 0;

  double at(int f, int m) const { return joint[static_cast<std::size_t>(f) * bins + m]; }
  /// Recomputes marginals from `joint`.
  void update_marginals();
};

/// -sum p log p in nats, with 0 log 0 = 0.
double entropy(std::span<const double> p);
double mutual_information(const JointHistogram &h);
double normalized_mutual_information(const JointHistogram &h);

/// Linear intensity-to-bin map over [min, max] into [pad, bins-1-pad],
/// pad = 2.
struct BinMapping {
  static constexpr int kPadding = 2;
  double min = 0.0;
  double width = 1.0;
  int bins = 0;

  BinMapping() = default;
  BinMapping(double lo, double hi, int n_bins);
  double position(double v) const { return (v - min) / width + kPadding; }
  int fixed_bin(double v) const;
};

/// A transform whose fixed-to-moving mapping depends on a parameter vector.
class ParametricTransform {
 public:
  virtual ~ParametricTransform() = default;
  virtual std::size_t num_params() const = 0;
  virtual Eigen::VectorXd params() const = 0;
  virtual void set_params(const Eigen::VectorXd &params) = 0;
  /// Maps a fixed world point; false when the point is outside the domain.
  virtual bool map(const Vec3 &x, Vec3 &y) const = 0;
  /// grad += (dy/dtheta)^T dcost_dy at fixed point x.
  virtual void accumulate_gradient(const Vec3 &x, const Vec3 &dcost_dy,
                                   std::span<double> grad) const = 0;
};

class AffineParametric final : public ParametricTransform {
 public:
  explicit AffineParametric(AffineTransform t) : t_(std::move(t)) { }
  std::size_t num_params() const override { return AffineTransform::kNumParams; }
  Eigen::VectorXd params() const override { return t_.params(); }
  void set_params(const Eigen::VectorXd &params) override {
    t_ = AffineTransform::from_params(params, t_.center);
  }
  bool map(const Vec3 &x, Vec3 &y) const override {
    y = t_.apply(x);
    return true;
  }
  void accumulate_gradient(const Vec3 &x, const Vec3 &dcost_dy,
                           std::span<double> grad) const override;
  const AffineTransform &transform() const { return t_; }

 private:
  AffineTransform t_;
};

class FfdParametric final : public ParametricTransform {
 public:
  explicit FfdParametric(BSplineFFD f) : f_(std::move(f)) { }
  std::size_t num_params() const override { return 3 * f_.coefficients.size(); }
  Eigen::VectorXd params() const override { return f_.params(); }
  void set_params(const Eigen::VectorXd &params) override { f_.set_params(params); }
  bool map(const Vec3 &x, Vec3 &y) const override;
  void accumulate_gradient(const Vec3 &x, const Vec3 &dcost_dy,
                           std::span<double> grad) const override;
  const BSplineFFD &ffd() const { return f_; }

 private:
  BSplineFFD f_;
};

/// Negated normalized mutual information between a fixed volume and a
/// prefiltered moving volume, with analytic parameter gradient. The sample
/// set is drawn once at construction, so repeated evaluations are
/// deterministic. `moving` must outlive the metric.
class NmiMetric {
 public:
  NmiMetric(const Volume &fixed, const SplineCoefficients &moving, const MetricConfig &cfg);

  JointHistogram histogram(const ParametricTransform &t) const;
  /// Returns -NMI.
  double value(const ParametricTransform &t) const;
  /// Returns -NMI and writes d(-NMI)/dtheta into `grad`.
  double value_and_gradient(const ParametricTransform &t, Eigen::VectorXd &grad) const;

  std::size_t num_samples() const { return samples_.size(); }
  const BinMapping &fixed_bins() const { return fixed_map_; }
  const BinMapping &moving_bins() const { return moving_map_; }

 private:
  struct Sample {
    Vec3 world;
    int fixed_bin;
  };
  struct Hit {
    std::uint32_t sample;
    double eta;
    Vec3 gradient;
    bool clamped;
  };

  JointHistogram accumulate(const ParametricTransform &t, bool keep_hits,
                            std::vector<std::vector<Hit>> *hits) const;

  const SplineCoefficients *moving_;
  MetricConfig cfg_;
  BinMapping fixed_map_;
  BinMapping moving_map_;
  std::vector<Sample> samples_;
};

JointHistogram build_histogram(const Volume &fixed, const SplineCoefficients &moving,
                               const ParametricTransform &t, const MetricConfig &cfg);

struct MetricValue {
  double cost = 0.0;
  Eigen::VectorXd gradient;
};

MetricValue metric_and_gradient(const Volume &fixed, const SplineCoefficients &moving,
                                const ParametricTransform &t, const MetricConfig &cfg);

}  // namespace mripet
