#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mripet/metric.hpp"
#include "mripet/optimize.hpp"
#include "mripet/pca_init.hpp"
#include "mripet/preprocess.hpp"
#include "mripet/interpolation.hpp"
#include "mripet/transform.hpp"
#include "mripet/volume.hpp"

namespace mripet {

struct PyramidLevel {
  Index3 shrink{1, 1, 1};
  Vec3 sigma = Vec3::Zero();  ///< Gaussian sigma in input voxels
};

/// Coarse-to-fine levels; the last one must be full resolution.
struct PyramidSchedule {
  std::vector<PyramidLevel> levels;

  /// shrink (4,4,1), (2,2,1), (1,1,1); sigma = shrink / 2 on shrunk axes.
  static PyramidSchedule standard();
  /// One level per factor, applied in-plane only.
  static PyramidSchedule inplane(const std::vector<int> &factors);
  void validate() const;
};

/// Separable Gaussian, truncated at 4 sigma, edge-replicated borders.
Volume gaussian_smooth(const Volume &vol, const Vec3 &sigma_voxels);

std::vector<Volume> build_pyramid(const Volume &vol, const PyramidSchedule &schedule);

enum class SigmoidMode { Auto, Manual, Off };

struct SigmoidConfig {
  SigmoidMode mode = SigmoidMode::Auto;
  double low_pct = 0.02;
  double high_pct = 0.50;
  SigmoidParams manual;
};

struct GlobalConfig {
  PyramidSchedule schedule = PyramidSchedule::standard();
  MetricConfig metric;
  double coarse_sample_fraction = 1.0;
  double fine_sample_fraction = 0.2;
  SigmoidConfig sigmoid;
  std::optional<double> pca_threshold;
  /// Step lengths in mm of point displacement; the max step halves per level.
  double max_step = 1.0;
  double min_step = 0.01;
  double relaxation = 0.8;
  int max_iters = 200;
};

struct LocalConfig {
  PyramidSchedule schedule = PyramidSchedule::standard();
  MetricConfig metric;
  double coarse_sample_fraction = 1.0;
  double fine_sample_fraction = 0.2;
  /// Control-point spacing of the finest level (mm); default extent / 8.
  std::optional<Vec3> grid_spacing;
  /// Coefficient bounds are +- bound_factor * grid spacing.
  double bound_factor = 2.0;
  /// Margin of the intermediate moving grid around the MRI domain, as a
  /// fraction of its extent. Samples pushed past the MRI edge then land on
  /// background instead of dropping out of the metric.
  double pad_fraction = 0.25;
  int memory = 5;
  int max_iters = 40;
  double grad_tol = 1e-7;
  double cost_tol = 1e-6;
};

enum class FuseMode { Checkerboard, Alpha };

FuseMode parse_fuse_mode(const std::string &text);

struct RegistrationConfig {
  GlobalConfig global;
  LocalConfig local;
  bool global_only = false;
  FuseMode fuse_mode = FuseMode::Checkerboard;
};

struct StageReport {
  std::string stage;
  int level = 0;
  OptReport report;
  double seconds = 0.0;
};

struct GlobalResult {
  AffineTransform initial;
  AffineTransform affine;
  PrincipalAxes fixed_axes;
  PrincipalAxes moving_axes;
  std::optional<SigmoidParams> sigmoid;
  std::vector<StageReport> reports;

  int total_iterations() const;
};

struct LocalResult {
  BSplineFFD ffd;
  std::vector<StageReport> reports;
};

struct RegistrationResult {
  AffineTransform affine;
  AffineTransform initial_affine;
  BSplineFFD ffd;
  Volume registered_pet;
  Volume fused;
  std::vector<StageReport> reports;
  double global_seconds = 0.0;
  double local_seconds = 0.0;
  double total_seconds = 0.0;

  CompositeTransform transform() const { return {affine, ffd}; }
};

/// Default finest FFD control spacing: fixed extent / 8 per axis, but never
/// finer than two voxels.
Vec3 default_grid_spacing(const Geometry &fixed);

/// Like resample, but each output slice is the mean of the moving image over
/// the whole slab of the target slice, sampled at least as finely as
/// `moving_z_spacing`. Matches how a thick-slice acquisition integrates.
Volume resample_slab_average(const SplineCoefficients &moving, const CompositeTransform &t,
                             const Geometry &target, double moving_z_spacing);

/// `g` grown on every side by `fraction` of its extent, in whole voxels.
Geometry padded_geometry(const Geometry &g, double fraction);

/// Slice harmonization, sigmoid remap of the PET, PCA initialization and a
/// multi-resolution regular-step descent on -NMI over the 12 affine
/// parameters. The remapped PET is only used inside this stage.
GlobalResult register_global(const Volume &mri, const Volume &pet, const GlobalConfig &cfg);

/// Multi-resolution bounded L-BFGS on -NMI over FFD coefficients. `moving`
/// is the PET already resampled by the global affine into MRI world space,
/// on a grid covering the MRI domain (usually padded_geometry of it).
LocalResult register_local(const Volume &mri, const Volume &moving, const LocalConfig &cfg);

RegistrationResult register_full(const Volume &mri, const Volume &pet,
                                 const std::optional<BoundingBox> &voi_mri,
                                 const std::optional<BoundingBox> &voi_pet,
                                 const RegistrationConfig &cfg);

/// Checkerboard (8-voxel tiles, tile (0,0,0) from the MRI) or 50/50 blend of
/// both volumes after normalizing each to [0, 1].
Volume fuse(const Volume &mri, const Volume &registered_pet, FuseMode mode);

Volume normalize_unit(const Volume &vol);

/// Writes registered_pet.mhd, affine.txt, bspline.txt, fused.mhd and
/// report.jsonl into `out_dir`.
void write_outputs(const RegistrationResult &result, const std::filesystem::path &out_dir);

}  // namespace mripet
