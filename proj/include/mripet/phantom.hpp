#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "mripet/pipeline.hpp"
#include "mripet/transform.hpp"
#include "mripet/volume.hpp"

namespace mripet {

/// Synthetic MRI/PET pair description. Defaults follow an abdominal
/// acquisition at half the in-plane matrix: thick MRI slices against thin
/// PET slices.
struct PhantomSpec {
  Index3 mri_dims{128, 128, 7};
  Vec3 mri_spacing{0.27, 0.27, 3.0};
  Index3 pet_dims{88, 88, 24};
  Vec3 pet_spacing{0.39, 0.39, 0.775};

  Vec3 body_semi_axes{11.0, 7.5, 4.5};
  double edge_width = 0.25;  ///< mm, soft boundary of every compartment

  int n_hotspots = 3;
  double hotspot_radius = 1.2;   ///< mm
  double hotspot_ratio = 8.0;    ///< hotspot uptake / body uptake
  double mri_noise = 0.02;       ///< sigma relative to body intensity
  double pet_noise = 0.05;       ///< sigma at body uptake, scales with sqrt(uptake)
  double pet_blur = 0.25;        ///< Gaussian PSF sigma, mm

  /// Fixed (MRI) to moving (PET) world mapping of the anatomy.
  AffineTransform truth_affine;
  /// Maximum displacement of the smooth warp applied before the affine; 0 disables.
  double warp_max_displacement = 0.0;
  Vec3 warp_grid_spacing{7.0, 7.0, 7.0};

  std::uint64_t seed = 1;

  void validate() const;
};

struct GroundTruth {
  AffineTransform affine;
  BSplineFFD warp;  ///< zero coefficients when no warp
  std::vector<Vec3> landmarks;        ///< fixed space
  std::vector<Vec3> landmark_images;  ///< exact moving-space images

  Vec3 map(const Vec3 &fixed_point) const;
  /// Fixed-space preimage of a moving point (affine inverse, then
  /// fixed-point iteration on the warp).
  Vec3 inverse_map(const Vec3 &moving_point) const;
};

struct PhantomPair {
  Volume mri;
  Volume pet;
  GroundTruth truth;
  std::vector<Vec3> hotspot_centers;  ///< fixed space
};

PhantomPair make_pair(const PhantomSpec &spec);

struct MisalignmentRange {
  double max_translation = 10.0;  ///< mm, vector norm
  double max_rotation_deg = 15.0; ///< angle about a random axis
  double min_scale = 0.9;
  double max_scale = 1.1;
};

AffineTransform random_misalignment(std::mt19937_64 &rng, const MisalignmentRange &range);

struct EvaluationReport {
  std::vector<double> tre;  ///< per landmark, mm
  double mean_tre = 0.0;
  double max_tre = 0.0;
  /// Estimated minus true affine parameters, both expressed about the origin.
  Eigen::VectorXd affine_param_delta;
  double seconds = 0.0;
};

EvaluationReport evaluate(const CompositeTransform &estimate, const GroundTruth &truth);
EvaluationReport evaluate(const RegistrationResult &result, const GroundTruth &truth);

/// truth_affine.txt, truth_bspline.txt and landmarks.txt
/// ("x y z X Y Z" per line).
void write_truth(const GroundTruth &truth, const std::filesystem::path &out_dir);

}  // namespace mripet
