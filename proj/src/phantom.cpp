#include "mripet/phantom.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/Geometry>

#include "mripet/parallel.hpp"

namespace mripet {

namespace {
  struct Ellipsoid {
    Vec3 center;
    Vec3 semi;

    // Smooth occupancy in [0, 1], 0.5 on the surface.
    double membership(const Vec3 &x, double edge) const {
      const Vec3 r = x - center;
      const double rho = r.cwiseQuotient(semi).norm();
      if (rho < 1e-12) return 1.0;
      const double dist = r.norm() * (1.0 - 1.0 / rho);
      return 0.5 * (1.0 - std::tanh(dist / edge));
    }
  };

  struct Anatomy {
    Ellipsoid body;
    std::vector<Ellipsoid> compartments;
    std::vector<double> mri_levels;
    std::vector<double> pet_levels;
    std::vector<Ellipsoid> hotspots;
    double edge = 0.25;
    double hotspot_level = 8.0;

    static constexpr double kMriBody = 100.0;
    static constexpr double kPetBody = 1.0;

    double mri(const Vec3 &x) const {
      const double inside = body.membership(x, edge);
      if (inside < 1e-12) return 0.0;
      double v = kMriBody;
      for (std::size_t c = 0; c < compartments.size(); ++c)
        v += compartments[c].membership(x, edge) * (mri_levels[c] - v);
      return inside * v;
    }

    double pet(const Vec3 &x) const {
      const double inside = body.membership(x, edge);
      if (inside < 1e-12) return 0.0;
      double v = kPetBody;
      for (std::size_t c = 0; c < compartments.size(); ++c)
        v += compartments[c].membership(x, edge) * (pet_levels[c] - v);
      for (const auto &h : hotspots) v += h.membership(x, edge) * (hotspot_level - v);
      return inside * v;
    }
  };

  Anatomy build_anatomy(const PhantomSpec &spec, std::mt19937_64 &rng) {
    const Vec3 &s = spec.body_semi_axes;
    Anatomy a;
    a.edge = spec.edge_width;
    a.hotspot_level = spec.hotspot_ratio * Anatomy::kPetBody;
    a.body = {Vec3::Zero(), s};
    a.compartments = {
      {Vec3(-0.45 * s.x(), 0.15 * s.y(), 0.0), Vec3(0.30 * s.x(), 0.35 * s.y(), 0.55 * s.z())},
      {Vec3(0.40 * s.x(), -0.30 * s.y(), 0.10 * s.z()), Vec3(0.25 * s.x(), 0.30 * s.y(), 0.45 * s.z())},
      {Vec3(0.35 * s.x(), 0.40 * s.y(), -0.15 * s.z()), Vec3(0.18 * s.x(), 0.20 * s.y(), 0.35 * s.z())},
    };
    a.mri_levels = {40.0, 170.0, 230.0};
    a.pet_levels = {0.45, 1.7, 0.75};

    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const Vec3 room = s - Vec3::Constant(spec.hotspot_radius + 2.0 * spec.edge_width);
    if ((room.array() <= 0.0).any())
      throw Error("phantom hotspots of radius " + std::to_string(spec.hotspot_radius)
                  + " mm do not fit inside the body");
    for (int h = 0; h < spec.n_hotspots; ++h) {
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        const Vec3 c(unit(rng) * room.x(), unit(rng) * room.y(), unit(rng) * room.z());
        if (c.cwiseQuotient(room).norm() > 1.0) continue;
        bool overlaps = false;
        for (const auto &o : a.hotspots)
          overlaps |= (o.center - c).norm() < 2.5 * spec.hotspot_radius;
        if (overlaps) continue;
        a.hotspots.push_back({c, Vec3::Constant(spec.hotspot_radius)});
        placed = true;
      }
      if (!placed) throw Error("could not place phantom hotspot " + std::to_string(h));
    }
    return a;
  }

  constexpr double kPetFloor = 1e-3;

  Geometry centered_geometry(const Index3 &dims, const Vec3 &spacing, const Vec3 &center) {
    Geometry g;
    g.dims = dims;
    g.spacing = spacing;
    g.origin = center - 0.5 * (dims.cast<double>() - Vec3::Ones()).cwiseProduct(spacing);
    g.validate();
    return g;
  }

  BSplineFFD random_warp(const PhantomSpec &spec, const Geometry &mri, std::mt19937_64 &rng) {
    // Cover a padded domain so every PET voxel preimage has a defined warp.
    Geometry padded = mri;
    const Vec3 pad = 0.25 * mri.extent() + spec.warp_grid_spacing;
    padded.origin -= pad;
    padded.dims = ((mri.extent() + 2.0 * pad).cwiseQuotient(mri.spacing))
                      .array()
                      .ceil()
                      .cast<int>()
                      .matrix()
                  + Index3::Ones();
    BSplineFFD w = BSplineFFD::covering(padded, spec.warp_grid_spacing);
    if (spec.warp_max_displacement <= 0.0) return w;

    // In-plane displacements only: the thick MRI slices cannot resolve z motion.
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto &c : w.coefficients) c = Vec3(normal(rng), normal(rng), 0.0);

    // The stated maximum applies to the anatomy, not the empty corners.
    double peak = 0.0;
    for (int k = 0; k < mri.dims.z(); ++k)
      for (int j = 0; j < mri.dims.y(); ++j)
        for (int i = 0; i < mri.dims.x(); ++i) {
          const Vec3 p = mri.index_to_world(Vec3(i, j, k));
          if (p.cwiseQuotient(spec.body_semi_axes).norm() > 1.0) continue;
          peak = std::max(peak, w.displacement(p).norm());
        }
    if (!(peak > 0.0)) throw Error("phantom body does not intersect the MRI grid");
    const double scale = spec.warp_max_displacement / peak;
    for (auto &c : w.coefficients) c *= scale;
    return w;
  }
}  // namespace

void PhantomSpec::validate() const {
  if ((mri_dims.array() < 1).any() || (pet_dims.array() < 1).any())
    throw Error("phantom dims must be >= 1");
  if ((mri_spacing.array() <= 0.0).any() || (pet_spacing.array() <= 0.0).any())
    throw Error("phantom spacings must be positive");
  if ((body_semi_axes.array() <= 0.0).any()) throw Error("phantom body semi-axes must be positive");
  if (!(hotspot_ratio > 1.0)) throw Error("phantom hotspot ratio must exceed 1");
  if (n_hotspots < 0 || hotspot_radius <= 0.0) throw Error("invalid phantom hotspot settings");
  if (mri_noise < 0.0 || pet_noise < 0.0 || pet_blur < 0.0 || edge_width <= 0.0)
    throw Error("phantom noise, blur and edge width must be nonnegative");
  if (!truth_affine.invertible()) throw Error("phantom truth affine must be invertible");
}

Vec3 GroundTruth::map(const Vec3 &x) const {
  return affine.apply(x + warp.try_displacement(x).value_or(Vec3::Zero()));
}

Vec3 GroundTruth::inverse_map(const Vec3 &y) const {
  const Vec3 z = affine.inverse().apply(y);
  Vec3 x = z;
  for (int it = 0; it < 100; ++it) {
    const Vec3 next = z - warp.try_displacement(x).value_or(Vec3::Zero());
    const double change = (next - x).norm();
    x = next;
    if (change < 1e-12) break;
  }
  return x;
}

PhantomPair make_pair(const PhantomSpec &spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const Anatomy anatomy = build_anatomy(spec, rng);

  PhantomPair pair;
  const Geometry mri_geom = centered_geometry(spec.mri_dims, spec.mri_spacing, Vec3::Zero());
  pair.truth.affine = spec.truth_affine;
  pair.truth.warp = random_warp(spec, mri_geom, rng);
  const Geometry pet_geom =
      centered_geometry(spec.pet_dims, spec.pet_spacing, pair.truth.map(Vec3::Zero()));
  for (const auto &h : anatomy.hotspots) pair.hotspot_centers.push_back(h.center);

  // MRI: thick slices integrate the anatomy across the slab.
  Volume mri(mri_geom);
  constexpr int kSub = 6;
  parallel_chunks(static_cast<std::size_t>(mri_geom.dims.z()), [&](std::size_t kk) {
    const int k = static_cast<int>(kk);
    for (int j = 0; j < mri_geom.dims.y(); ++j)
      for (int i = 0; i < mri_geom.dims.x(); ++i) {
        const Vec3 p = mri_geom.index_to_world(Vec3(i, j, k));
        double acc = 0.0;
        for (int s = 0; s < kSub; ++s) {
          const double dz = ((s + 0.5) / kSub - 0.5) * mri_geom.spacing.z();
          acc += anatomy.mri(p + Vec3(0.0, 0.0, dz));
        }
        mri(i, j, k) = acc / kSub;
      }
  });

  Volume pet(pet_geom);
  parallel_chunks(static_cast<std::size_t>(pet_geom.dims.z()), [&](std::size_t kk) {
    const int k = static_cast<int>(kk);
    for (int j = 0; j < pet_geom.dims.y(); ++j)
      for (int i = 0; i < pet_geom.dims.x(); ++i)
        pet(i, j, k) = anatomy.pet(pair.truth.inverse_map(pet_geom.index_to_world(Vec3(i, j, k))));
  });
  if (spec.pet_blur > 0.0) pet = gaussian_smooth(pet, Vec3::Constant(spec.pet_blur).cwiseQuotient(pet_geom.spacing));
  // Activity below the detection floor reconstructs as empty air.
  for (double &v : pet.data())
    if (v < kPetFloor * Anatomy::kPetBody) v = 0.0;

  std::normal_distribution<double> normal(0.0, 1.0);
  for (double &v : mri.data())
    v = std::abs(v + spec.mri_noise * Anatomy::kMriBody * normal(rng));
  for (double &v : pet.data()) {
    const double sigma = spec.pet_noise * std::sqrt(std::max(v, 0.0) / Anatomy::kPetBody);
    v = std::max(0.0, v + sigma * normal(rng));
  }
  pair.mri = std::move(mri);
  pair.pet = std::move(pet);

  const Vec3 &s = spec.body_semi_axes;
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 5; ++j)
      for (int i = 0; i < 5; ++i) {
        const Vec3 l((i - 2) * 0.3 * s.x(), (j - 2) * 0.3 * s.y(), (k - 1) * 0.5 * s.z());
        pair.truth.landmarks.push_back(l);
        pair.truth.landmark_images.push_back(pair.truth.map(l));
      }
  return pair;
}

AffineTransform random_misalignment(std::mt19937_64 &rng, const MisalignmentRange &range) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto random_direction = [&] {
    Vec3 v(normal(rng), normal(rng), normal(rng));
    return v.normalized();
  };
  const Vec3 axis = random_direction();
  const double angle = unit(rng) * range.max_rotation_deg * std::numbers::pi / 180.0;
  const Vec3 translation = random_direction() * unit(rng) * range.max_translation;
  Vec3 scale;
  for (int a = 0; a < 3; ++a) scale[a] = range.min_scale + unit(rng) * (range.max_scale - range.min_scale);

  AffineTransform t;
  t.matrix = Eigen::AngleAxisd(angle, axis).toRotationMatrix() * scale.asDiagonal();
  t.translation = translation;
  return t;
}

EvaluationReport evaluate(const CompositeTransform &estimate, const GroundTruth &truth) {
  EvaluationReport rep;
  for (std::size_t n = 0; n < truth.landmarks.size(); ++n) {
    const double e = (estimate.apply(truth.landmarks[n]) - truth.landmark_images[n]).norm();
    rep.tre.push_back(e);
    rep.mean_tre += e;
    rep.max_tre = std::max(rep.max_tre, e);
  }
  if (!rep.tre.empty()) rep.mean_tre /= static_cast<double>(rep.tre.size());
  const AffineTransform est = estimate.affine.value_or(AffineTransform{});
  rep.affine_param_delta =
      est.recentered(Vec3::Zero()).params() - truth.affine.recentered(Vec3::Zero()).params();
  return rep;
}

EvaluationReport evaluate(const RegistrationResult &result, const GroundTruth &truth) {
  EvaluationReport rep = evaluate(result.transform(), truth);
  rep.seconds = result.total_seconds;
  return rep;
}

void write_truth(const GroundTruth &truth, const std::filesystem::path &out_dir) {
  std::filesystem::create_directories(out_dir);
  write_transform(truth.affine, out_dir / "truth_affine.txt");
  write_transform(truth.warp, out_dir / "truth_bspline.txt");
  std::ofstream out(out_dir / "landmarks.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (out_dir / "landmarks.txt").string());
  for (std::size_t n = 0; n < truth.landmarks.size(); ++n) {
    const Vec3 &a = truth.landmarks[n];
    const Vec3 &b = truth.landmark_images[n];
    out << format_double(a.x()) << ' ' << format_double(a.y()) << ' ' << format_double(a.z()) << ' '
        << format_double(b.x()) << ' ' << format_double(b.y()) << ' ' << format_double(b.z())
        << '\n';
  }
}

}  // namespace mripet
