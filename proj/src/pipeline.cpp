#include "mripet/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mripet/interpolation.hpp"

namespace mripet {

namespace {
  using Clock = std::chrono::steady_clock;

  double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
  }

  bool is_full_resolution(const PyramidLevel &level) {
    return (level.shrink.array() == 1).all();
  }

  std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) return {1.0};
    const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
      sum += k[i + radius];
    }
    for (double &v : k) v /= sum;
    return k;
  }
}  // namespace

PyramidSchedule PyramidSchedule::standard() { return inplane({4, 2, 1}); }

PyramidSchedule PyramidSchedule::inplane(const std::vector<int> &factors) {
  PyramidSchedule s;
  for (int f : factors) {
    PyramidLevel level;
    level.shrink = Index3(f, f, 1);
    const double sigma = f > 1 ? 0.5 * f : 0.0;
    level.sigma = Vec3(sigma, sigma, 0.0);
    s.levels.push_back(level);
  }
  return s;
}

void PyramidSchedule::validate() const {
  if (levels.empty()) throw Error("pyramid schedule has no levels");
  for (const auto &l : levels) {
    if ((l.shrink.array() < 1).any()) throw Error("pyramid shrink factors must be >= 1");
    if ((l.sigma.array() < 0.0).any()) throw Error("pyramid sigmas must be >= 0");
  }
  if (!is_full_resolution(levels.back()))
    throw Error("the last pyramid level must be full resolution");
}

Volume gaussian_smooth(const Volume &vol, const Vec3 &sigma_voxels) {
  Volume cur = vol;
  const Index3 d = vol.dims();
  for (int axis = 0; axis < 3; ++axis) {
    if (sigma_voxels[axis] <= 0.0 || d[axis] == 1) continue;
    const auto kernel = gaussian_kernel(sigma_voxels[axis]);
    const int radius = static_cast<int>(kernel.size() / 2);
    Volume next(vol.geometry());
    for (int k = 0; k < d.z(); ++k)
      for (int j = 0; j < d.y(); ++j)
        for (int i = 0; i < d.x(); ++i) {
          Index3 p(i, j, k);
          double acc = 0.0;
          for (int t = -radius; t <= radius; ++t) {
            Index3 q = p;
            q[axis] = std::clamp(p[axis] + t, 0, d[axis] - 1);
            acc += kernel[t + radius] * cur(q.x(), q.y(), q.z());
          }
          next(i, j, k) = acc;
        }
    cur = std::move(next);
  }
  return cur;
}

std::vector<Volume> build_pyramid(const Volume &vol, const PyramidSchedule &schedule) {
  schedule.validate();
  std::vector<Volume> out;
  for (const auto &level : schedule.levels) {
    for (int a = 0; a < 3; ++a)
      if (level.shrink[a] > vol.dims()[a])
        throw Error("pyramid shrink " + std::to_string(level.shrink[a]) + " exceeds axis length "
                    + std::to_string(vol.dims()[a]));
    if (is_full_resolution(level) && (level.sigma.array() == 0.0).all()) {
      out.push_back(vol);
      continue;
    }
    const Volume smooth = gaussian_smooth(vol, level.sigma);
    Geometry g = vol.geometry();
    for (int a = 0; a < 3; ++a) {
      g.dims[a] = (vol.dims()[a] - 1) / level.shrink[a] + 1;
      g.spacing[a] *= level.shrink[a];
    }
    Volume sub(g);
    for (int k = 0; k < g.dims.z(); ++k)
      for (int j = 0; j < g.dims.y(); ++j)
        for (int i = 0; i < g.dims.x(); ++i)
          sub(i, j, k) = smooth(i * level.shrink.x(), j * level.shrink.y(), k * level.shrink.z());
    out.push_back(std::move(sub));
  }
  return out;
}

int GlobalResult::total_iterations() const {
  int n = 0;
  for (const auto &r : reports) n += r.report.iterations;
  return n;
}

FuseMode parse_fuse_mode(const std::string &text) {
  if (text == "checkerboard") return FuseMode::Checkerboard;
  if (text == "alpha") return FuseMode::Alpha;
  throw Error("unknown fuse mode '" + text + "' (expected checkerboard or alpha)");
}

Geometry padded_geometry(const Geometry &g, double fraction) {
  if (fraction < 0.0) throw Error("padding fraction must be >= 0");
  Geometry out = g;
  for (int a = 0; a < 3; ++a) {
    const int pad = static_cast<int>(std::ceil(fraction * g.extent()[a] / g.spacing[a]));
    out.dims[a] += 2 * pad;
    out.origin[a] -= pad * g.spacing[a];
  }
  return out;
}

Volume resample_slab_average(const SplineCoefficients &moving, const CompositeTransform &t,
                             const Geometry &target, double moving_z_spacing) {
  const double ratio = target.spacing.z() / moving_z_spacing;
  if (!(ratio > 1.0 + 1e-9)) return resample(moving, t, target);
  const int n_sub = static_cast<int>(std::ceil(ratio - 1e-9));
  Geometry fine = target;
  fine.dims.z() *= n_sub;
  fine.spacing.z() /= n_sub;
  fine.origin.z() = target.origin.z() - 0.5 * target.spacing.z() + 0.5 * fine.spacing.z();
  Volume out = resample_slices(resample(moving, t, fine), target.spacing.z());
  // resample_slices rebuilds the z origin from the slab edges; pin it exactly.
  return Volume(target, std::vector<double>(out.data().begin(), out.data().end()));
}

Vec3 default_grid_spacing(const Geometry &fixed) {
  const Vec3 extent = fixed.extent();
  Vec3 s;
  for (int a = 0; a < 3; ++a)
    s[a] = std::max(extent[a] / 8.0, 2.0 * fixed.spacing[a]);
  return s;
}

GlobalResult register_global(const Volume &mri, const Volume &pet, const GlobalConfig &cfg) {
  cfg.schedule.validate();
  GlobalResult res;

  auto [fixed, moving] = harmonize_slices(mri, pet);
  switch (cfg.sigmoid.mode) {
    case SigmoidMode::Auto:
      res.sigmoid = auto_sigmoid_params(moving, cfg.sigmoid.low_pct, cfg.sigmoid.high_pct);
      break;
    case SigmoidMode::Manual: res.sigmoid = cfg.sigmoid.manual; break;
    case SigmoidMode::Off: break;
  }
  if (res.sigmoid) moving = sigmoid_transform(moving, *res.sigmoid);

  res.fixed_axes = principal_axes(intensity_moments(fixed, cfg.pca_threshold));
  res.moving_axes = principal_axes(intensity_moments(moving, cfg.pca_threshold));
  res.initial = initial_affine(res.fixed_axes, res.moving_axes);

  const auto fixed_pyr = build_pyramid(fixed, cfg.schedule);
  const auto moving_pyr = build_pyramid(moving, cfg.schedule);

  // A unit change of any parameter should move fixed points by about 1 mm:
  // matrix column c acts on coordinates spread over half the extent of axis c.
  Eigen::VectorXd scales = Eigen::VectorXd::Ones(12);
  const Vec3 half = 0.5 * fixed.geometry().extent().cwiseMax(fixed.geometry().spacing);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) scales[r * 3 + c] = half[c];

  AffineTransform current = res.initial;
  double max_step = cfg.max_step;
  for (std::size_t l = 0; l < cfg.schedule.levels.size(); ++l) {
    const auto start = Clock::now();
    MetricConfig mc = cfg.metric;
    mc.sample_fraction = is_full_resolution(cfg.schedule.levels[l]) ? cfg.fine_sample_fraction
                                                                    : cfg.coarse_sample_fraction;
    const SplineCoefficients coeffs = prefilter(moving_pyr[l]);
    const NmiMetric metric(fixed_pyr[l], coeffs, mc);
    AffineParametric param(current);
    CostFunction f{12, [&](const Eigen::VectorXd &x, Eigen::VectorXd &g) {
                     param.set_params(x);
                     return metric.value_and_gradient(param, g);
                   }};
    RegularStepOptions opts;
    opts.max_step = std::max(max_step, 2.0 * cfg.min_step);
    opts.min_step = cfg.min_step;
    opts.relaxation = cfg.relaxation;
    opts.max_iters = cfg.max_iters;
    opts.scales = scales;
    OptReport rep = regular_step_gd(f, current.params(), opts);
    current = AffineTransform::from_params(rep.final_params, current.center);
    res.reports.push_back({"global", static_cast<int>(l), std::move(rep), seconds_since(start)});
    max_step *= 0.5;
  }
  res.affine = current;
  return res;
}

LocalResult register_local(const Volume &mri, const Volume &moving, const LocalConfig &cfg) {
  cfg.schedule.validate();
  const Geometry &mg = moving.geometry();
  const Vec3 lo = mg.origin - 0.5 * mg.spacing;
  const Vec3 hi = mg.origin + mg.extent() + 0.5 * mg.spacing;
  const Geometry &fg = mri.geometry();
  if ((fg.origin.array() < lo.array()).any()
      || ((fg.origin + fg.extent()).array() > hi.array()).any())
    throw Error("local registration expects the moving volume to cover the fixed domain");
  LocalResult res;
  const Geometry &domain = mri.geometry();
  const auto fixed_pyr = build_pyramid(mri, cfg.schedule);
  const auto moving_pyr = build_pyramid(moving, cfg.schedule);
  const Vec3 final_spacing = cfg.grid_spacing.value_or(default_grid_spacing(domain));
  const std::size_t n_levels = cfg.schedule.levels.size();

  BSplineFFD ffd;
  for (std::size_t l = 0; l < n_levels; ++l) {
    const auto start = Clock::now();
    const Vec3 spacing = final_spacing * std::pow(2.0, static_cast<double>(n_levels - 1 - l));
    ffd = l == 0 ? BSplineFFD::covering(domain, spacing) : refine_ffd(ffd, domain, spacing);

    const auto n = static_cast<Eigen::Index>(3 * ffd.coefficients.size());
    Eigen::VectorXd lower(n), upper(n);
    for (Eigen::Index p = 0; p < n; ++p) {
      upper[p] = cfg.bound_factor * spacing[p % 3];
      lower[p] = -upper[p];
    }
    const Eigen::VectorXd init = ffd.params().cwiseMax(lower).cwiseMin(upper);

    MetricConfig mc = cfg.metric;
    mc.sample_fraction = is_full_resolution(cfg.schedule.levels[l]) ? cfg.fine_sample_fraction
                                                                    : cfg.coarse_sample_fraction;
    const SplineCoefficients coeffs = prefilter(moving_pyr[l]);
    const NmiMetric metric(fixed_pyr[l], coeffs, mc);
    FfdParametric param(ffd);
    CostFunction f{static_cast<std::size_t>(n),
                   [&](const Eigen::VectorXd &x, Eigen::VectorXd &g) {
                     param.set_params(x);
                     return metric.value_and_gradient(param, g);
                   }};
    LbfgsOptions opts;
    opts.memory = cfg.memory;
    opts.max_iters = cfg.max_iters;
    opts.grad_tol = cfg.grad_tol;
    opts.cost_tol = cfg.cost_tol;
    OptReport rep = lbfgs_bounded(f, init, lower, upper, opts);
    ffd.set_params(rep.final_params);
    res.reports.push_back({"local", static_cast<int>(l), std::move(rep), seconds_since(start)});
  }
  res.ffd = std::move(ffd);
  return res;
}

Volume normalize_unit(const Volume &vol) {
  const double lo = vol.min_value();
  const double range = vol.max_value() - lo;
  Volume out(vol.geometry());
  if (range <= 0.0) return out;
  for (std::size_t n = 0; n < vol.size(); ++n) out.data()[n] = (vol.data()[n] - lo) / range;
  return out;
}

Volume fuse(const Volume &mri, const Volume &registered_pet, FuseMode mode) {
  if (!(mri.geometry() == registered_pet.geometry()))
    throw Error("fuse needs volumes with identical geometry");
  const Volume a = normalize_unit(mri);
  const Volume b = normalize_unit(registered_pet);
  Volume out(mri.geometry());
  const Index3 d = mri.dims();
  for (int k = 0; k < d.z(); ++k)
    for (int j = 0; j < d.y(); ++j)
      for (int i = 0; i < d.x(); ++i) {
        if (mode == FuseMode::Alpha) {
          out(i, j, k) = 0.5 * a(i, j, k) + 0.5 * b(i, j, k);
        } else {
          const bool from_mri = ((i / 8 + j / 8 + k / 8) % 2) == 0;
          out(i, j, k) = from_mri ? a(i, j, k) : b(i, j, k);
        }
      }
  return out;
}

RegistrationResult register_full(const Volume &mri_in, const Volume &pet_in,
                                 const std::optional<BoundingBox> &voi_mri,
                                 const std::optional<BoundingBox> &voi_pet,
                                 const RegistrationConfig &cfg) {
  const auto start = Clock::now();
  const Volume mri = voi_mri ? extract_voi(mri_in, *voi_mri) : mri_in;
  const Volume pet = voi_pet ? extract_voi(pet_in, *voi_pet) : pet_in;

  RegistrationResult res;
  GlobalResult global = register_global(mri, pet, cfg.global);
  res.global_seconds = seconds_since(start);
  res.affine = global.affine;
  res.initial_affine = global.initial;
  res.reports = std::move(global.reports);

  const SplineCoefficients pet_coeffs = prefilter(pet);
  if (cfg.global_only) {
    res.ffd = BSplineFFD::covering(mri.geometry(), default_grid_spacing(mri.geometry()));
  } else {
    const auto local_start = Clock::now();
    const Volume pet_global =
        resample_slab_average(pet_coeffs, CompositeTransform{res.affine, std::nullopt},
                              padded_geometry(mri.geometry(), cfg.local.pad_fraction),
                              pet.spacing().z());
    LocalResult local = register_local(mri, pet_global, cfg.local);
    res.ffd = std::move(local.ffd);
    for (auto &r : local.reports) res.reports.push_back(std::move(r));
    res.local_seconds = seconds_since(local_start);
  }
  res.registered_pet = resample(pet_coeffs, res.transform(), mri.geometry());
  res.fused = fuse(mri, res.registered_pet, cfg.fuse_mode);
  res.total_seconds = seconds_since(start);
  return res;
}

void write_outputs(const RegistrationResult &result, const std::filesystem::path &out_dir) {
  std::filesystem::create_directories(out_dir);
  save_metaimage(result.registered_pet, out_dir / "registered_pet.mhd");
  write_transform(result.affine, out_dir / "affine.txt");
  write_transform(result.ffd, out_dir / "bspline.txt");
  save_metaimage(result.fused, out_dir / "fused.mhd");

  std::ofstream report(out_dir / "report.jsonl", std::ios::trunc);
  if (!report) throw IoError("cannot write " + (out_dir / "report.jsonl").string());
  for (const auto &r : result.reports) {
    nlohmann::json line = {
      {"stage", r.stage},
      {"level", r.level},
      {"iterations", r.report.iterations},
      {"evaluations", r.report.evaluations},
      {"initial_cost", r.report.initial_cost},
      {"final_cost", r.report.final_cost},
      {"stop_reason", to_string(r.report.stop_reason)},
      {"seconds", r.seconds},
    };
    report << line.dump() << '\n';
  }
  report << nlohmann::json{{"stage", "global-total"}, {"seconds", result.global_seconds}}.dump()
         << '\n';
  report << nlohmann::json{{"stage", "local-total"}, {"seconds", result.local_seconds}}.dump()
         << '\n';
  report << nlohmann::json{{"stage", "total"}, {"seconds", result.total_seconds}}.dump() << '\n';
}

}  // namespace mripet
