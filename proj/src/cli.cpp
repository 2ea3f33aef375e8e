#include "mripet/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mripet/interpolation.hpp"
#include "mripet/metric.hpp"
#include "mripet/parallel.hpp"
#include "mripet/pca_init.hpp"
#include "mripet/phantom.hpp"
#include "mripet/pipeline.hpp"
#include "mripet/preprocess.hpp"
#include "mripet/transform.hpp"
#include "mripet/volume.hpp"

namespace mripet {

namespace {

  struct GlobalOptions {
    std::uint64_t seed = 20160912;
    int threads = 1;
    std::string trace;
    bool verbose = false;
  };

  void add_global_options(CLI::App &app, GlobalOptions &g) {
    app.add_option("--seed", g.seed, "Random seed for metric sampling and phantom generation");
    app.add_option("--threads", g.threads, "Worker threads for metric and resampling")
        ->check(CLI::PositiveNumber);
    app.add_option("--trace", g.trace, "Write optimizer traces as CSV to this file");
    app.add_flag("--verbose", g.verbose, "Print progress to standard error");
  }

  // Usage problems found after parsing (bad flag values) exit with code 1.
  class UsageError : public Error {
   public:
    using Error::Error;
  };

  BoundingBox box_flag(const std::string &flag, const std::string &text) {
    try {
      return parse_bounding_box(text);
    } catch (const Error &e) {
      throw UsageError(flag + ": " + e.what());
    }
  }

  Volume load_flag(const std::string &flag, const std::string &path) {
    try {
      return load_metaimage(path);
    } catch (const Error &e) {
      throw Error(flag + " " + path + ": " + e.what());
    }
  }

  void print_vec(std::ostream &out, const Vec3 &v) {
    out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  }

  struct SigmoidFlags {
    bool auto_mode = false;
    bool off = false;
    double low_pct = 0.02;
    double high_pct = 0.50;
    std::optional<double> alpha;
    std::optional<double> beta;
  };

  void add_sigmoid_flags(CLI::App &app, SigmoidFlags &s, bool allow_off) {
    auto *a = app.add_flag("--sigmoid-auto", s.auto_mode,
                           "Choose alpha and beta from PET percentiles (the default)");
    app.add_option("--sigmoid-low-pct", s.low_pct, "Lower percentile of the automatic band")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--sigmoid-high-pct", s.high_pct, "Upper percentile of the automatic band")
        ->check(CLI::Range(0.0, 1.0));
    auto *al = app.add_option("--sigmoid-alpha", s.alpha, "Manual sigmoid width")->excludes(a);
    auto *be = app.add_option("--sigmoid-beta", s.beta, "Manual sigmoid center")->excludes(a);
    al->needs(be);
    be->needs(al);
    if (allow_off)
      app.add_flag("--no-sigmoid", s.off, "Skip the PET intensity remap")
          ->excludes(a)
          ->excludes(al);
  }

  SigmoidConfig sigmoid_config(const SigmoidFlags &s, const Volume &pet) {
    SigmoidConfig c;
    c.low_pct = s.low_pct;
    c.high_pct = s.high_pct;
    if (!(s.low_pct < s.high_pct))
      throw UsageError("--sigmoid-low-pct must be below --sigmoid-high-pct");
    if (s.off) {
      c.mode = SigmoidMode::Off;
    } else if (s.alpha) {
      c.mode = SigmoidMode::Manual;
      c.manual = {*s.alpha, *s.beta, 0.0, std::max(pet.max_value(), 1e-12)};
      try {
        c.manual.validate();
      } catch (const Error &e) {
        throw UsageError(std::string("--sigmoid-alpha/--sigmoid-beta: ") + e.what());
      }
    }
    return c;
  }

  void write_traces(const std::string &path, const std::vector<StageReport> &reports) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("--trace: cannot write " + path);
    out << "stage,level,iteration,cost,step\n";
    for (const auto &r : reports)
      write_trace_csv(out, r.report, r.stage + ',' + std::to_string(r.level));
  }

  // ---- register -------------------------------------------------------------

  struct RegisterArgs {
    std::string fixed, moving, voi_fixed, voi_moving, out_dir = "registration";
    SigmoidFlags sigmoid;
    bool global_only = false;
    std::vector<double> grid_spacing;
    int bins = 50;
    std::string fuse = "checkerboard";
  };

  void setup_register(CLI::App &app, RegisterArgs &a) {
    app.add_option("--fixed", a.fixed, "Fixed (MRI) volume, MetaImage")->required();
    app.add_option("--moving", a.moving, "Moving (PET) volume, MetaImage")->required();
    app.add_option("--voi-fixed", a.voi_fixed, "Fixed VOI as i0,j0,k0,i1,j1,k1 (inclusive)");
    app.add_option("--voi-moving", a.voi_moving, "Moving VOI as i0,j0,k0,i1,j1,k1 (inclusive)");
    add_sigmoid_flags(app, a.sigmoid, true);
    app.add_flag("--global-only", a.global_only, "Stop after the affine stage");
    app.add_option("--grid-spacing", a.grid_spacing,
                   "Finest FFD control spacing in mm, one value or three (default: extent / 8)")
        ->expected(1, 3);
    app.add_option("--bins", a.bins, "Joint histogram bins per axis")->check(CLI::Range(6, 1024));
    app.add_option("--fuse", a.fuse, "Fusion mode")->check(CLI::IsMember({"checkerboard", "alpha"}));
    app.add_option("--out-dir", a.out_dir, "Output directory");
  }

  int cmd_register(const RegisterArgs &a, const GlobalOptions &g) {
    std::optional<BoundingBox> voi_f, voi_m;
    if (!a.voi_fixed.empty()) voi_f = box_flag("--voi-fixed", a.voi_fixed);
    if (!a.voi_moving.empty()) voi_m = box_flag("--voi-moving", a.voi_moving);

    RegistrationConfig cfg;
    cfg.global_only = a.global_only;
    cfg.fuse_mode = parse_fuse_mode(a.fuse);
    cfg.global.metric.bins = cfg.local.metric.bins = a.bins;
    cfg.global.metric.rng_seed = cfg.local.metric.rng_seed = g.seed;
    if (a.grid_spacing.size() == 1) cfg.local.grid_spacing = Vec3::Constant(a.grid_spacing[0]);
    else if (a.grid_spacing.size() == 3)
      cfg.local.grid_spacing = Vec3(a.grid_spacing[0], a.grid_spacing[1], a.grid_spacing[2]);
    else if (!a.grid_spacing.empty()) throw UsageError("--grid-spacing takes one or three values");
    if (cfg.local.grid_spacing && (cfg.local.grid_spacing->array() <= 0.0).any())
      throw UsageError("--grid-spacing values must be positive");

    const Volume mri = load_flag("--fixed", a.fixed);
    const Volume pet = load_flag("--moving", a.moving);
    cfg.global.sigmoid = sigmoid_config(a.sigmoid, pet);
    const RegistrationResult res = register_full(mri, pet, voi_f, voi_m, cfg);
    write_outputs(res, a.out_dir);
    write_traces(g.trace, res.reports);
    if (g.verbose) {
      for (const auto &r : res.reports)
        std::cerr << r.stage << " level " << r.level << ": " << r.report.iterations
                  << " iterations, cost " << r.report.initial_cost << " -> "
                  << r.report.final_cost << " (" << to_string(r.report.stop_reason) << ", "
                  << r.seconds << " s)\n";
      std::cerr << "total " << res.total_seconds << " s, outputs in " << a.out_dir << '\n';
    }
    return 0;
  }

  // ---- sigmoid --------------------------------------------------------------

  struct SigmoidArgs {
    std::string input, output;
    SigmoidFlags sigmoid;
    std::optional<double> out_min, out_max;
  };

  void setup_sigmoid(CLI::App &app, SigmoidArgs &a) {
    app.add_option("--input", a.input, "Input volume")->required();
    app.add_option("--output", a.output, "Output volume")->required();
    add_sigmoid_flags(app, a.sigmoid, false);
    app.add_option("--out-min", a.out_min, "Output range minimum (default: 0)");
    app.add_option("--out-max", a.out_max, "Output range maximum (default: input maximum)");
  }

  int cmd_sigmoid(const SigmoidArgs &a) {
    const Volume in = load_flag("--input", a.input);
    SigmoidParams p;
    if (a.sigmoid.alpha) {
      p = {*a.sigmoid.alpha, *a.sigmoid.beta, 0.0, in.max_value()};
    } else {
      if (!(a.sigmoid.low_pct < a.sigmoid.high_pct))
        throw UsageError("--sigmoid-low-pct must be below --sigmoid-high-pct");
      p = auto_sigmoid_params(in, a.sigmoid.low_pct, a.sigmoid.high_pct);
    }
    if (a.out_min) p.out_min = *a.out_min;
    if (a.out_max) p.out_max = *a.out_max;
    try {
      p.validate();
    } catch (const Error &e) {
      throw UsageError(std::string("sigmoid parameters: ") + e.what());
    }
    save_metaimage(sigmoid_transform(in, p), a.output);
    std::cout << "alpha " << format_double(p.alpha) << "\nbeta " << format_double(p.beta)
              << "\nout_min " << format_double(p.out_min) << "\nout_max "
              << format_double(p.out_max) << '\n';
    return 0;
  }

  // ---- pca ------------------------------------------------------------------

  struct PcaArgs {
    std::string input;
    std::optional<double> threshold;
  };

  void setup_pca(CLI::App &app, PcaArgs &a) {
    app.add_option("--input", a.input, "Input volume")->required();
    app.add_option("--threshold", a.threshold,
                   "Binarize at this intensity instead of weighting by intensity");
  }

  int cmd_pca(const PcaArgs &a) {
    const Volume in = load_flag("--input", a.input);
    const PrincipalAxes pa = principal_axes(intensity_moments(in, a.threshold));
    std::cout << std::setprecision(9);
    std::cout << "centroid ";
    print_vec(std::cout, pa.centroid);
    for (int c = 0; c < 3; ++c) {
      std::cout << "axis" << c + 1 << ' ';
      print_vec(std::cout, pa.axes.col(c));
    }
    std::cout << "eigenvalues ";
    print_vec(std::cout, pa.eigenvalues);
    return 0;
  }

  // ---- metric ---------------------------------------------------------------

  struct MetricArgs {
    std::string fixed, moving, transform;
    int bins = 50;
    double sample_fraction = 1.0;
  };

  void setup_metric(CLI::App &app, MetricArgs &a) {
    app.add_option("--fixed", a.fixed, "Fixed volume")->required();
    app.add_option("--moving", a.moving, "Moving volume")->required();
    app.add_option("--transform", a.transform, "Affine or bspline transform file (default: identity)");
    app.add_option("--bins", a.bins, "Joint histogram bins per axis")->check(CLI::Range(6, 1024));
    app.add_option("--sample-fraction", a.sample_fraction, "Fraction of fixed voxels sampled")
        ->check(CLI::Range(1e-6, 1.0));
  }

  int cmd_metric(const MetricArgs &a, const GlobalOptions &g) {
    const Volume fixed = load_flag("--fixed", a.fixed);
    const Volume moving = load_flag("--moving", a.moving);
    MetricConfig mc;
    mc.bins = a.bins;
    mc.sample_fraction = a.sample_fraction;
    mc.rng_seed = g.seed;
    const SplineCoefficients coeffs = prefilter(moving);

    std::unique_ptr<ParametricTransform> t = std::make_unique<AffineParametric>(AffineTransform{});
    if (!a.transform.empty()) {
      const TransformFile tf = read_transform(a.transform);
      if (const auto *af = std::get_if<AffineTransform>(&tf)) t = std::make_unique<AffineParametric>(*af);
      else t = std::make_unique<FfdParametric>(std::get<BSplineFFD>(tf));
    }
    const JointHistogram h = build_histogram(fixed, coeffs, *t, mc);
    const double hx = entropy(h.marg_fixed);
    const double hy = entropy(h.marg_moving);
    const double hxy = entropy(h.joint);
    std::cout << std::setprecision(9) << "H(X) " << hx << "\nH(Y) " << hy << "\nH(X,Y) " << hxy
              << "\nMI " << mutual_information(h) << "\nNMI " << normalized_mutual_information(h)
              << '\n';
    return 0;
  }

  // ---- resample -------------------------------------------------------------

  struct ResampleArgs {
    std::string moving, reference, output;
    std::vector<std::string> transforms;
  };

  void setup_resample(CLI::App &app, ResampleArgs &a) {
    app.add_option("--moving", a.moving, "Volume to resample")->required();
    app.add_option("--reference", a.reference, "Volume whose grid defines the output")->required();
    app.add_option("--transform", a.transforms,
                   "Transform files; at most one affine and one bspline (default: identity)");
    app.add_option("--output", a.output, "Output volume")->required();
  }

  int cmd_resample(const ResampleArgs &a) {
    const Volume moving = load_flag("--moving", a.moving);
    const Volume reference = load_flag("--reference", a.reference);
    CompositeTransform t;
    for (const auto &path : a.transforms) {
      TransformFile tf = read_transform(path);
      if (auto *af = std::get_if<AffineTransform>(&tf)) {
        if (t.affine) throw UsageError("--transform: more than one affine file given");
        t.affine = *af;
      } else {
        if (t.ffd) throw UsageError("--transform: more than one bspline file given");
        t.ffd = std::get<BSplineFFD>(tf);
      }
    }
    save_metaimage(resample(moving, t, reference.geometry()), a.output);
    return 0;
  }

  // ---- fuse -----------------------------------------------------------------

  struct FuseArgs {
    std::string fixed, moving, output, mode = "checkerboard";
  };

  void setup_fuse(CLI::App &app, FuseArgs &a) {
    app.add_option("--fixed", a.fixed, "MRI volume")->required();
    app.add_option("--moving", a.moving, "PET volume already on the MRI grid")->required();
    app.add_option("--mode", a.mode, "Fusion mode")->check(CLI::IsMember({"checkerboard", "alpha"}));
    app.add_option("--output", a.output, "Output volume")->required();
  }

  int cmd_fuse(const FuseArgs &a) {
    const Volume fixed = load_flag("--fixed", a.fixed);
    const Volume moving = load_flag("--moving", a.moving);
    if (!(fixed.geometry() == moving.geometry()))
      throw Error("--moving " + a.moving + " is not on the grid of --fixed " + a.fixed
                  + "; run resample first");
    save_metaimage(fuse(fixed, moving, parse_fuse_mode(a.mode)), a.output);
    return 0;
  }

  // ---- phantom --------------------------------------------------------------

  struct PhantomArgs {
    std::string out_dir = "phantom";
    double hotspot_ratio = 8.0;
    double warp = 0.0;
    bool misalign = false;
    double mri_noise = 0.02;
    double pet_noise = 0.05;
  };

  void setup_phantom(CLI::App &app, PhantomArgs &a) {
    app.add_option("--out-dir", a.out_dir, "Output directory");
    app.add_option("--hotspot-ratio", a.hotspot_ratio, "Hotspot to body PET uptake ratio")
        ->check(CLI::Range(1.0 + 1e-9, 1e6));
    app.add_option("--warp", a.warp, "Maximum displacement of the smooth warp in mm")
        ->check(CLI::NonNegativeNumber);
    app.add_flag("--misalign", a.misalign,
                 "Draw a random affine misalignment (10 mm, 15 deg, scale 0.9 to 1.1)");
    app.add_option("--mri-noise", a.mri_noise, "MRI noise sigma relative to body intensity")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--pet-noise", a.pet_noise, "PET noise sigma at body uptake")
        ->check(CLI::NonNegativeNumber);
  }

  int cmd_phantom(const PhantomArgs &a, const GlobalOptions &g) {
    PhantomSpec spec;
    spec.seed = g.seed;
    spec.hotspot_ratio = a.hotspot_ratio;
    spec.warp_max_displacement = a.warp;
    spec.mri_noise = a.mri_noise;
    spec.pet_noise = a.pet_noise;
    if (a.misalign) {
      std::mt19937_64 rng(g.seed ^ 0x9e3779b97f4a7c15ULL);
      spec.truth_affine = random_misalignment(rng, {});
    }
    const PhantomPair pair = make_pair(spec);
    const std::filesystem::path dir = a.out_dir;
    std::filesystem::create_directories(dir);
    save_metaimage(pair.mri, dir / "mri.mhd");
    save_metaimage(pair.pet, dir / "pet.mhd");
    write_truth(pair.truth, dir);
    if (g.verbose) std::cerr << "phantom written to " << dir.string() << '\n';
    return 0;
  }

}  // namespace

int run_cli(int argc, char **argv) {
  CLI::App app{"MRI/PET multimodal registration"};
  app.name("mripet");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  GlobalOptions g;
  add_global_options(app, g);

  RegisterArgs reg;
  SigmoidArgs sig;
  PcaArgs pca;
  MetricArgs met;
  ResampleArgs res;
  FuseArgs fus;
  PhantomArgs ph;

  auto sub = [&](const char *name, const char *help) {
    CLI::App *s = app.add_subcommand(name, help);
    add_global_options(*s, g);
    return s;
  };
  CLI::App *s_reg = sub("register", "Affine then B-spline registration of a PET volume to an MRI volume");
  setup_register(*s_reg, reg);
  CLI::App *s_sig = sub("sigmoid", "Sigmoid intensity remap of a volume");
  setup_sigmoid(*s_sig, sig);
  CLI::App *s_pca = sub("pca", "Print intensity centroid, principal axes and eigenvalues");
  setup_pca(*s_pca, pca);
  CLI::App *s_met = sub("metric", "Print entropies, MI and NMI of a volume pair");
  setup_metric(*s_met, met);
  CLI::App *s_res = sub("resample", "Resample a volume through transform files");
  setup_resample(*s_res, res);
  CLI::App *s_fus = sub("fuse", "Fuse an MRI volume with a registered PET volume");
  setup_fuse(*s_fus, fus);
  CLI::App *s_ph = sub("phantom", "Write a synthetic MRI/PET pair with its ground truth");
  setup_phantom(*s_ph, ph);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    set_num_threads(g.threads);
    if (s_reg->parsed()) return cmd_register(reg, g);
    if (s_sig->parsed()) return cmd_sigmoid(sig);
    if (s_pca->parsed()) return cmd_pca(pca);
    if (s_met->parsed()) return cmd_metric(met, g);
    if (s_res->parsed()) return cmd_resample(res);
    if (s_fus->parsed()) return cmd_fuse(fus);
    if (s_ph->parsed()) return cmd_phantom(ph, g);
  } catch (const UsageError &e) {
    std::cerr << "mripet: " << e.what() << '\n';
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "mripet: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace mripet
