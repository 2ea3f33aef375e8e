#pragma once

#include <utility>

#include "mripet/volume.hpp"

namespace mripet {

/// Logistic intensity remap
///   I' = (out_max - out_min) / (1 + exp(-(I - beta) / alpha)) + out_min.
/// alpha sets the width of the emphasized input band, beta its center.
struct SigmoidParams {
  double alpha = 1.0;
  double beta = 0.0;
  double out_min = 0.0;
  double out_max = 1.0;

  void validate() const;
};

double sigmoid(double intensity, const SigmoidParams &p);

Volume sigmoid_transform(const Volume &vol, const SigmoidParams &p);

/// Chooses a band over the nonzero voxels: beta is the intensity at the
/// midpoint percentile and alpha spreads the [low_pct, high_pct] band over
/// +-3 alpha. Output range is [0, max intensity].
SigmoidParams auto_sigmoid_params(const Volume &vol, double low_pct = 0.02,
                                  double high_pct = 0.50);

/// Linear-interpolated percentile of already sorted values, q in [0, 1].
double sorted_percentile(const std::vector<double> &sorted, double q);

/// Brings two volumes to a common z spacing. The thicker-sliced volume is
/// returned as is; the other is slab-averaged along z onto the thicker
/// spacing. Outputs keep the input order.
std::pair<Volume, Volume> harmonize_slices(const Volume &a, const Volume &b);

/// Slab-averages `vol` along z onto `z_spacing` (must be >= current).
Volume resample_slices(const Volume &vol, double z_spacing);

}  // namespace mripet
