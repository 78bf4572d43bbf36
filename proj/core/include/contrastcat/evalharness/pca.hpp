#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "contrastcat/reflib/reflib.hpp"

namespace ccat {

/// Projects rows onto the two leading principal axes of their covariance.
/// Each axis is sign-normalised so its largest-magnitude coordinate is
/// positive. Throws InputError for fewer than 3 rows or ragged rows and
/// ExportError when the covariance is numerically zero.
std::vector<std::array<double, 2>> pca_project(const std::vector<std::vector<double>>& rows);

struct PcaPoint {
  std::size_t layer = 0;  // 1-based
  std::size_t sample = 0;
  double x = 0.0;
  double y = 0.0;
  ClassId label = 0;
};

/// Token-averaged activation per sample at each chosen layer, optionally
/// minus the mean token-averaged activation of the references for the
/// sample's predicted class, projected to 2-D separately per layer. Labels
/// are the gold labels when present, else predicted classes.
std::vector<PcaPoint> pca_activation_export(const Encoder& model,
                                            std::span<const TokenSequence> samples,
                                            std::span<const std::size_t> layers,
                                            const ReferenceLibrary* contrast);

/// Euclidean distance between the two class centroids of one layer's points
/// (mean pairwise distance between centroids when there are more classes).
double centroid_distance(std::span<const PcaPoint> points, std::size_t layer);

/// layer,sample,x,y,label
void write_pca_csv(std::span<const PcaPoint> points, const std::string& path);

}  // namespace ccat
