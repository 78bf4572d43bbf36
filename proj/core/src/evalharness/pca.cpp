#include "contrastcat/evalharness/pca.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>

#include "contrastcat/evalharness/evaluate.hpp"
#include "contrastcat/util/error.hpp"
#include "contrastcat/util/parallel.hpp"

namespace ccat {

std::vector<std::array<double, 2>> pca_project(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 3) throw InputError("PCA needs at least 3 points");
  const std::size_t d = rows.front().size();
  if (d == 0) throw InputError("PCA needs at least one dimension");
  Eigen::MatrixXd x(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw InputError("PCA rows differ in length");
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rows[i][j];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(rows.size() - 1);
  const double scale = std::max(1.0, mean.cwiseAbs().maxCoeff());
  if (cov.trace() <= 1e-24 * scale * scale) {
    throw ExportError("PCA: all points coincide, covariance is degenerate");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw ExportError("PCA: eigendecomposition failed");
  // Eigenvalues ascend; take the last two columns, largest first.
  Eigen::MatrixXd axes(d, 2);
  for (int a = 0; a < 2; ++a) {
    const Eigen::Index col = static_cast<Eigen::Index>(d) - 1 - a;
    if (col < 0) {
      axes.col(a).setZero();
      continue;
    }
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    axes.col(a) = v;
  }
  const Eigen::MatrixXd proj = x * axes;
  std::vector<std::array<double, 2>> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = {proj(i, 0), proj(i, 1)};
  return out;
}

namespace {

std::vector<double> token_mean(const nk::Matrix& a) {
  std::vector<double> m(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m[j] += a(i, j);
  for (double& v : m) v /= static_cast<double>(a.rows());
  return m;
}

}  // namespace

std::vector<PcaPoint> pca_activation_export(const Encoder& model,
                                            std::span<const TokenSequence> samples,
                                            std::span<const std::size_t> layers,
                                            const ReferenceLibrary* contrast) {
  if (samples.size() < 3) throw InputError("PCA export needs at least 3 samples");
  if (layers.empty()) throw InputError("PCA export needs at least one layer");
  for (std::size_t l : layers) {
    if (l < 1 || l > model.config().layers) {
      throw InputError("layer " + std::to_string(l) + " outside [1, " +
                       std::to_string(model.config().layers) + "]");
    }
  }
  std::vector<ForwardTrace> traces(samples.size());
  parallel_for(samples.size(), [&](std::size_t s) { traces[s] = model.forward(samples[s]); });

  std::vector<PcaPoint> out;
  for (std::size_t l : layers) {
    std::vector<std::vector<double>> rows;
    for (std::size_t s = 0; s < samples.size(); ++s) {
      auto row = token_mean(traces[s].activations[l - 1]);
      if (contrast) {
        const auto& refs = contrast->entries(traces[s].predicted());
        if (refs.empty()) throw LibraryError("no references for PCA contrast");
        for (const auto& r : refs) {
          const auto m = token_mean(r.activations.at(l - 1));
          for (std::size_t j = 0; j < row.size(); ++j)
            row[j] -= m[j] / static_cast<double>(refs.size());
        }
      }
      rows.push_back(std::move(row));
    }
    const auto proj = pca_project(rows);
    for (std::size_t s = 0; s < samples.size(); ++s) {
      PcaPoint p;
      p.layer = l;
      p.sample = s;
      p.x = proj[s][0];
      p.y = proj[s][1];
      p.label = samples[s].label ? *samples[s].label : traces[s].predicted();
      out.push_back(p);
    }
  }
  return out;
}

double centroid_distance(std::span<const PcaPoint> points, std::size_t layer) {
  std::map<ClassId, std::array<double, 3>> acc;  // sum x, sum y, count
  for (const auto& p : points) {
    if (p.layer != layer) continue;
    auto& a = acc[p.label];
    a[0] += p.x;
    a[1] += p.y;
    a[2] += 1.0;
  }
  std::vector<std::array<double, 2>> centroids;
  for (const auto& [label, a] : acc) centroids.push_back({a[0] / a[2], a[1] / a[2]});
  if (centroids.size() < 2) return 0.0;
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    for (std::size_t j = i + 1; j < centroids.size(); ++j) {
      sum += std::hypot(centroids[i][0] - centroids[j][0], centroids[i][1] - centroids[j][1]);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

void write_pca_csv(std::span<const PcaPoint> points, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << "layer,sample,x,y,label\n";
  for (const auto& p : points) {
    out << p.layer << ',' << p.sample << ',' << format_number(p.x) << ',' << format_number(p.y)
        << ',' << p.label << '\n';
  }
}

}  // namespace ccat
