#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <json.hpp>

#include "repdecode/error.hpp"
#include "repdecode/matrixio.hpp"

namespace repdecode {

struct PcaModel {
  Vector mean;                               // d_raw
  Matrix components;                         // n_components x d_raw, orthonormal rows
  std::vector<double> explained_variance_ratio;

  Eigen::Index n_components() const { return components.rows(); }
  Eigen::Index input_dims() const { return mean.size(); }

  double retained_variance() const {
    double s = 0.0;
    for (double r : explained_variance_ratio) s += r;
    return s;
  }
};

// Centers columns and keeps the top right-singular vectors of the centered
// data. Each component is flipped so its largest-magnitude entry is positive.
inline PcaModel pca_fit(const Matrix& x, Eigen::Index n_components) {
  if (x.rows() < 2) throw DataError("pca_fit: need at least 2 rows, got " + std::to_string(x.rows()));
  if (n_components < 1 || n_components > std::min(x.rows(), x.cols()))
    throw UsageError("pca_fit: n_components=" + std::to_string(n_components) +
                     " must be in [1, min(rows, cols)=" + std::to_string(std::min(x.rows(), x.cols())) + "]");

  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - model.mean.transpose();

  const double total = centered.squaredNorm();
  const double scale = x.cwiseAbs().maxCoeff();
  if (!(total > 0.0) || std::sqrt(total) <= 1e-14 * scale * std::sqrt(static_cast<double>(x.size())))
    throw DataError("pca_fit: input has zero total variance");

  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  const auto& sigma = svd.singularValues();
  const Matrix& v = svd.matrixV();

  model.components.resize(n_components, x.cols());
  model.explained_variance_ratio.resize(static_cast<std::size_t>(n_components));
  for (Eigen::Index k = 0; k < n_components; ++k) {
    Vector comp = v.col(k);
    Eigen::Index arg = 0;
    comp.cwiseAbs().maxCoeff(&arg);
    if (comp(arg) < 0) comp = -comp;
    model.components.row(k) = comp.transpose();
    model.explained_variance_ratio[static_cast<std::size_t>(k)] = sigma(k) * sigma(k) / total;
  }
  return model;
}

inline Matrix pca_transform(const PcaModel& model, const Matrix& x) {
  if (x.cols() != model.input_dims())
    throw DataError("pca_transform: input has " + std::to_string(x.cols()) + " columns, model expects " +
                    std::to_string(model.input_dims()));
  return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

inline Matrix pca_reconstruct(const PcaModel& model, const Matrix& projected) {
  return (projected * model.components).rowwise() + model.mean.transpose();
}

// Persisted as <prefix>.mean.matx (1 x d_raw), <prefix>.components.matx and a
// <prefix>.pca.json sidecar holding the ratios.
inline void save_pca(const PcaModel& model, const std::filesystem::path& prefix) {
  io::write_matrix(model.mean.transpose(), prefix.string() + ".mean.matx");
  io::write_matrix(model.components, prefix.string() + ".components.matx");
  nlohmann::json j{{"n_components", model.n_components()},
                   {"input_dims", model.input_dims()},
                   {"explained_variance_ratio", model.explained_variance_ratio},
                   {"retained_variance", model.retained_variance()}};
  std::ofstream out(prefix.string() + ".pca.json");
  out << j.dump(2) << '\n';
}

inline PcaModel load_pca(const std::filesystem::path& prefix) {
  PcaModel model;
  const Matrix mean = io::read_matrix(prefix.string() + ".mean.matx");
  if (mean.rows() != 1) throw DataError("pca mean file must have a single row");
  model.mean = mean.row(0).transpose();
  model.components = io::read_matrix(prefix.string() + ".components.matx");
  std::ifstream in(prefix.string() + ".pca.json");
  if (!in) throw DataError("missing " + prefix.string() + ".pca.json");
  const auto j = nlohmann::json::parse(in);
  model.explained_variance_ratio = j.at("explained_variance_ratio").get<std::vector<double>>();
  if (model.components.cols() != model.mean.size() ||
      static_cast<std::size_t>(model.components.rows()) != model.explained_variance_ratio.size())
    throw DataError("pca model files are inconsistent: " + prefix.string());
  return model;
}

}  // namespace repdecode
