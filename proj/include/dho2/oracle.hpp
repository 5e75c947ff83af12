#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dho2/linalg.hpp"

namespace dho2 {

/// A batch of samples. Labels hold class indices for classification
/// (n_classes > 0) or scalar regression targets (n_classes == 0).
struct Batch {
  std::size_t size = 0;
  std::size_t feature_dim = 0;
  std::vector<double> features;  // row-major size x feature_dim
  std::vector<double> labels;    // length size
  std::size_t n_classes = 0;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t feature_dim, std::size_t n_classes, std::vector<double> features,
          std::vector<double> labels, std::uint64_t shuffle_seed);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t n_classes() const noexcept { return n_classes_; }
  const std::vector<double>& features() const noexcept { return features_; }
  const std::vector<double>& labels() const noexcept { return labels_; }
  std::uint64_t shuffle_seed() const noexcept { return shuffle_seed_; }

  Batch batch(std::span<const std::size_t> indices) const;
  Batch full_batch() const;

  /// Deterministic per-epoch sample order shared by all workers.
  std::vector<std::size_t> epoch_permutation(std::uint64_t epoch) const;

  /// Stand-in dataset for problems that have no data (quadratics). One
  /// identical sample per worker keeps the batch plan trivial.
  static Dataset dummy(std::size_t n_samples = 1);

 private:
  std::size_t feature_dim_ = 0;
  std::size_t n_classes_ = 0;
  std::vector<double> features_;
  std::vector<double> labels_;
  std::uint64_t shuffle_seed_ = 0;
};

enum class DatasetKind { TwoGaussians, ConcentricRings, LinearRegression };

DatasetKind parse_dataset_kind(std::string_view name);

Dataset generate_synthetic_dataset(DatasetKind kind, std::size_t n_samples, std::uint64_t seed);

/// CSV with a header row; features must parse as decimal floats. Label values
/// are mapped to 0..K-1 in order of first appearance. An empty `feature_cols`
/// selects every non-label column in header order.
Dataset load_csv_dataset(const std::string& path, const std::vector<std::string>& feature_cols,
                         const std::string& label_col);

void save_csv_dataset(const Dataset& ds, const std::string& path);

/// Objective-function oracle: value, stochastic gradient, and Hessian-vector
/// product on a batch. Implementations are pure in (w, v, batch).
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual std::size_t dim() const = 0;
  virtual double value(const Vector& w, const Batch& batch) const = 0;
  virtual Vector grad(const Vector& w, const Batch& batch) const = 0;
  virtual Vector hvp(const Vector& w, const Vector& v, const Batch& batch) const = 0;
  virtual std::optional<double> accuracy(const Vector&, const Batch&) const { return std::nullopt; }
};

/// f(w) = 1/2 w^T H w with H = Q^T diag(spectrum) Q. Q is a seeded random
/// rotation; rotation_seed == 0 keeps H diagonal. Batch-independent.
class QuadraticOracle final : public Oracle {
 public:
  QuadraticOracle(Vector spectrum, std::uint64_t rotation_seed);

  std::size_t dim() const override { return spectrum_.size(); }
  double value(const Vector& w, const Batch& batch) const override;
  Vector grad(const Vector& w, const Batch& batch) const override;
  Vector hvp(const Vector& w, const Vector& v, const Batch& batch) const override;

  Vector apply_h(const Vector& x) const;
  const Vector& spectrum() const noexcept { return spectrum_; }
  bool rotated() const noexcept { return q_.rows() != 0; }
  const TallMatrix& rotation() const noexcept { return q_; }

 private:
  Vector spectrum_;
  TallMatrix q_;  // empty when rotation_seed == 0
};

enum class Activation { Tanh, Relu };
enum class LossKind { Mse, SoftmaxCrossEntropy };

Activation parse_activation(std::string_view name);
LossKind parse_loss(std::string_view name);

/// Fully-connected network over the flattened parameter vector. The layout is
/// canonical: layer-major, weights before biases, row-major weight matrices.
/// Gradients come from reverse-mode backpropagation; hvp uses Pearlmutter's
/// forward-over-reverse rule on the same batch.
class MlpOracle final : public Oracle {
 public:
  MlpOracle(std::vector<std::size_t> layer_sizes, Activation activation, LossKind loss);

  std::size_t dim() const override { return dim_; }
  double value(const Vector& w, const Batch& batch) const override;
  Vector grad(const Vector& w, const Batch& batch) const override;
  Vector hvp(const Vector& w, const Vector& v, const Batch& batch) const override;
  std::optional<double> accuracy(const Vector& w, const Batch& batch) const override;

  Vector init_params(std::uint64_t seed) const;
  const std::vector<std::size_t>& layer_sizes() const noexcept { return layer_sizes_; }

 private:
  struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t w_off = 0;
    std::size_t b_off = 0;
  };

  void check_batch(const Batch& batch) const;

  std::vector<std::size_t> layer_sizes_;
  std::vector<Layer> layers_;
  Activation activation_;
  LossKind loss_;
  std::size_t dim_ = 0;
};

std::unique_ptr<Oracle> make_quadratic_oracle(Vector spectrum, std::uint64_t rotation_seed);

}  // namespace dho2
