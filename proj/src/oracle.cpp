#include "dho2/oracle.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "dho2/kernels.hpp"
#include "dho2/rng.hpp"

namespace dho2 {

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

Dataset::Dataset(std::size_t feature_dim, std::size_t n_classes, std::vector<double> features,
                 std::vector<double> labels, std::uint64_t shuffle_seed)
    : feature_dim_(feature_dim),
      n_classes_(n_classes),
      features_(std::move(features)),
      labels_(std::move(labels)),
      shuffle_seed_(shuffle_seed) {
  if (feature_dim_ == 0 || labels_.empty() || features_.size() != labels_.size() * feature_dim_) {
    throw ArgumentError("Dataset: inconsistent feature/label sizes");
  }
  if (!linalg::all_finite(features_)) throw NumericError("Dataset: non-finite feature");
}

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  Batch b;
  b.size = indices.size();
  b.feature_dim = feature_dim_;
  b.n_classes = n_classes_;
  b.features.resize(b.size * feature_dim_);
  b.labels.resize(b.size);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    std::copy_n(features_.begin() + static_cast<std::ptrdiff_t>(i * feature_dim_), feature_dim_,
                b.features.begin() + static_cast<std::ptrdiff_t>(k * feature_dim_));
    b.labels[k] = labels_[i];
  }
  return b;
}

Batch Dataset::full_batch() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), 0);
  return batch(idx);
}

std::vector<std::size_t> Dataset::epoch_permutation(std::uint64_t epoch) const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(shuffle_seed_ * 0x9e3779b97f4a7c15ULL + epoch + 1);
  rng.shuffle(idx);
  return idx;
}

Dataset Dataset::dummy(std::size_t n_samples) {
  if (n_samples == 0) throw ArgumentError("Dataset::dummy: need at least one sample");
  return Dataset(1, 0, std::vector<double>(n_samples, 0.0), std::vector<double>(n_samples, 0.0),
                 0);
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "two-gaussians") return DatasetKind::TwoGaussians;
  if (name == "concentric-rings") return DatasetKind::ConcentricRings;
  if (name == "linear-regression") return DatasetKind::LinearRegression;
  throw ArgumentError("unknown dataset kind: '" + std::string(name) + "'");
}

Dataset generate_synthetic_dataset(DatasetKind kind, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) throw ArgumentError("generate_synthetic_dataset: n_samples must be >= 1");
  Rng rng(seed * 0x2545f4914f6cdd1dULL + static_cast<std::uint64_t>(kind) + 1);

  switch (kind) {
    case DatasetKind::TwoGaussians: {
      // Classes alternate so the label encoding survives a CSV round trip and
      // the balance is exact to within one sample.
      std::vector<double> x(n_samples * 2);
      std::vector<double> y(n_samples);
      for (std::size_t i = 0; i < n_samples; ++i) {
        const std::size_t cls = i % 2;
        const double mean = cls == 0 ? -1.5 : 1.5;
        x[2 * i] = mean + rng.normal();
        x[2 * i + 1] = mean + rng.normal();
        y[i] = static_cast<double>(cls);
      }
      return Dataset(2, 2, std::move(x), std::move(y), seed);
    }
    case DatasetKind::ConcentricRings: {
      std::vector<double> x(n_samples * 2);
      std::vector<double> y(n_samples);
      for (std::size_t i = 0; i < n_samples; ++i) {
        const std::size_t cls = i % 2;
        const double radius = (cls == 0 ? 1.0 : 2.5) + 0.15 * rng.normal();
        const double theta = 2.0 * std::numbers::pi * rng.uniform();
        x[2 * i] = radius * std::cos(theta);
        x[2 * i + 1] = radius * std::sin(theta);
        y[i] = static_cast<double>(cls);
      }
      return Dataset(2, 2, std::move(x), std::move(y), seed);
    }
    case DatasetKind::LinearRegression: {
      constexpr std::size_t d = 3;
      Vector beta(d);
      rng.fill_normal(beta);
      std::vector<double> x(n_samples * d);
      std::vector<double> y(n_samples);
      for (std::size_t i = 0; i < n_samples; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          x[i * d + j] = rng.normal();
          dot += beta[j] * x[i * d + j];
        }
        y[i] = dot + 0.05 * rng.normal();
      }
      return Dataset(d, 0, std::move(x), std::move(y), seed);
    }
  }
  throw ArgumentError("unknown dataset kind");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_cell(const std::string& cell, std::size_t row, const std::string& col) {
  double out = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ParseError("csv: row " + std::to_string(row) + ", column '" + col + "': '" + cell +
                     "' is not numeric");
  }
  return out;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

Dataset load_csv_dataset(const std::string& path, const std::vector<std::string>& feature_cols,
                         const std::string& label_col) {
  std::ifstream in(path);
  if (!in) throw IoError("csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError("csv: missing header row in '" + path + "'");
  const auto header = split_csv_line(line);

  auto col_index = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ArgumentError("csv: no column named '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };

  const std::size_t label_idx = col_index(label_col);
  std::vector<std::size_t> feat_idx;
  if (feature_cols.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j != label_idx) feat_idx.push_back(j);
    }
  } else {
    for (const auto& name : feature_cols) feat_idx.push_back(col_index(name));
  }
  if (feat_idx.empty()) throw ArgumentError("csv: no feature columns selected");

  std::vector<double> features;
  std::vector<double> labels;
  std::vector<std::string> label_names;  // first-appearance order
  std::unordered_map<std::string, std::size_t> label_map;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("csv: row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(header.size()));
    }
    for (std::size_t j : feat_idx) features.push_back(parse_cell(cells[j], row, header[j]));
    const std::string& lbl = cells[label_idx];
    auto [it, inserted] = label_map.try_emplace(lbl, label_names.size());
    if (inserted) label_names.push_back(lbl);
    labels.push_back(static_cast<double>(it->second));
  }
  if (labels.empty()) throw ParseError("csv: no data rows in '" + path + "'");
  return Dataset(feat_idx.size(), label_names.size(), std::move(features), std::move(labels), 0);
}

void save_csv_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("csv: cannot write '" + path + "'");
  for (std::size_t j = 0; j < ds.feature_dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.feature_dim(); ++j) {
      out << format_double(ds.features()[i * ds.feature_dim() + j]) << ',';
    }
    out << format_double(ds.labels()[i]) << '\n';
  }
  if (!out) throw IoError("csv: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// QuadraticOracle
// ---------------------------------------------------------------------------

QuadraticOracle::QuadraticOracle(Vector spectrum, std::uint64_t rotation_seed)
    : spectrum_(std::move(spectrum)) {
  if (spectrum_.empty()) throw ArgumentError("quadratic oracle: empty spectrum");
  for (double s : spectrum_) {
    if (s == 0.0 || !std::isfinite(s)) {
      throw ArgumentError("quadratic oracle: spectrum entries must be nonzero and finite");
    }
  }
  if (rotation_seed != 0) {
    const std::size_t n = spectrum_.size();
    q_ = TallMatrix(n, n);
    Rng rng(rotation_seed * 0x9e3779b97f4a7c15ULL);
    rng.fill_normal(q_.data());
    // Gram-Schmidt with a second pass; n is desk-scale here.
    for (std::size_t j = 0; j < n; ++j) {
      auto col = q_.col(j);
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < j; ++i) {
          const double c = linalg::dot(q_.col(i), col);
          linalg::axpy(-c, q_.col(i), col);
        }
      }
      const double nrm = linalg::norm2(col);
      if (nrm < 1e-12) throw NumericError("quadratic oracle: degenerate rotation draw");
      linalg::scale(col, 1.0 / nrm);
    }
  }
}

Vector QuadraticOracle::apply_h(const Vector& x) const {
  if (x.size() != spectrum_.size()) throw DimensionError("quadratic oracle: dimension mismatch");
  if (q_.rows() == 0) {
    Vector out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = spectrum_[i] * x[i];
    return out;
  }
  Vector qx = linalg::matvec(q_, x);
  for (std::size_t i = 0; i < qx.size(); ++i) qx[i] *= spectrum_[i];
  return linalg::matvec_transpose(q_, qx);
}

double QuadraticOracle::value(const Vector& w, const Batch&) const {
  return 0.5 * linalg::dot(w, apply_h(w));
}

Vector QuadraticOracle::grad(const Vector& w, const Batch&) const { return apply_h(w); }

Vector QuadraticOracle::hvp(const Vector&, const Vector& v, const Batch&) const {
  return apply_h(v);
}

std::unique_ptr<Oracle> make_quadratic_oracle(Vector spectrum, std::uint64_t rotation_seed) {
  return std::make_unique<QuadraticOracle>(std::move(spectrum), rotation_seed);
}

// ---------------------------------------------------------------------------
// MlpOracle
// ---------------------------------------------------------------------------

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw ArgumentError("activation: expected tanh|relu, got '" + std::string(name) + "'");
}

LossKind parse_loss(std::string_view name) {
  if (name == "mse") return LossKind::Mse;
  if (name == "softmax_ce") return LossKind::SoftmaxCrossEntropy;
  throw ArgumentError("loss: expected mse|softmax_ce, got '" + std::string(name) + "'");
}

MlpOracle::MlpOracle(std::vector<std::size_t> layer_sizes, Activation activation, LossKind loss)
    : layer_sizes_(std::move(layer_sizes)), activation_(activation), loss_(loss) {
  if (layer_sizes_.size() < 3) {
    throw ArgumentError("mlp oracle: need at least one hidden layer");
  }
  for (std::size_t s : layer_sizes_) {
    if (s == 0) throw ArgumentError("mlp oracle: zero layer size");
  }
  std::size_t off = 0;
  for (std::size_t t = 0; t + 1 < layer_sizes_.size(); ++t) {
    Layer l;
    l.in = layer_sizes_[t];
    l.out = layer_sizes_[t + 1];
    l.w_off = off;
    off += l.in * l.out;
    l.b_off = off;
    off += l.out;
    layers_.push_back(l);
  }
  dim_ = off;
}

void MlpOracle::check_batch(const Batch& batch) const {
  if (batch.size == 0) throw ArgumentError("mlp oracle: empty batch");
  if (batch.feature_dim != layer_sizes_.front()) {
    throw ArgumentError("mlp oracle: batch feature_dim != input layer size");
  }
  const std::size_t out = layer_sizes_.back();
  if (loss_ == LossKind::SoftmaxCrossEntropy) {
    if (batch.n_classes == 0 || batch.n_classes != out) {
      throw ArgumentError("mlp oracle: softmax_ce needs n_classes == output layer size");
    }
  } else if (batch.n_classes > 0) {
    if (batch.n_classes != out) {
      throw ArgumentError("mlp oracle: mse one-hot targets need n_classes == output layer size");
    }
  } else if (out != 1) {
    throw ArgumentError("mlp oracle: regression targets need output layer size 1");
  }
}

namespace {

struct MlpScratch {
  std::vector<Vector> a;       // activations, index 0..L
  std::vector<Vector> delta;   // index 1..L
  std::vector<Vector> ra;      // R{activation}
  std::vector<Vector> rdelta;  // R{delta}
  Vector target;

  explicit MlpScratch(const std::vector<std::size_t>& sizes) {
    a.reserve(sizes.size());
    for (std::size_t s : sizes) a.emplace_back(s, 0.0);
    delta = a;
    ra = a;
    rdelta = a;
    target.assign(sizes.back(), 0.0);
  }
};

inline double act_apply(Activation act, double z) {
  return act == Activation::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

inline double act_prime(Activation act, double a) {
  return act == Activation::Tanh ? 1.0 - a * a : (a > 0.0 ? 1.0 : 0.0);
}

// chunk-parallel accumulation; chunk boundaries are fixed so the merge order
// (and therefore the result bits) never depends on the thread count
template <typename PerChunk>
void for_chunks(std::size_t n_samples, PerChunk&& body) {
  const std::size_t n_chunks = kernels::chunk_count(n_samples, kernels::kBatchChunk);
  kernels::parallel_for(n_chunks, [&](std::size_t c) {
    const std::size_t begin = c * kernels::kBatchChunk;
    const std::size_t end = std::min(begin + kernels::kBatchChunk, n_samples);
    body(c, begin, end);
  });
}

}  // namespace

Vector MlpOracle::init_params(std::uint64_t seed) const {
  Vector w(dim_, 0.0);
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 17);
  for (const Layer& l : layers_) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (std::size_t k = 0; k < l.in * l.out; ++k) w[l.w_off + k] = stddev * rng.normal();
  }
  return w;
}

// Everything below works per sample with offsets into the flattened parameter
// vector; layer t maps a[t] (size in) to a[t+1] (size out), output layer
// linear.

double MlpOracle::value(const Vector& w, const Batch& batch) const {
  if (w.size() != dim_) throw DimensionError("mlp oracle: parameter length mismatch");
  check_batch(batch);
  const std::size_t n_chunks = kernels::chunk_count(batch.size, kernels::kBatchChunk);
  std::vector<double> partial(n_chunks, 0.0);
  const std::size_t n_layers = layers_.size();

  for_chunks(batch.size, [&](std::size_t c, std::size_t begin, std::size_t end) {
    MlpScratch s(layer_sizes_);
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      std::copy_n(batch.features.begin() + static_cast<std::ptrdiff_t>(i * batch.feature_dim),
                  batch.feature_dim, s.a[0].begin());
      for (std::size_t t = 0; t < n_layers; ++t) {
        const Layer& l = layers_[t];
        const bool output_layer = t + 1 == n_layers;
        for (std::size_t o = 0; o < l.out; ++o) {
          double z = w[l.b_off + o];
          for (std::size_t k = 0; k < l.in; ++k) z += w[l.w_off + o * l.in + k] * s.a[t][k];
          s.a[t + 1][o] = output_layer ? z : act_apply(activation_, z);
        }
      }
      const Vector& out = s.a.back();
      if (loss_ == LossKind::SoftmaxCrossEntropy) {
        const auto lbl = static_cast<std::size_t>(batch.labels[i]);
        double m = out[0];
        for (double v : out) m = std::max(m, v);
        double lse = 0.0;
        for (double v : out) lse += std::exp(v - m);
        acc += m + std::log(lse) - out[lbl];
      } else {
        std::fill(s.target.begin(), s.target.end(), 0.0);
        if (batch.n_classes > 0) {
          s.target[static_cast<std::size_t>(batch.labels[i])] = 1.0;
        } else {
          s.target[0] = batch.labels[i];
        }
        for (std::size_t o = 0; o < out.size(); ++o) {
          const double d = out[o] - s.target[o];
          acc += 0.5 * d * d;
        }
      }
    }
    partial[c] = acc;
  });

  double total = 0.0;
  for (double p : partial) total += p;
  return total / static_cast<double>(batch.size);
}

Vector MlpOracle::grad(const Vector& w, const Batch& batch) const {
  if (w.size() != dim_) throw DimensionError("mlp oracle: parameter length mismatch");
  check_batch(batch);
  const std::size_t n_chunks = kernels::chunk_count(batch.size, kernels::kBatchChunk);
  std::vector<Vector> partial(n_chunks, Vector(dim_, 0.0));
  const double inv_b = 1.0 / static_cast<double>(batch.size);
  const std::size_t n_layers = layers_.size();

  for_chunks(batch.size, [&](std::size_t c, std::size_t begin, std::size_t end) {
    MlpScratch s(layer_sizes_);
    Vector& g = partial[c];
    for (std::size_t i = begin; i < end; ++i) {
      std::copy_n(batch.features.begin() + static_cast<std::ptrdiff_t>(i * batch.feature_dim),
                  batch.feature_dim, s.a[0].begin());
      for (std::size_t t = 0; t < n_layers; ++t) {
        const Layer& l = layers_[t];
        const bool output_layer = t + 1 == n_layers;
        for (std::size_t o = 0; o < l.out; ++o) {
          double z = w[l.b_off + o];
          for (std::size_t k = 0; k < l.in; ++k) z += w[l.w_off + o * l.in + k] * s.a[t][k];
          s.a[t + 1][o] = output_layer ? z : act_apply(activation_, z);
        }
      }

      // output-layer delta
      Vector& dl = s.delta[n_layers];
      const Vector& out = s.a[n_layers];
      if (loss_ == LossKind::SoftmaxCrossEntropy) {
        const auto lbl = static_cast<std::size_t>(batch.labels[i]);
        double m = out[0];
        for (double v : out) m = std::max(m, v);
        double denom = 0.0;
        for (std::size_t o = 0; o < out.size(); ++o) denom += std::exp(out[o] - m);
        for (std::size_t o = 0; o < out.size(); ++o) {
          dl[o] = (std::exp(out[o] - m) / denom - (o == lbl ? 1.0 : 0.0)) * inv_b;
        }
      } else {
        std::fill(s.target.begin(), s.target.end(), 0.0);
        if (batch.n_classes > 0) {
          s.target[static_cast<std::size_t>(batch.labels[i])] = 1.0;
        } else {
          s.target[0] = batch.labels[i];
        }
        for (std::size_t o = 0; o < out.size(); ++o) dl[o] = (out[o] - s.target[o]) * inv_b;
      }

      for (std::size_t t = n_layers; t-- > 0;) {
        const Layer& l = layers_[t];
        const Vector& d = s.delta[t + 1];
        for (std::size_t o = 0; o < l.out; ++o) {
          const double dv = d[o];
          for (std::size_t k = 0; k < l.in; ++k) g[l.w_off + o * l.in + k] += dv * s.a[t][k];
          g[l.b_off + o] += dv;
        }
        if (t > 0) {
          Vector& dprev = s.delta[t];
          for (std::size_t k = 0; k < l.in; ++k) {
            double u = 0.0;
            for (std::size_t o = 0; o < l.out; ++o) u += w[l.w_off + o * l.in + k] * d[o];
            dprev[k] = u * act_prime(activation_, s.a[t][k]);
          }
        }
      }
    }
  });

  Vector g(dim_, 0.0);
  for (const Vector& p : partial) {
    for (std::size_t i = 0; i < dim_; ++i) g[i] += p[i];
  }
  return g;
}

Vector MlpOracle::hvp(const Vector& w, const Vector& v, const Batch& batch) const {
  if (w.size() != dim_ || v.size() != dim_) {
    throw DimensionError("mlp oracle: parameter length mismatch");
  }
  check_batch(batch);
  const std::size_t n_chunks = kernels::chunk_count(batch.size, kernels::kBatchChunk);
  std::vector<Vector> partial(n_chunks, Vector(dim_, 0.0));
  const double inv_b = 1.0 / static_cast<double>(batch.size);
  const std::size_t n_layers = layers_.size();
  const bool tanh_act = activation_ == Activation::Tanh;

  for_chunks(batch.size, [&](std::size_t c, std::size_t begin, std::size_t end) {
    MlpScratch s(layer_sizes_);
    Vector& hv = partial[c];
    for (std::size_t i = begin; i < end; ++i) {
      std::copy_n(batch.features.begin() + static_cast<std::ptrdiff_t>(i * batch.feature_dim),
                  batch.feature_dim, s.a[0].begin());
      std::fill(s.ra[0].begin(), s.ra[0].end(), 0.0);

      // forward + R-forward
      for (std::size_t t = 0; t < n_layers; ++t) {
        const Layer& l = layers_[t];
        const bool output_layer = t + 1 == n_layers;
        for (std::size_t o = 0; o < l.out; ++o) {
          double z = w[l.b_off + o];
          double rz = v[l.b_off + o];
          for (std::size_t k = 0; k < l.in; ++k) {
            const double wk = w[l.w_off + o * l.in + k];
            const double vk = v[l.w_off + o * l.in + k];
            z += wk * s.a[t][k];
            rz += vk * s.a[t][k] + wk * s.ra[t][k];
          }
          if (output_layer) {
            s.a[t + 1][o] = z;
            s.ra[t + 1][o] = rz;
          } else {
            const double a = act_apply(activation_, z);
            s.a[t + 1][o] = a;
            s.ra[t + 1][o] = act_prime(activation_, a) * rz;
          }
        }
      }

      // output-layer delta and R{delta}
      Vector& dl = s.delta[n_layers];
      Vector& rdl = s.rdelta[n_layers];
      const Vector& out = s.a[n_layers];
      const Vector& rout = s.ra[n_layers];
      if (loss_ == LossKind::SoftmaxCrossEntropy) {
        const auto lbl = static_cast<std::size_t>(batch.labels[i]);
        double m = out[0];
        for (double x : out) m = std::max(m, x);
        double denom = 0.0;
        for (std::size_t o = 0; o < out.size(); ++o) denom += std::exp(out[o] - m);
        double sdot = 0.0;  // softmax . R{z}
        for (std::size_t o = 0; o < out.size(); ++o) {
          const double soft = std::exp(out[o] - m) / denom;
          dl[o] = (soft - (o == lbl ? 1.0 : 0.0)) * inv_b;
          s.target[o] = soft;  // reuse target as softmax scratch
          sdot += soft * rout[o];
        }
        for (std::size_t o = 0; o < out.size(); ++o) {
          rdl[o] = s.target[o] * (rout[o] - sdot) * inv_b;
        }
      } else {
        std::fill(s.target.begin(), s.target.end(), 0.0);
        if (batch.n_classes > 0) {
          s.target[static_cast<std::size_t>(batch.labels[i])] = 1.0;
        } else {
          s.target[0] = batch.labels[i];
        }
        for (std::size_t o = 0; o < out.size(); ++o) {
          dl[o] = (out[o] - s.target[o]) * inv_b;
          rdl[o] = rout[o] * inv_b;
        }
      }

      // backward + R-backward
      for (std::size_t t = n_layers; t-- > 0;) {
        const Layer& l = layers_[t];
        const Vector& d = s.delta[t + 1];
        const Vector& rd = s.rdelta[t + 1];
        for (std::size_t o = 0; o < l.out; ++o) {
          const double dv = d[o];
          const double rdv = rd[o];
          for (std::size_t k = 0; k < l.in; ++k) {
            hv[l.w_off + o * l.in + k] += rdv * s.a[t][k] + dv * s.ra[t][k];
          }
          hv[l.b_off + o] += rdv;
        }
        if (t > 0) {
          Vector& dprev = s.delta[t];
          Vector& rdprev = s.rdelta[t];
          for (std::size_t k = 0; k < l.in; ++k) {
            double u = 0.0;
            double ru = 0.0;
            for (std::size_t o = 0; o < l.out; ++o) {
              const double wk = w[l.w_off + o * l.in + k];
              const double vk = v[l.w_off + o * l.in + k];
              u += wk * d[o];
              ru += vk * d[o] + wk * rd[o];
            }
            const double a = s.a[t][k];
            const double ap = act_prime(activation_, a);
            dprev[k] = u * ap;
            // R{act'(z)} = act''(z) R{z}; for tanh act'' = -2 a (1 - a^2),
            // and R{z} = R{a}/act'(z) was folded into ra already
            double rap_rz = 0.0;
            if (tanh_act && ap != 0.0) {
              rap_rz = -2.0 * a * s.ra[t][k];  // (-2 a act') * (ra / act')
            }
            rdprev[k] = ru * ap + u * rap_rz;
          }
        }
      }
    }
  });

  Vector hv(dim_, 0.0);
  for (const Vector& p : partial) {
    for (std::size_t i = 0; i < dim_; ++i) hv[i] += p[i];
  }
  return hv;
}

std::optional<double> MlpOracle::accuracy(const Vector& w, const Batch& batch) const {
  if (batch.n_classes == 0) return std::nullopt;
  if (w.size() != dim_) throw DimensionError("mlp oracle: parameter length mismatch");
  check_batch(batch);
  const std::size_t n_chunks = kernels::chunk_count(batch.size, kernels::kBatchChunk);
  std::vector<std::size_t> partial(n_chunks, 0);
  const std::size_t n_layers = layers_.size();

  for_chunks(batch.size, [&](std::size_t c, std::size_t begin, std::size_t end) {
    MlpScratch s(layer_sizes_);
    std::size_t correct = 0;
    for (std::size_t i = begin; i < end; ++i) {
      std::copy_n(batch.features.begin() + static_cast<std::ptrdiff_t>(i * batch.feature_dim),
                  batch.feature_dim, s.a[0].begin());
      for (std::size_t t = 0; t < n_layers; ++t) {
        const Layer& l = layers_[t];
        const bool output_layer = t + 1 == n_layers;
        for (std::size_t o = 0; o < l.out; ++o) {
          double z = w[l.b_off + o];
          for (std::size_t k = 0; k < l.in; ++k) z += w[l.w_off + o * l.in + k] * s.a[t][k];
          s.a[t + 1][o] = output_layer ? z : act_apply(activation_, z);
        }
      }
      const Vector& out = s.a[n_layers];
      std::size_t best = 0;
      for (std::size_t o = 1; o < out.size(); ++o) {
        if (out[o] > out[best]) best = o;
      }
      if (best == static_cast<std::size_t>(batch.labels[i])) ++correct;
    }
    partial[c] = correct;
  });

  std::size_t correct = 0;
  for (std::size_t p : partial) correct += p;
  return static_cast<double>(correct) / static_cast<double>(batch.size);
}

}  // namespace dho2
