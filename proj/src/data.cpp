#include "clc/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clc/version.hpp"

namespace clc {

std::size_t Dataset::num_classes() const {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return static_cast<std::size_t>(mx + 1);
}

Dataset gen_gaussian_mixture(std::size_t k, std::size_t per_cluster, std::size_t dim,
                             double separation, std::uint64_t seed) {
  if (k < 2) throw ConfigError("gen_gaussian_mixture: need k >= 2");
  if (per_cluster == 0 || dim == 0) throw ConfigError("gen_gaussian_mixture: empty shape");
  if (separation < 0.0) throw ConfigError("gen_gaussian_mixture: separation must be >= 0");
  Rng rng(seed);
  // Means: separation * random unit direction per cluster.
  Matrix means(k, dim);
  for (std::size_t c = 0; c < k; ++c) {
    double ss = 0.0;
    std::vector<double> dir(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      dir[j] = rng.normal();
      ss += dir[j] * dir[j];
    }
    const double norm = std::sqrt(ss);
    for (std::size_t j = 0; j < dim; ++j) {
      means(c, j) = norm == 0.0 ? 0.0 : separation * dir[j] / norm;
    }
  }
  Dataset ds;
  ds.features = Matrix(k * per_cluster, dim);
  ds.labels.resize(k * per_cluster);
  std::size_t row = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < per_cluster; ++i, ++row) {
      for (std::size_t j = 0; j < dim; ++j) {
        ds.features(row, j) = means(c, j) + rng.normal();
      }
      ds.labels[row] = static_cast<int>(c);
    }
  }
  std::ostringstream name;
  name << "gmm_k" << k << "_n" << per_cluster << "_d" << dim << "_sep" << separation;
  ds.name = name.str();
  return ds;
}

Dataset gen_rings(std::size_t k, std::size_t per_ring, double noise, std::uint64_t seed) {
  if (k < 2) throw ConfigError("gen_rings: need k >= 2");
  if (per_ring == 0) throw ConfigError("gen_rings: empty shape");
  if (noise < 0.0) throw ConfigError("gen_rings: noise must be >= 0");
  Rng rng(seed);
  Dataset ds;
  ds.features = Matrix(k * per_ring, 2);
  ds.labels.resize(k * per_ring);
  std::size_t row = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double radius = static_cast<double>(c + 1);  // equally spaced radii
    for (std::size_t i = 0; i < per_ring; ++i, ++row) {
      const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      const double r = radius + noise * rng.normal();
      ds.features(row, 0) = r * std::cos(theta);
      ds.features(row, 1) = r * std::sin(theta);
      ds.labels[row] = static_cast<int>(c);
    }
  }
  std::ostringstream name;
  name << "rings_k" << k << "_n" << per_ring << "_noise" << noise;
  ds.name = name.str();
  return ds;
}

namespace {

double parse_cell(const std::string& cell, std::size_t line_no) {
  double v = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || ptr != end) {
    throw ParseError("csv line " + std::to_string(line_no) + ": non-numeric cell '" + cell +
                     "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, bool has_labels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string cell = line.substr(start, comma == std::string::npos
                                                      ? std::string::npos
                                                      : comma - start);
      row.push_back(parse_cell(cell, line_no));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (width == 0) {
      width = row.size();
    } else if (row.size() != width) {
      throw ParseError("csv line " + std::to_string(line_no) + ": expected " +
                       std::to_string(width) + " cells, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("csv: no data rows in " + path.string());
  if (has_labels && width < 2) {
    throw ParseError("csv: label column requested but only one column present");
  }
  const std::size_t d = has_labels ? width - 1 : width;
  Dataset ds;
  ds.features = Matrix(rows.size(), d);
  if (has_labels) ds.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) ds.features(i, j) = rows[i][j];
    if (has_labels) {
      const double l = rows[i][width - 1];
      const int li = static_cast<int>(std::llround(l));
      if (li < 0 || std::abs(l - li) > 1e-9) {
        throw ParseError("csv line " + std::to_string(i + 1) +
                         ": label must be a nonnegative integer");
      }
      ds.labels[i] = li;
    }
  }
  ensure_finite(ds.features, "load_csv");
  ds.name = path.stem().string();
  return ds;
}

void save_csv(const std::filesystem::path& path, const Dataset& ds, bool with_labels) {
  if (with_labels && !ds.has_labels()) {
    throw ContractError("save_csv: dataset has no labels");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (std::size_t i = 0; i < ds.features.rows(); ++i) {
    for (std::size_t j = 0; j < ds.features.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_double(ds.features(i, j));
    }
    if (with_labels) out << ',' << ds.labels[i];
    out << '\n';
  }
  if (!out) throw IoError("csv write failed: " + path.string());
}

void save_dataset_meta(const std::filesystem::path& csv_path, const Dataset& ds,
                       std::size_t k_true, std::uint64_t seed) {
  nlohmann::json meta{
      {"name", ds.name},
      {"n", ds.size()},
      {"d", ds.dim()},
      {"k_true", k_true},
      {"seed", seed},
      {"version", kVersion},
  };
  std::filesystem::path meta_path = csv_path;
  meta_path += ".meta.json";
  std::ofstream out(meta_path);
  if (!out) throw IoError("cannot open for writing: " + meta_path.string());
  out << meta.dump(2) << '\n';
}

Matrix augment(const Matrix& x, const AugmentationPolicy& policy, Rng& rng) {
  if (policy.noise_sigma < 0.0 || policy.dropout_rate < 0.0 || policy.dropout_rate >= 1.0 ||
      policy.scale_jitter < 0.0) {
    throw ConfigError("augment: invalid policy parameters");
  }
  Matrix out = x;
  if (policy.noise_sigma > 0.0) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out.data()[i] += policy.noise_sigma * rng.normal();
    }
  }
  if (policy.kind == AugmentationPolicy::Kind::kStrong) {
    if (policy.dropout_rate > 0.0) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (rng.uniform() < policy.dropout_rate) out.data()[i] = 0.0;
      }
    }
    if (policy.scale_jitter > 0.0) {
      for (std::size_t i = 0; i < out.rows(); ++i) {
        const double factor = 1.0 + rng.uniform(-policy.scale_jitter, policy.scale_jitter);
        for (double& v : out.row(i)) v *= factor;
      }
    }
  }
  return out;
}

std::pair<Matrix, Matrix> two_views(const Matrix& x, const AugmentationPolicy& policy,
                                    Rng& rng) {
  Matrix q = augment(x, policy, rng);
  Matrix k = augment(x, policy, rng);
  return {std::move(q), std::move(k)};
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double holdout_fraction,
                                             Rng& rng) {
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("stratified_split: fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> train_idx, hold_idx;
  if (ds.has_labels()) {
    const std::size_t k = ds.num_classes();
    std::vector<std::vector<std::size_t>> buckets(k);
    for (std::size_t i = 0; i < ds.size(); ++i) buckets[ds.labels[i]].push_back(i);
    for (auto& bucket : buckets) {
      rng.shuffle(bucket);
      const std::size_t n_hold =
          static_cast<std::size_t>(std::llround(holdout_fraction * bucket.size()));
      for (std::size_t i = 0; i < bucket.size(); ++i) {
        (i < n_hold ? hold_idx : train_idx).push_back(bucket[i]);
      }
    }
  } else {
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    rng.shuffle(all);
    const std::size_t n_hold =
        static_cast<std::size_t>(std::llround(holdout_fraction * all.size()));
    hold_idx.assign(all.begin(), all.begin() + n_hold);
    train_idx.assign(all.begin() + n_hold, all.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(hold_idx.begin(), hold_idx.end());
  auto take = [&](const std::vector<std::size_t>& idx, const std::string& suffix) {
    Dataset out;
    out.features = Matrix(idx.size(), ds.dim());
    if (ds.has_labels()) out.labels.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < ds.dim(); ++j) out.features(i, j) = ds.features(idx[i], j);
      if (ds.has_labels()) out.labels[i] = ds.labels[idx[i]];
    }
    out.name = ds.name + suffix;
    return out;
  };
  return {take(train_idx, "_train"), take(hold_idx, "_holdout")};
}

}  // namespace clc
