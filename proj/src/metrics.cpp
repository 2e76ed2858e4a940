#include "clc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "clc/losses.hpp"

namespace clc {

namespace {

void check_labels(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.empty() || truth.empty()) throw ContractError("metrics: empty label sequence");
  if (pred.size() != truth.size()) throw ContractError("metrics: label lengths differ");
  for (int v : pred) {
    if (v < 0) throw ContractError("metrics: negative label");
  }
  for (int v : truth) {
    if (v < 0) throw ContractError("metrics: negative label");
  }
}

// Classic O(n^3) assignment with potentials; returns the minimum total cost
// matching row -> column of a square cost matrix.
std::vector<int> solve_assignment_min(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

double entropy_of_counts(const std::vector<long long>& counts, long long n) {
  double h = 0.0;
  for (long long c : counts) {
    if (c > 0) {
      const double p = static_cast<double>(c) / static_cast<double>(n);
      h -= p * std::log(p);
    }
  }
  return h;
}

}  // namespace

ContingencyTable contingency(const std::vector<int>& pred, const std::vector<int>& truth) {
  check_labels(pred, truth);
  int kp = 0, kt = 0;
  for (int v : pred) kp = std::max(kp, v + 1);
  for (int v : truth) kt = std::max(kt, v + 1);
  ContingencyTable table;
  table.counts.assign(kp, std::vector<long long>(kt, 0));
  table.n = pred.size();
  for (std::size_t i = 0; i < pred.size(); ++i) ++table.counts[pred[i]][truth[i]];
  return table;
}

double hungarian_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  const ContingencyTable table = contingency(pred, truth);
  const std::size_t kp = table.counts.size();
  const std::size_t kt = table.counts[0].size();
  const std::size_t n = std::max(kp, kt);  // pad rectangular tables with zeros
  Matrix cost(n, n);
  for (std::size_t i = 0; i < kp; ++i) {
    for (std::size_t j = 0; j < kt; ++j) {
      cost(i, j) = -static_cast<double>(table.counts[i][j]);
    }
  }
  const std::vector<int> match = solve_assignment_min(cost);
  long long hits = 0;
  for (std::size_t i = 0; i < kp; ++i) {
    const int j = match[i];
    if (j >= 0 && static_cast<std::size_t>(j) < kt) hits += table.counts[i][j];
  }
  return static_cast<double>(hits) / static_cast<double>(table.n);
}

double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
  const ContingencyTable table = contingency(pred, truth);
  const std::size_t kp = table.counts.size();
  const std::size_t kt = table.counts[0].size();
  const long long n = static_cast<long long>(table.n);
  std::vector<long long> a(kp, 0), b(kt, 0);
  for (std::size_t i = 0; i < kp; ++i) {
    for (std::size_t j = 0; j < kt; ++j) {
      a[i] += table.counts[i][j];
      b[j] += table.counts[i][j];
    }
  }
  const double hp = entropy_of_counts(a, n);
  const double ht = entropy_of_counts(b, n);
  if (hp + ht == 0.0) return 1.0;  // both partitions constant: identical structure
  double mi = 0.0;
  for (std::size_t i = 0; i < kp; ++i) {
    for (std::size_t j = 0; j < kt; ++j) {
      const long long c = table.counts[i][j];
      if (c == 0) continue;
      const double pij = static_cast<double>(c) / static_cast<double>(n);
      mi += pij * std::log(static_cast<double>(c) * static_cast<double>(n) /
                           (static_cast<double>(a[i]) * static_cast<double>(b[j])));
    }
  }
  return 2.0 * mi / (hp + ht);
}

double ari(const std::vector<int>& pred, const std::vector<int>& truth) {
  const ContingencyTable table = contingency(pred, truth);
  if (table.n < 2) throw ContractError("ari: need at least two samples");
  const std::size_t kp = table.counts.size();
  const std::size_t kt = table.counts[0].size();
  auto choose2 = [](long long x) { return 0.5 * static_cast<double>(x) * (x - 1); };
  std::vector<long long> a(kp, 0), b(kt, 0);
  double sum_ij = 0.0;
  for (std::size_t i = 0; i < kp; ++i) {
    for (std::size_t j = 0; j < kt; ++j) {
      a[i] += table.counts[i][j];
      b[j] += table.counts[i][j];
      sum_ij += choose2(table.counts[i][j]);
    }
  }
  double sum_a = 0.0, sum_b = 0.0;
  for (long long x : a) sum_a += choose2(x);
  for (long long x : b) sum_b += choose2(x);
  const double total = choose2(static_cast<long long>(table.n));
  const double expected = sum_a * sum_b / total;
  const double maximum = 0.5 * (sum_a + sum_b);
  if (maximum == expected) return 1.0;  // both partitions pair-trivial and identical
  return (sum_ij - expected) / (maximum - expected);
}

double assignment_entropy(const std::vector<int>& pred, std::size_t k) {
  if (pred.empty()) throw ContractError("assignment_entropy: empty predictions");
  if (k == 0) throw ContractError("assignment_entropy: k must be positive");
  std::vector<long long> counts(k, 0);
  for (int v : pred) {
    if (v < 0 || static_cast<std::size_t>(v) >= k) {
      throw ContractError("assignment_entropy: prediction outside [0, k)");
    }
    ++counts[v];
  }
  return entropy_of_counts(counts, static_cast<long long>(pred.size()));
}

namespace {

double dot_row(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += a(i, c) * b(j, c);
  return s;
}

SimilarityCell cell_from(const std::vector<double>& values) {
  SimilarityCell cell;
  cell.pairs = values.size();
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  cell.mean = mean;
  cell.stddev = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
  return cell;
}

}  // namespace

SimilarityStats similarity_stats(const MlpSpec& spec, const Params& params, const Dataset& ds,
                                 const AugmentationPolicy& policy, Rng& rng,
                                 std::size_t max_pairs_per_class) {
  if (!ds.has_labels()) throw ContractError("similarity_stats: dataset must be labeled");
  if (max_pairs_per_class == 0) throw ContractError("similarity_stats: zero pair budget");
  const std::size_t n = ds.size();

  const Representation clean = forward(spec, params, ds.features);
  auto [vq, vk] = two_views(ds.features, policy, rng);
  const Representation rep_q = forward(spec, params, vq);
  const Representation rep_k = forward(spec, params, vk);

  SimilarityStats stats;

  // Augmented: same instance, two views.
  {
    std::vector<std::size_t> idx;
    if (n <= max_pairs_per_class) {
      idx.resize(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    } else {
      idx.resize(max_pairs_per_class);
      for (auto& v : idx) v = rng.uniform_index(n);
    }
    std::vector<double> c_vals, n_vals;
    c_vals.reserve(idx.size());
    n_vals.reserve(idx.size());
    for (std::size_t i : idx) {
      c_vals.push_back(dot_row(rep_q.zc, i, rep_k.zc, i));
      n_vals.push_back(dot_row(rep_q.zn, i, rep_k.zn, i));
    }
    if (!c_vals.empty()) {
      stats.zc_augmented = cell_from(c_vals);
      stats.zn_augmented = cell_from(n_vals);
    }
  }

  std::vector<std::vector<std::size_t>> buckets(ds.num_classes());
  for (std::size_t i = 0; i < n; ++i) buckets[ds.labels[i]].push_back(i);

  // Same class, different instances. Exhaustive when cheap, sampled otherwise.
  {
    std::size_t total_pairs = 0;
    std::vector<std::size_t> eligible;
    for (std::size_t c = 0; c < buckets.size(); ++c) {
      if (buckets[c].size() >= 2) {
        eligible.push_back(c);
        total_pairs += buckets[c].size() * (buckets[c].size() - 1) / 2;
      }
    }
    std::vector<double> c_vals, n_vals;
    if (!eligible.empty()) {
      if (total_pairs <= max_pairs_per_class) {
        for (std::size_t c : eligible) {
          const auto& bucket = buckets[c];
          for (std::size_t x = 0; x < bucket.size(); ++x) {
            for (std::size_t y = x + 1; y < bucket.size(); ++y) {
              c_vals.push_back(dot_row(clean.zc, bucket[x], clean.zc, bucket[y]));
              n_vals.push_back(dot_row(clean.zn, bucket[x], clean.zn, bucket[y]));
            }
          }
        }
      } else {
        for (std::size_t s = 0; s < max_pairs_per_class; ++s) {
          const auto& bucket = buckets[eligible[rng.uniform_index(eligible.size())]];
          const std::size_t x = rng.uniform_index(bucket.size());
          std::size_t y = rng.uniform_index(bucket.size() - 1);
          if (y >= x) ++y;
          c_vals.push_back(dot_row(clean.zc, bucket[x], clean.zc, bucket[y]));
          n_vals.push_back(dot_row(clean.zn, bucket[x], clean.zn, bucket[y]));
        }
      }
      stats.zc_same = cell_from(c_vals);
      stats.zn_same = cell_from(n_vals);
    }
  }

  // Different classes.
  {
    std::vector<std::size_t> nonempty;
    for (std::size_t c = 0; c < buckets.size(); ++c) {
      if (!buckets[c].empty()) nonempty.push_back(c);
    }
    if (nonempty.size() >= 2) {
      std::size_t total_pairs = 0;
      for (std::size_t a = 0; a < nonempty.size(); ++a) {
        for (std::size_t b = a + 1; b < nonempty.size(); ++b) {
          total_pairs += buckets[nonempty[a]].size() * buckets[nonempty[b]].size();
        }
      }
      std::vector<double> c_vals, n_vals;
      if (total_pairs <= max_pairs_per_class) {
        for (std::size_t a = 0; a < nonempty.size(); ++a) {
          for (std::size_t b = a + 1; b < nonempty.size(); ++b) {
            for (std::size_t x : buckets[nonempty[a]]) {
              for (std::size_t y : buckets[nonempty[b]]) {
                c_vals.push_back(dot_row(clean.zc, x, clean.zc, y));
                n_vals.push_back(dot_row(clean.zn, x, clean.zn, y));
              }
            }
          }
        }
      } else {
        for (std::size_t s = 0; s < max_pairs_per_class; ++s) {
          const std::size_t ca = rng.uniform_index(nonempty.size());
          std::size_t cb = rng.uniform_index(nonempty.size() - 1);
          if (cb >= ca) ++cb;
          const auto& ba = buckets[nonempty[ca]];
          const auto& bb = buckets[nonempty[cb]];
          const std::size_t x = ba[rng.uniform_index(ba.size())];
          const std::size_t y = bb[rng.uniform_index(bb.size())];
          c_vals.push_back(dot_row(clean.zc, x, clean.zc, y));
          n_vals.push_back(dot_row(clean.zn, x, clean.zn, y));
        }
      }
      stats.zc_different = cell_from(c_vals);
      stats.zn_different = cell_from(n_vals);
    }
  }
  return stats;
}

std::vector<int> predict_clusters(const MlpSpec& spec, const Params& params, const Matrix& x,
                                  double t) {
  const Representation rep = forward(spec, params, x);
  const Matrix probs = cluster_probs(rep.zc, t);
  std::vector<int> pred(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < probs.cols(); ++j) {
      if (probs(i, j) > probs(i, arg)) arg = j;
    }
    pred[i] = static_cast<int>(arg);
  }
  return pred;
}

ClusterMetrics evaluate(const MlpSpec& spec, const Params& params, const Dataset& ds, double t) {
  ClusterMetrics out;
  const std::vector<int> pred = predict_clusters(spec, params, ds.features, t);
  out.entropy = assignment_entropy(pred, spec.cluster_dim);
  if (ds.has_labels()) {
    out.acc = hungarian_accuracy(pred, ds.labels);
    out.nmi = clc::nmi(pred, ds.labels);
    out.ari = clc::ari(pred, ds.labels);
  }
  return out;
}

}  // namespace clc
