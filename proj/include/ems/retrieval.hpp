// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.

#pragma once

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <set>

#include "ems/data.hpp"
#include "ems/hashing.hpp"

namespace ems {

struct RankedList {
  std::vector<Index> order;  // gallery indices by ascending distance
  int query_label = -1;
};

/// Gallery indices sorted by ascending Euclidean distance to the query;
/// ties break toward the lower index.
inline RankedList rank_euclidean(const Vector& query,
                                 const EmbeddingBatch& gallery,
                                 int query_label = -1) {
  gallery.check_consistent();
  require(gallery.size() >= 1, "rank_euclidean: empty gallery");
  require(query.size() == gallery.dim(), "rank_euclidean: dimension mismatch");
  Vector dist =
      (gallery.vectors.rowwise() - query.transpose()).rowwise().norm();
  RankedList out;
  out.query_label = query_label;
  out.order.resize(static_cast<std::size_t>(gallery.size()));
  std::iota(out.order.begin(), out.order.end(), Index{0});
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&dist](Index a, Index b) { return dist[a] < dist[b]; });
  return out;
}

inline RankedList rank_hamming(const HashCode& query, const HashCodes& gallery,
                               int query_label = -1) {
  require(!gallery.codes.empty(), "rank_hamming: empty gallery");
  std::vector<int> dist(gallery.codes.size());
  for (std::size_t i = 0; i < gallery.codes.size(); ++i)
    dist[i] = hamming_distance(query, gallery.codes[i]);
  RankedList out;
  out.query_label = query_label;
  out.order.resize(gallery.codes.size());
  std::iota(out.order.begin(), out.order.end(), Index{0});
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&dist](Index a, Index b) {
                     return dist[static_cast<std::size_t>(a)] <
                            dist[static_cast<std::size_t>(b)];
                   });
  return out;
}

/// Non-interpolated average precision over the full ranking:
/// (1/R) sum_k precision@k * rel(k).
inline double average_precision(const std::vector<char>& relevance,
                                long n_relevant) {
  require(n_relevant >= 1, "average_precision: need at least one relevant item");
  long found = 0;
  double ap = 0.0;
  for (std::size_t k = 0; k < relevance.size(); ++k) {
    if (relevance[k]) {
      ++found;
      ap += static_cast<double>(found) / static_cast<double>(k + 1);
    }
  }
  require(found == n_relevant,
          "average_precision: n_relevant does not match the set flags");
  return ap / static_cast<double>(n_relevant);
}

inline double precision_at_k(const std::vector<char>& relevance, long k) {
  require(k >= 1, "precision_at_k: k must be >= 1");
  require(k <= static_cast<long>(relevance.size()),
          "precision_at_k: k exceeds ranking length");
  long hits = 0;
  for (long i = 0; i < k; ++i)
    if (relevance[static_cast<std::size_t>(i)]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(k);
}

namespace detail {

// AP of one ranking, optionally truncated to the top `truncate` positions
// (then normalized by min(R, truncate)).
inline double ranked_ap(const std::vector<char>& relevance, long n_relevant,
                        std::optional<long> truncate) {
  if (!truncate) return average_precision(relevance, n_relevant);
  const long k = std::min<long>(*truncate, static_cast<long>(relevance.size()));
  long found = 0;
  double ap = 0.0;
  for (long i = 0; i < k; ++i)
    if (relevance[static_cast<std::size_t>(i)]) {
      ++found;
      ap += static_cast<double>(found) / static_cast<double>(i + 1);
    }
  const long denom = std::min(n_relevant, *truncate);
  return denom > 0 ? ap / static_cast<double>(denom) : 0.0;
}

}  // namespace detail

/// Mean of per-query AP; relevance is exact class-label match. Every query
/// class must be present in the gallery.
inline double mean_average_precision(const EmbeddingBatch& queries,
                                     const EmbeddingBatch& gallery,
                                     std::optional<long> truncate = {}) {
  queries.check_consistent();
  gallery.check_consistent();
  require(queries.size() >= 1, "mean_average_precision: no queries");
  require(gallery.size() >= 1, "mean_average_precision: empty gallery");

  std::vector<long> class_count;
  for (int label : gallery.labels) {
    if (label >= static_cast<int>(class_count.size()))
      class_count.resize(static_cast<std::size_t>(label) + 1, 0);
    class_count[static_cast<std::size_t>(label)]++;
  }

  double total = 0.0;
  for (Index q = 0; q < queries.size(); ++q) {
    const int label = queries.labels[static_cast<std::size_t>(q)];
    require(label >= 0 && label < static_cast<int>(class_count.size()) &&
                class_count[static_cast<std::size_t>(label)] > 0,
            "mean_average_precision: query class absent from gallery");
    const RankedList ranked =
        rank_euclidean(queries.vectors.row(q), gallery, label);
    std::vector<char> rel(ranked.order.size());
    for (std::size_t i = 0; i < ranked.order.size(); ++i)
      rel[i] = gallery.labels[static_cast<std::size_t>(ranked.order[i])] == label;
    total += detail::ranked_ap(rel, class_count[static_cast<std::size_t>(label)],
                               truncate);
  }
  return total / static_cast<double>(queries.size());
}

inline double mean_average_precision(const HashCodes& queries,
                                     const HashCodes& gallery,
                                     std::optional<long> truncate = {}) {
  require(!queries.codes.empty(), "mean_average_precision: no queries");
  require(!gallery.codes.empty(), "mean_average_precision: empty gallery");
  std::vector<long> class_count;
  for (std::uint32_t label : gallery.labels) {
    if (label >= class_count.size()) class_count.resize(label + 1, 0);
    class_count[label]++;
  }
  double total = 0.0;
  for (std::size_t q = 0; q < queries.codes.size(); ++q) {
    const std::uint32_t label = queries.labels[q];
    require(label < class_count.size() && class_count[label] > 0,
            "mean_average_precision: query class absent from gallery");
    const RankedList ranked =
        rank_hamming(queries.codes[q], gallery, static_cast<int>(label));
    std::vector<char> rel(ranked.order.size());
    for (std::size_t i = 0; i < ranked.order.size(); ++i)
      rel[i] = gallery.labels[static_cast<std::size_t>(ranked.order[i])] == label;
    total += detail::ranked_ap(rel, class_count[label], truncate);
  }
  return total / static_cast<double>(queries.codes.size());
}

/// Expected AP of a uniformly random ranking of n items with r relevant:
/// (H_n + (r-1)/(n-1) * (n - H_n)) / n. The baseline MAP for chance-level
/// retrieval over a balanced gallery.
inline double expected_random_ranking_ap(long n, long r) {
  require(n >= 1 && r >= 1 && r <= n,
          "expected_random_ranking_ap: need 1 <= r <= n");
  double harmonic = 0.0;
  for (long i = 1; i <= n; ++i) harmonic += 1.0 / static_cast<double>(i);
  if (n == 1) return 1.0;
  return (harmonic + static_cast<double>(r - 1) / static_cast<double>(n - 1) *
                         (static_cast<double>(n) - harmonic)) /
         static_cast<double>(n);
}

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  long count = 0;
};

/// Distance diagnostics over one embedding set: per-class max intra-class
/// distance (absent for singleton classes), per-instance minimum distance
/// to any other-class instance, and the histogram of that distribution.
struct DistanceReport {
  // NaN marks a class with a single instance (intra distance undefined).
  std::vector<double> max_intra;
  std::vector<double> min_inter_per_class;
  std::vector<double> min_inter_per_instance;
  std::vector<HistogramBin> histogram;
  bool separation_holds = false;  // max intra < min inter for every defined class
};

inline DistanceReport distance_report(const EmbeddingBatch& batch,
                                      int histogram_bins = 50) {
  batch.check_consistent();
  require(batch.size() >= 2, "distance_report: need at least two samples");
  int num_classes = 0;
  for (int label : batch.labels) {
    require(label >= 0, "distance_report: negative label");
    num_classes = std::max(num_classes, label + 1);
  }
  {
    std::set<int> present(batch.labels.begin(), batch.labels.end());
    require(present.size() >= 2, "distance_report: need at least two classes");
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  DistanceReport report;
  report.max_intra.assign(static_cast<std::size_t>(num_classes), nan);
  report.min_inter_per_class.assign(static_cast<std::size_t>(num_classes), inf);
  report.min_inter_per_instance.assign(static_cast<std::size_t>(batch.size()),
                                       inf);

  const Index n = batch.size();
  for (Index i = 0; i < n; ++i) {
    const int yi = batch.labels[static_cast<std::size_t>(i)];
    for (Index j = i + 1; j < n; ++j) {
      const int yj = batch.labels[static_cast<std::size_t>(j)];
      const double d = (batch.vectors.row(i) - batch.vectors.row(j)).norm();
      if (yi == yj) {
        double& mi = report.max_intra[static_cast<std::size_t>(yi)];
        if (std::isnan(mi) || d > mi) mi = d;
      } else {
        auto& a = report.min_inter_per_instance[static_cast<std::size_t>(i)];
        auto& b = report.min_inter_per_instance[static_cast<std::size_t>(j)];
        a = std::min(a, d);
        b = std::min(b, d);
      }
    }
  }
  for (Index i = 0; i < n; ++i) {
    const int y = batch.labels[static_cast<std::size_t>(i)];
    report.min_inter_per_class[static_cast<std::size_t>(y)] =
        std::min(report.min_inter_per_class[static_cast<std::size_t>(y)],
                 report.min_inter_per_instance[static_cast<std::size_t>(i)]);
  }

  report.separation_holds = true;
  for (int y = 0; y < num_classes; ++y) {
    const double intra = report.max_intra[static_cast<std::size_t>(y)];
    if (std::isnan(intra)) continue;  // singleton or absent class
    if (!(intra < report.min_inter_per_class[static_cast<std::size_t>(y)]))
      report.separation_holds = false;
  }

  // Fixed-width bins over [0, max observed min-inter distance].
  double max_observed = 0.0;
  for (double v : report.min_inter_per_instance)
    if (std::isfinite(v)) max_observed = std::max(max_observed, v);
  const double width = max_observed > 0.0
                           ? max_observed / static_cast<double>(histogram_bins)
                           : 1.0;
  report.histogram.resize(static_cast<std::size_t>(histogram_bins));
  for (int b = 0; b < histogram_bins; ++b) {
    report.histogram[static_cast<std::size_t>(b)].left = b * width;
    report.histogram[static_cast<std::size_t>(b)].right = (b + 1) * width;
  }
  for (double v : report.min_inter_per_instance) {
    if (!std::isfinite(v)) continue;
    int b = static_cast<int>(v / width);
    b = std::min(b, histogram_bins - 1);
    report.histogram[static_cast<std::size_t>(b)].count++;
  }
  return report;
}

inline void write_histogram_csv(const std::string& path,
                                const std::vector<HistogramBin>& bins) {
  std::ofstream out(path);
  require(out.good(), "write_histogram_csv: cannot open " + path);
  out << "bin_left,bin_right,count\n" << std::setprecision(17);
  for (const auto& b : bins)
    out << b.left << ',' << b.right << ',' << b.count << '\n';
}

/// Retrieval metrics bundle emitted by the evaluation surface.
struct MetricsReport {
  double map = 0.0;
  std::vector<std::pair<long, double>> precision_at;
  DistanceReport distances;
};

}  // namespace ems
