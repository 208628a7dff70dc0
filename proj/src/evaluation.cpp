/*
 * Copyright 2026 NPE Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "npe/evaluation.hpp"

#include <algorithm>
#include <cmath>

namespace npe {
namespace {

bool is_relevant(std::span<const Index> truth, Index item) {
  return std::binary_search(truth.begin(), truth.end(), item);
}

}  // namespace

double recall_at_n(std::span<const Index> ranked, std::span<const Index> truth, Index n) {
  if (n < 1 || truth.empty()) throw DataError("recall needs n >= 1 and non-empty truth");
  const Index depth = std::min<Index>(n, static_cast<Index>(ranked.size()));
  Index hits = 0;
  for (Index k = 0; k < depth; ++k) {
    if (is_relevant(truth, ranked[k])) ++hits;
  }
  const Index denom = std::min<Index>(n, static_cast<Index>(truth.size()));
  return static_cast<double>(hits) / static_cast<double>(denom);
}

double ndcg_at_n(std::span<const Index> ranked, std::span<const Index> truth, Index n) {
  if (n < 1 || truth.empty()) throw DataError("ndcg needs n >= 1 and non-empty truth");
  const Index depth = std::min<Index>(n, static_cast<Index>(ranked.size()));
  double dcg = 0.0;
  for (Index k = 0; k < depth; ++k) {
    if (is_relevant(truth, ranked[k])) {
      dcg += 1.0 / std::log2(static_cast<double>(k) + 2.0);
    }
  }
  const Index ideal = std::min<Index>(n, static_cast<Index>(truth.size()));
  double idcg = 0.0;
  for (Index k = 0; k < ideal; ++k) {
    idcg += 1.0 / std::log2(static_cast<double>(k) + 2.0);
  }
  return dcg / idcg;
}

ActivitySegment segment_for(Index train_clicks) {
  if (train_clicks < 10) return ActivitySegment::kLow;
  if (train_clicks <= 20) return ActivitySegment::kMedium;
  return ActivitySegment::kHigh;
}

const char* segment_name(ActivitySegment segment) {
  switch (segment) {
    case ActivitySegment::kLow: return "low";
    case ActivitySegment::kMedium: return "medium";
    default: return "high";
  }
}

std::vector<ActivitySegment> segment_users(const SparseClickMatrix& train_matrix) {
  std::vector<ActivitySegment> segments(
      static_cast<std::size_t>(train_matrix.num_users()));
  for (Index u = 0; u < train_matrix.num_users(); ++u) {
    segments[u] = segment_for(static_cast<Index>(train_matrix.row(u).size()));
  }
  return segments;
}

namespace detail {

std::string metric_key(const char* name, Index n) {
  return std::string(name) + "@" + std::to_string(n);
}

EvalReport reduce_user_metrics(std::span<const UserMetrics> rows,
                               std::span<const Index> n_list) {
  EvalReport report;
  report.users_evaluated = static_cast<Index>(rows.size());
  for (ActivitySegment s :
       {ActivitySegment::kLow, ActivitySegment::kMedium, ActivitySegment::kHigh}) {
    report.segments[segment_name(s)] = SegmentReport{};
  }

  const std::size_t width = n_list.size();
  std::vector<double> recall_sum(width, 0.0), ndcg_sum(width, 0.0);
  std::map<std::string, std::vector<double>> seg_recall, seg_ndcg;
  for (auto& [name, seg] : report.segments) {
    seg_recall[name].assign(width, 0.0);
    seg_ndcg[name].assign(width, 0.0);
  }

  for (const UserMetrics& row : rows) {
    const char* seg = segment_name(row.segment);
    report.segments[seg].users += 1;
    for (std::size_t k = 0; k < width; ++k) {
      recall_sum[k] += row.recall[k];
      ndcg_sum[k] += row.ndcg[k];
      seg_recall[seg][k] += row.recall[k];
      seg_ndcg[seg][k] += row.ndcg[k];
    }
  }

  const double total = std::max<double>(1.0, static_cast<double>(rows.size()));
  for (std::size_t k = 0; k < width; ++k) {
    report.metrics[metric_key("recall", n_list[k])] = recall_sum[k] / total;
    report.metrics[metric_key("ndcg", n_list[k])] = ndcg_sum[k] / total;
  }
  for (auto& [name, seg] : report.segments) {
    const double users = std::max<double>(1.0, static_cast<double>(seg.users));
    for (std::size_t k = 0; k < width; ++k) {
      seg.metrics[metric_key("recall", n_list[k])] = seg_recall[name][k] / users;
      seg.metrics[metric_key("ndcg", n_list[k])] = seg_ndcg[name][k] / users;
    }
  }
  return report;
}

}  // namespace detail

}  // namespace npe
