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

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "npe/dataset.hpp"
#include "npe/errors.hpp"
#include "npe/query.hpp"
#include "npe/types.hpp"

namespace npe {

/// Fraction of the relevant items retrieved in the top n, with the
/// denominator capped at n so the value stays in [0,1] for large truth sets.
/// `truth` must be sorted; `ranked` is best-first.
double recall_at_n(std::span<const Index> ranked, std::span<const Index> truth, Index n);

/// Binary-gain nDCG with the 1/log2(rank+1) discount; the ideal ranking
/// places min(n, |truth|) relevant items first. `truth` must be sorted.
double ndcg_at_n(std::span<const Index> ranked, std::span<const Index> truth, Index n);

/// User activity bands by training click count: fewer than 10 is Low, 10
/// through 20 is Medium, more than 20 is High.
enum class ActivitySegment { kLow, kMedium, kHigh };

ActivitySegment segment_for(Index train_clicks);
const char* segment_name(ActivitySegment segment);

/// Segment of every user in the matrix, indexed by user.
std::vector<ActivitySegment> segment_users(const SparseClickMatrix& train_matrix);

struct SegmentReport {
  Index users = 0;
  std::map<std::string, double> metrics;  // "recall@20" -> value
};

struct EvalReport {
  Index users_evaluated = 0;
  std::map<std::string, double> metrics;
  std::map<std::string, SegmentReport> segments;  // "low" / "medium" / "high"
};

/// One evaluated user's metrics, for the optional per-user CSV.
struct UserMetrics {
  Index user = 0;
  ActivitySegment segment = ActivitySegment::kLow;
  std::vector<double> recall;  // parallel to the requested n list
  std::vector<double> ndcg;
};

namespace detail {

std::string metric_key(const char* name, Index n);

/// Folds per-user rows into overall and per-segment uniform averages.
EvalReport reduce_user_metrics(std::span<const UserMetrics> rows,
                               std::span<const Index> n_list);

}  // namespace detail

/// Ranks every user holding at least one test click and averages Recall@n and
/// nDCG@n uniformly over those users, overall and per activity segment.
/// Candidates exclude the user's train and validation clicks; the context is
/// the train clicks only. Users are independent, so the ranking loop runs on
/// `threads` threads; the reduction is sequential in user order either way.
template <typename Scalar>
EvalReport evaluate(const Parameters<Scalar>& params, const DatasetSplit& split,
                    std::span<const Index> n_list, int threads = 1,
                    std::vector<UserMetrics>* per_user = nullptr) {
  if (params.num_users() != split.dataset.num_users ||
      params.num_items() != split.dataset.num_items) {
    throw DataError("parameter shapes do not match the dataset");
  }
  if (n_list.empty()) throw DataError("no cutoffs requested");
  Index max_n = 0;
  for (Index n : n_list) {
    if (n < 1) throw DataError("cutoffs must be at least 1");
    max_n = std::max(max_n, n);
  }

  const Index num_users = split.dataset.num_users;
  const Index num_items = split.dataset.num_items;
  const SparseClickMatrix train_matrix = build_matrix(split.train, num_users, num_items);
  const SparseClickMatrix test_matrix = build_matrix(split.test, num_users, num_items);
  std::vector<Click> known(split.train);
  known.insert(known.end(), split.validation.begin(), split.validation.end());
  std::sort(known.begin(), known.end());
  const SparseClickMatrix known_matrix = build_matrix(known, num_users, num_items);

  std::vector<Index> eval_users;
  for (Index u = 0; u < num_users; ++u) {
    if (!test_matrix.row(u).empty()) eval_users.push_back(u);
  }

  const Ranker<Scalar> ranker(params);
  const std::vector<ActivitySegment> segments = segment_users(train_matrix);
  std::vector<UserMetrics> rows(eval_users.size());

  const Index count = static_cast<Index>(eval_users.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8) num_threads(std::max(threads, 1))
#endif
  for (Index k = 0; k < count; ++k) {
    const Index u = eval_users[k];
    const auto top = ranker.top_n(u, train_matrix.row(u), known_matrix.row(u), max_n);
    std::vector<Index> ranked;
    ranked.reserve(top.size());
    for (const ScoredItem& s : top) ranked.push_back(s.item);
    const auto truth = test_matrix.row(u);

    UserMetrics& row = rows[k];
    row.user = u;
    row.segment = segments[u];
    row.recall.reserve(n_list.size());
    row.ndcg.reserve(n_list.size());
    for (Index n : n_list) {
      row.recall.push_back(recall_at_n(ranked, truth, n));
      row.ndcg.push_back(ndcg_at_n(ranked, truth, n));
    }
  }
#ifndef _OPENMP
  (void)threads;
#endif

  if (per_user) *per_user = rows;
  return detail::reduce_user_metrics(rows, n_list);
}

}  // namespace npe
