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

#include <algorithm>
#include <span>
#include <vector>

#include "npe/errors.hpp"
#include "npe/model.hpp"
#include "npe/types.hpp"

namespace npe {

struct ScoredItem {
  Index item = 0;
  double score = 0.0;
};

namespace detail {

/// Top k of `scores` by (score desc, index asc), skipping masked items.
/// `excluded` may be empty, meaning nothing is masked.
inline std::vector<ScoredItem> select_top_k(const Vector<double>& scores,
                                            std::span<const char> excluded, Index k) {
  std::vector<ScoredItem> candidates;
  candidates.reserve(static_cast<std::size_t>(scores.size()));
  for (Index i = 0; i < scores.size(); ++i) {
    if (!excluded.empty() && excluded[i]) continue;
    candidates.push_back({i, scores[i]});
  }
  const auto better = [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  };
  const Index take = std::min<Index>(k, static_cast<Index>(candidates.size()));
  std::partial_sort(candidates.begin(), candidates.begin() + take, candidates.end(),
                    better);
  candidates.resize(static_cast<std::size_t>(take));
  return candidates;
}

}  // namespace detail

/// Shared ranking path: activates the item table once, then answers top-n
/// requests with one matrix-vector product per call. Read-only over the
/// parameters, safe to use from several threads at once.
template <typename Scalar>
class Ranker {
 public:
  explicit Ranker(const Parameters<Scalar>& params) : params_(&params) {
    item_activated_.resize(params.num_items(), params.dim());
    for (Index i = 0; i < params.num_items(); ++i) {
      item_activated_.row(i) =
          activate<Scalar>(params.item_embeddings.row(i).transpose(), params.activation)
              .template cast<double>()
              .transpose();
    }
  }

  Index num_items() const { return item_activated_.rows(); }

  /// Scores every item as w_j . (h_u + v_c) with the context built from
  /// `context`, masks out `exclude`, and returns the top n.
  std::vector<ScoredItem> top_n(Index user, std::span<const Index> context,
                                std::span<const Index> exclude, Index n) const {
    if (user < 0 || user >= params_->num_users()) {
      throw DataError("user index " + std::to_string(user) + " out of range");
    }
    const Vector<double> query = query_vector(user, context);
    const Vector<double> scores = item_activated_ * query;
    std::vector<char> mask(static_cast<std::size_t>(num_items()), 0);
    for (Index i : exclude) {
      if (i < 0 || i >= num_items()) {
        throw DataError("excluded item index " + std::to_string(i) + " out of range");
      }
      mask[static_cast<std::size_t>(i)] = 1;
    }
    return detail::select_top_k(scores, mask, n);
  }

 private:
  Vector<double> query_vector(Index user, std::span<const Index> context) const {
    Vector<double> sum = Vector<double>::Zero(params_->dim());
    for (Index j : context) {
      if (j < 0 || j >= params_->num_items()) {
        throw DataError("context item index " + std::to_string(j) + " out of range");
      }
      sum += params_->context_embeddings.row(j).transpose().template cast<double>();
    }
    const Vector<double> context_hidden =
        activate<double>(std::move(sum), params_->activation);
    const Vector<double> user_hidden =
        activate<Scalar>(params_->user_embeddings.row(user).transpose(),
                         params_->activation)
            .template cast<double>();
    return user_hidden + context_hidden;
  }

  const Parameters<Scalar>* params_;
  Matrix<double> item_activated_;
};

/// Personalized top-n: context from the full history, history items excluded
/// from the candidates. An empty history degrades to pure inner-product
/// ranking against the user vector.
template <typename Scalar>
std::vector<ScoredItem> recommend_top_n(const Parameters<Scalar>& params, Index user,
                                        std::span<const Index> history, Index n) {
  return Ranker<Scalar>(params).top_n(user, history, history, n);
}

/// Top-k neighbors of item `i` by cosine similarity between activated item
/// vectors. Zero-vector candidates score 0; a zero-vector query is an error
/// because every cosine against it is undefined.
template <typename Scalar>
std::vector<ScoredItem> similar_items(const Parameters<Scalar>& params, Index item,
                                      Index k) {
  if (item < 0 || item >= params.num_items()) {
    throw DataError("item index " + std::to_string(item) + " out of range");
  }
  const Index num_items = params.num_items();
  Matrix<double> activated(num_items, params.dim());
  for (Index j = 0; j < num_items; ++j) {
    activated.row(j) =
        activate<Scalar>(params.item_embeddings.row(j).transpose(), params.activation)
            .template cast<double>()
            .transpose();
  }
  const Vector<double> anchor = activated.row(item).transpose();
  const double anchor_norm = anchor.norm();
  if (anchor_norm == 0.0) {
    throw DataError("item " + std::to_string(item) +
                    " has a zero activated embedding; similarity is undefined");
  }
  Vector<double> scores(num_items);
  for (Index j = 0; j < num_items; ++j) {
    const double norm = activated.row(j).norm();
    scores[j] = norm == 0.0 ? 0.0 : activated.row(j).dot(anchor) / (norm * anchor_norm);
  }
  std::vector<char> mask(static_cast<std::size_t>(num_items), 0);
  mask[static_cast<std::size_t>(item)] = 1;
  return detail::select_top_k(scores, mask, k);
}

/// Top-k co-purchase partners of item `i`: rank items j by w_i . v_j, the
/// affinity between i's item vector and j's context vector (not symmetric).
template <typename Scalar>
std::vector<ScoredItem> co_purchased(const Parameters<Scalar>& params, Index item,
                                     Index k) {
  if (item < 0 || item >= params.num_items()) {
    throw DataError("item index " + std::to_string(item) + " out of range");
  }
  const Vector<double> anchor =
      activate<Scalar>(params.item_embeddings.row(item).transpose(), params.activation)
          .template cast<double>();
  const Index num_items = params.num_items();
  Vector<double> scores(num_items);
  for (Index j = 0; j < num_items; ++j) {
    const Vector<double> context_vec =
        activate<Scalar>(params.context_embeddings.row(j).transpose(), params.activation)
            .template cast<double>();
    scores[j] = context_vec.dot(anchor);
  }
  std::vector<char> mask(static_cast<std::size_t>(num_items), 0);
  mask[static_cast<std::size_t>(item)] = 1;
  return detail::select_top_k(scores, mask, k);
}

}  // namespace npe
