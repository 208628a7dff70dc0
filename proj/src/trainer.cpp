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

#include "npe/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace npe {
namespace {

// Draws one item the user has not clicked. The clicked row is sorted.
Index draw_uniform_negative(std::span<const Index> clicked, Index num_items, Rng& rng) {
  std::uniform_int_distribution<Index> pick(0, num_items - 1);
  while (true) {
    const Index candidate = pick(rng);
    if (!std::binary_search(clicked.begin(), clicked.end(), candidate)) {
      return candidate;
    }
  }
}

// Popularity-weighted draw over unclicked items via rejection against the
// clicked row, with a bounded number of attempts before falling back to an
// exact (slower) draw over the eligible mass.
class PopularitySampler {
 public:
  explicit PopularitySampler(const SparseClickMatrix& matrix) {
    cumulative_.resize(static_cast<std::size_t>(matrix.num_items()), 0);
    for (Index u = 0; u < matrix.num_users(); ++u) {
      for (Index i : matrix.row(u)) ++cumulative_[i];
    }
    std::partial_sum(cumulative_.begin(), cumulative_.end(), cumulative_.begin());
  }

  Index draw(std::span<const Index> clicked, Rng& rng) const {
    const std::int64_t total = cumulative_.empty() ? 0 : cumulative_.back();
    if (total <= 0) {
      throw DataError("popularity sampling needs at least one click in the matrix");
    }
    std::uniform_int_distribution<std::int64_t> pick(0, total - 1);
    for (int attempt = 0; attempt < 64; ++attempt) {
      const Index candidate = item_at(pick(rng));
      if (!std::binary_search(clicked.begin(), clicked.end(), candidate)) {
        return candidate;
      }
    }
    // The user covers nearly all popular items; draw from the exact
    // complement mass instead of rejecting forever.
    std::int64_t eligible = total;
    for (Index i : clicked) eligible -= count_of(i);
    if (eligible <= 0) {
      throw DataError("user has clicked every item with nonzero popularity");
    }
    std::uniform_int_distribution<std::int64_t> pick_eligible(0, eligible - 1);
    std::int64_t target = pick_eligible(rng);
    for (Index i = 0; i < static_cast<Index>(cumulative_.size()); ++i) {
      if (std::binary_search(clicked.begin(), clicked.end(), i)) continue;
      target -= count_of(i);
      if (target < 0) return i;
    }
    throw DataError("popularity sampling exhausted the item range");
  }

 private:
  Index item_at(std::int64_t mass) const {
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), mass);
    return static_cast<Index>(it - cumulative_.begin());
  }
  std::int64_t count_of(Index i) const {
    return cumulative_[i] - (i > 0 ? cumulative_[i - 1] : 0);
  }

  std::vector<std::int64_t> cumulative_;  // inclusive prefix sums of item clicks
};

std::vector<Click> sample_against(std::span<const Click> positives,
                                  const SparseClickMatrix& exclusion, Index neg_ratio,
                                  std::uint64_t seed, NegativeSampling mode) {
  std::optional<PopularitySampler> popularity;
  if (mode == NegativeSampling::kPopularity) popularity.emplace(exclusion);

  Rng rng(seed);
  std::vector<Click> negatives;
  negatives.reserve(positives.size() * static_cast<std::size_t>(neg_ratio));
  Index last_user = -1;
  std::span<const Index> clicked;
  for (const Click& positive : positives) {
    if (positive.user != last_user) {
      last_user = positive.user;
      clicked = exclusion.row(positive.user);
      if (static_cast<Index>(clicked.size()) >= exclusion.num_items()) {
        throw DataError("user " + std::to_string(positive.user) +
                        " has clicked every item; no negatives exist");
      }
    }
    for (Index k = 0; k < neg_ratio; ++k) {
      const Index item = popularity ? popularity->draw(clicked, rng)
                                    : draw_uniform_negative(clicked, exclusion.num_items(), rng);
      negatives.push_back({positive.user, item});
    }
  }
  return negatives;
}

}  // namespace

const char* negative_sampling_name(NegativeSampling mode) {
  return mode == NegativeSampling::kUniform ? "uniform" : "popularity";
}

NegativeSampling negative_sampling_from_name(const std::string& name) {
  if (name == "uniform") return NegativeSampling::kUniform;
  if (name == "popularity") return NegativeSampling::kPopularity;
  throw DataError("unknown negative sampling mode '" + name + "'");
}

void validate(const TrainConfig& config) {
  if (config.dim <= 0) throw DataError("dim must be positive");
  if (config.neg_ratio < 1) throw DataError("neg-ratio must be at least 1");
  if (config.batch_size < 1) throw DataError("batch-size must be at least 1");
  if (config.max_epochs < 1) throw DataError("epochs must be at least 1");
  if (!(config.learning_rate > 0.0)) throw DataError("lr must be positive");
  if (config.lambda < 0.0) throw DataError("lambda must be non-negative");
  if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0)) {
    throw DataError("dropout must lie in [0, 1)");
  }
  if (!(config.init_sigma > 0.0)) throw DataError("init-sigma must be positive");
  if (config.early_stop_patience < 1) throw DataError("patience must be at least 1");
  if (config.context_cap && *config.context_cap < 0) {
    throw DataError("context-cap must be non-negative when set");
  }
  if (config.threads < 1) throw DataError("threads must be at least 1");
}

std::vector<Click> sample_negatives(const SparseClickMatrix& matrix, Index neg_ratio,
                                    std::uint64_t seed, NegativeSampling mode) {
  std::vector<Click> positives;
  positives.reserve(static_cast<std::size_t>(matrix.num_clicks()));
  for (Index u = 0; u < matrix.num_users(); ++u) {
    for (Index i : matrix.row(u)) positives.push_back({u, i});
  }
  return sample_against(positives, matrix, neg_ratio, seed, mode);
}

std::vector<Click> sample_negatives_for(std::span<const Click> positives,
                                        const SparseClickMatrix& exclusion,
                                        Index neg_ratio, std::uint64_t seed,
                                        NegativeSampling mode) {
  return sample_against(positives, exclusion, neg_ratio, seed, mode);
}

TrainExample make_example(const SparseClickMatrix& matrix, Index user, Index item,
                          int label, std::optional<Index> context_cap, Rng& rng) {
  TrainExample example;
  example.user = user;
  example.item = item;
  example.label = label;
  const auto row = matrix.row(user);
  example.context.reserve(row.size());
  for (Index j : row) {
    if (label == 1 && j == item) continue;
    example.context.push_back(j);
  }
  if (context_cap && static_cast<Index>(example.context.size()) > *context_cap) {
    std::vector<Index> sampled;
    sampled.reserve(static_cast<std::size_t>(*context_cap));
    std::sample(example.context.begin(), example.context.end(),
                std::back_inserter(sampled), static_cast<std::size_t>(*context_cap), rng);
    example.context = std::move(sampled);
  }
  return example;
}

EarlyStopper::EarlyStopper(Index patience) : patience_(patience) {
  if (patience < 1) throw DataError("patience must be at least 1");
}

bool EarlyStopper::observe(double loss) {
  ++epoch_;
  if (loss < best_loss_) {
    best_loss_ = loss;
    best_epoch_ = epoch_;
    bad_streak_ = 0;
    improved_ = true;
  } else {
    ++bad_streak_;
    improved_ = false;
  }
  return bad_streak_ >= patience_;
}

}  // namespace npe
