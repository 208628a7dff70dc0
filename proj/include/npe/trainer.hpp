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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "npe/dataset.hpp"
#include "npe/errors.hpp"
#include "npe/model.hpp"
#include "npe/rng.hpp"
#include "npe/types.hpp"

namespace npe {

/// How training negatives are drawn from a user's unclicked items.
enum class NegativeSampling { kUniform, kPopularity };

const char* negative_sampling_name(NegativeSampling mode);
NegativeSampling negative_sampling_from_name(const std::string& name);

struct TrainConfig {
  Index dim = 64;
  Index neg_ratio = 4;       // negatives drawn per positive, per epoch
  Index batch_size = 10000;
  Index max_epochs = 50;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda = 0.0;       // L2 weight on touched parameter rows
  double dropout_rate = 0.0;
  double init_sigma = 0.01;
  Index early_stop_patience = 5;
  std::optional<Index> context_cap;  // subsample longer contexts to this size
  NegativeSampling negative_sampling = NegativeSampling::kUniform;
  Activation activation = Activation::kRelu;
  int threads = 1;
  bool deterministic = false;  // force sequential per-example passes
  std::uint64_t seed = 42;
};

/// Throws DataError when a field is outside its legal range.
void validate(const TrainConfig& config);

/// One labeled instance: the candidate item, its click label, and the user's
/// other clicked items as context. The candidate never appears in `context`.
struct TrainExample {
  Index user = 0;
  Index item = 0;
  int label = 0;
  std::vector<Index> context;
};

struct TrainReport {
  std::vector<double> train_loss;       // mean example loss per epoch
  std::vector<double> validation_loss;  // NaN entries when there is no validation set
  Index stopped_epoch = 0;              // epochs actually run, 1-based count
  Index best_epoch = 0;                 // epoch whose weights were kept
  std::vector<double> epoch_seconds;    // wall clock, reporting only
};

/// Draws `neg_ratio` unclicked items per positive in `matrix`. Uniform mode
/// rejection-samples the full item range; popularity mode weights items by
/// their click counts in `matrix` (zero-count items are never drawn).
std::vector<Click> sample_negatives(const SparseClickMatrix& matrix, Index neg_ratio,
                                    std::uint64_t seed,
                                    NegativeSampling mode = NegativeSampling::kUniform);

/// Same draw, but per positive in `positives` with `exclusion` deciding which
/// items count as clicked. Used for the fixed validation negative set, where
/// the exclusion covers train and validation clicks together.
std::vector<Click> sample_negatives_for(std::span<const Click> positives,
                                        const SparseClickMatrix& exclusion,
                                        Index neg_ratio, std::uint64_t seed,
                                        NegativeSampling mode = NegativeSampling::kUniform);

/// Builds the example for one labeled pair. Positives take the user's row
/// minus the candidate as context; negatives take the whole row. With a cap,
/// an over-long context is replaced by a uniform subsample of cap items; a
/// zero cap forces empty contexts, which is the pure-MF ablation.
TrainExample make_example(const SparseClickMatrix& matrix, Index user, Index item,
                          int label, std::optional<Index> context_cap, Rng& rng);

/// Tracks the best validation loss; stop after `patience` consecutive epochs
/// without a strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(Index patience);

  /// Records one epoch's validation loss; true means stop now.
  bool observe(double loss);
  bool improved() const { return improved_; }
  Index best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  Index patience_;
  Index epoch_ = 0;
  Index best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  Index bad_streak_ = 0;
  bool improved_ = false;
};

/// Binary cross-entropy of one example under the current parameters.
template <typename Scalar>
double example_loss(const Parameters<Scalar>& params, const TrainExample& example) {
  const double p = predict_prob(params, example.user, example.item, example.context);
  const double arg = example.label == 1 ? p : 1.0 - p;
  return -std::log(std::max(arg, 1e-12));
}

/// Batch gradients, dense matrices with only the touched rows nonzero.
/// `touched_*` lists the nonzero rows, sorted and deduplicated.
struct Gradients {
  Matrix<double> user;
  Matrix<double> item;
  Matrix<double> context;
  std::vector<Index> touched_users;
  std::vector<Index> touched_items;
  std::vector<Index> touched_contexts;

  void reset(Index num_users, Index num_items, Index dim) {
    user.setZero(num_users, dim);
    item.setZero(num_items, dim);
    context.setZero(num_items, dim);
    touched_users.clear();
    touched_items.clear();
    touched_contexts.clear();
  }
};

namespace detail {

inline void sort_unique(std::vector<Index>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

/// Inverted dropout mask: entries are 0 with probability `rate`, else
/// 1/(1-rate). A zero rate yields all ones without consuming draws.
inline Vector<double> dropout_mask(Index dim, double rate, Rng& rng) {
  Vector<double> mask = Vector<double>::Constant(dim, 1.0);
  if (rate <= 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Index d = 0; d < dim; ++d) mask[d] = keep(rng) ? scale : 0.0;
  return mask;
}

/// Forward and backward for one example. Outputs are the gradient rows; the
/// context row gradient is shared by every context item.
template <typename Scalar>
struct ExamplePass {
  Vector<double> d_user;
  Vector<double> d_item;
  Vector<double> d_context;  // gradient of each touched context row
  double loss = 0.0;
};

template <typename Scalar>
ExamplePass<Scalar> example_pass(const Parameters<Scalar>& params,
                                 const TrainExample& example, double dropout_rate,
                                 std::uint64_t example_seed) {
  const HiddenTriple<Scalar> h =
      hidden(params, example.user, example.item, example.context);
  const Vector<double> user = h.user.template cast<double>();
  const Vector<double> item = h.item.template cast<double>();
  const Vector<double> context = h.context.template cast<double>();

  Rng rng(example_seed);
  const Index dim = params.dim();
  const Vector<double> mask_user = dropout_mask(dim, dropout_rate, rng);
  const Vector<double> mask_item = dropout_mask(dim, dropout_rate, rng);
  const Vector<double> mask_context = dropout_mask(dim, dropout_rate, rng);

  const Vector<double> user_drop = user.cwiseProduct(mask_user);
  const Vector<double> item_drop = item.cwiseProduct(mask_item);
  const Vector<double> context_drop = context.cwiseProduct(mask_context);

  const double s = item_drop.dot(user_drop + context_drop);
  const double mu = sigmoid(s);
  const double r = static_cast<double>(example.label);
  const double arg = example.label == 1 ? mu : 1.0 - mu;

  ExamplePass<Scalar> pass;
  pass.loss = -std::log(std::max(arg, 1e-12));

  // d loss / d s for BCE composed with the logistic function.
  const double g = mu - r;
  const Vector<double> gate_user =
      activation_gate(h.user, params.activation).template cast<double>();
  const Vector<double> gate_item =
      activation_gate(h.item, params.activation).template cast<double>();
  const Vector<double> gate_context =
      activation_gate(h.context, params.activation).template cast<double>();

  pass.d_user = g * item_drop.cwiseProduct(mask_user).cwiseProduct(gate_user);
  pass.d_item =
      g * (user_drop + context_drop).cwiseProduct(mask_item).cwiseProduct(gate_item);
  pass.d_context = g * item_drop.cwiseProduct(mask_context).cwiseProduct(gate_context);
  return pass;
}

}  // namespace detail

/// Accumulates averaged BCE gradients for one batch into `grads` (which is
/// reset first), adds the L2 term on touched rows, and returns the batch's
/// summed example loss. Per-example dropout draws are seeded from
/// (dropout_seed, first_index + k), so results do not depend on thread
/// scheduling: passes run in parallel, the reduction is sequential in batch
/// order.
template <typename Scalar>
double batch_gradients(const Parameters<Scalar>& params,
                       std::span<const TrainExample> batch, double lambda,
                       double dropout_rate, std::uint64_t dropout_seed,
                       std::uint64_t first_index, int threads, Gradients& grads) {
  grads.reset(params.num_users(), params.num_items(), params.dim());
  const Index count = static_cast<Index>(batch.size());
  if (count == 0) return 0.0;

  std::vector<detail::ExamplePass<Scalar>> passes(batch.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(std::max(threads, 1))
#endif
  for (Index k = 0; k < count; ++k) {
    passes[k] = detail::example_pass(params, batch[k], dropout_rate,
                                     mix_seed(dropout_seed, first_index + k));
  }
#ifndef _OPENMP
  (void)threads;
#endif

  const double inv = 1.0 / static_cast<double>(count);
  double loss_sum = 0.0;
  for (Index k = 0; k < count; ++k) {
    const TrainExample& ex = batch[k];
    const detail::ExamplePass<Scalar>& pass = passes[k];
    loss_sum += pass.loss;
    grads.user.row(ex.user) += inv * pass.d_user.transpose();
    grads.item.row(ex.item) += inv * pass.d_item.transpose();
    grads.touched_users.push_back(ex.user);
    grads.touched_items.push_back(ex.item);
    for (Index j : ex.context) {
      grads.context.row(j) += inv * pass.d_context.transpose();
      grads.touched_contexts.push_back(j);
    }
  }
  detail::sort_unique(grads.touched_users);
  detail::sort_unique(grads.touched_items);
  detail::sort_unique(grads.touched_contexts);

  if (lambda > 0.0) {
    for (Index u : grads.touched_users) {
      grads.user.row(u) +=
          2.0 * lambda * params.user_embeddings.row(u).template cast<double>();
    }
    for (Index i : grads.touched_items) {
      grads.item.row(i) +=
          2.0 * lambda * params.item_embeddings.row(i).template cast<double>();
    }
    for (Index j : grads.touched_contexts) {
      grads.context.row(j) +=
          2.0 * lambda * params.context_embeddings.row(j).template cast<double>();
    }
  }
  return loss_sum;
}

/// The objective batch_gradients differentiates (dropout off): mean example
/// loss plus lambda times the squared norm of the touched parameter rows.
template <typename Scalar>
double batch_loss(const Parameters<Scalar>& params, std::span<const TrainExample> batch,
                  double lambda) {
  if (batch.empty()) return 0.0;
  double loss = 0.0;
  for (const TrainExample& ex : batch) loss += example_loss(params, ex);
  loss /= static_cast<double>(batch.size());

  if (lambda > 0.0) {
    std::vector<Index> users, items, contexts;
    for (const TrainExample& ex : batch) {
      users.push_back(ex.user);
      items.push_back(ex.item);
      contexts.insert(contexts.end(), ex.context.begin(), ex.context.end());
    }
    detail::sort_unique(users);
    detail::sort_unique(items);
    detail::sort_unique(contexts);
    double omega = 0.0;
    for (Index u : users) {
      omega += params.user_embeddings.row(u).template cast<double>().squaredNorm();
    }
    for (Index i : items) {
      omega += params.item_embeddings.row(i).template cast<double>().squaredNorm();
    }
    for (Index j : contexts) {
      omega += params.context_embeddings.row(j).template cast<double>().squaredNorm();
    }
    loss += lambda * omega;
  }
  return loss;
}

/// First and second moment tables, updated lazily on touched rows only; the
/// step counter is global, so bias correction is shared by all rows.
template <typename Scalar>
struct AdamState {
  Matrix<Scalar> user_m, user_v;
  Matrix<Scalar> item_m, item_v;
  Matrix<Scalar> context_m, context_v;
  std::int64_t t = 0;

  static AdamState zeros_like(const Parameters<Scalar>& params) {
    AdamState state;
    state.user_m.setZero(params.num_users(), params.dim());
    state.user_v.setZero(params.num_users(), params.dim());
    state.item_m.setZero(params.num_items(), params.dim());
    state.item_v.setZero(params.num_items(), params.dim());
    state.context_m.setZero(params.num_items(), params.dim());
    state.context_v.setZero(params.num_items(), params.dim());
    return state;
  }
};

template <typename Scalar>
void adam_step(Parameters<Scalar>& params, AdamState<Scalar>& state,
               const Gradients& grads, const TrainConfig& config) {
  state.t += 1;
  const double correction1 = 1.0 - std::pow(config.adam_beta1, double(state.t));
  const double correction2 = 1.0 - std::pow(config.adam_beta2, double(state.t));

  auto update_rows = [&](Matrix<Scalar>& table, Matrix<Scalar>& m, Matrix<Scalar>& v,
                         const Matrix<double>& grad, const std::vector<Index>& rows) {
    for (Index r : rows) {
      for (Index c = 0; c < table.cols(); ++c) {
        const double g = grad(r, c);
        const double m_new =
            config.adam_beta1 * static_cast<double>(m(r, c)) + (1.0 - config.adam_beta1) * g;
        const double v_new = config.adam_beta2 * static_cast<double>(v(r, c)) +
                             (1.0 - config.adam_beta2) * g * g;
        m(r, c) = static_cast<Scalar>(m_new);
        v(r, c) = static_cast<Scalar>(v_new);
        const double m_hat = m_new / correction1;
        const double v_hat = v_new / correction2;
        table(r, c) = static_cast<Scalar>(
            static_cast<double>(table(r, c)) -
            config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps));
      }
    }
  };
  update_rows(params.user_embeddings, state.user_m, state.user_v, grads.user,
              grads.touched_users);
  update_rows(params.item_embeddings, state.item_m, state.item_v, grads.item,
              grads.touched_items);
  update_rows(params.context_embeddings, state.context_m, state.context_v, grads.context,
              grads.touched_contexts);
}

namespace detail {

struct LabeledPair {
  Index user;
  Index item;
  int label;
};

}  // namespace detail

/// Full training loop: Gaussian init, then per epoch resample negatives,
/// shuffle, sweep mini-batches with Adam updates, and score the validation
/// objective (positives plus one fixed pre-sampled negative set, dropout
/// off). Stops early after `early_stop_patience` epochs without improvement
/// and returns the weights of the best validation epoch. Without validation
/// data it runs all epochs and returns the final weights. One progress line
/// per epoch goes to `progress` when given.
template <typename Scalar>
std::pair<Parameters<Scalar>, TrainReport> train(const DatasetSplit& split,
                                                 const TrainConfig& config,
                                                 std::ostream* progress = nullptr) {
  validate(config);
  if (split.train.empty()) throw DataError("training split is empty");
  const Index num_users = split.dataset.num_users;
  const Index num_items = split.dataset.num_items;

  const SparseClickMatrix train_matrix =
      build_matrix(split.train, num_users, num_items);

  // Fixed validation examples: contexts come from train clicks, negatives
  // avoid both train and validation clicks, and both are drawn once so every
  // epoch is scored against the same objective.
  std::vector<TrainExample> validation_examples;
  if (!split.validation.empty()) {
    std::vector<Click> merged(split.train);
    merged.insert(merged.end(), split.validation.begin(), split.validation.end());
    std::sort(merged.begin(), merged.end());
    const SparseClickMatrix merged_matrix = build_matrix(merged, num_users, num_items);
    const std::vector<Click> negatives = sample_negatives_for(
        split.validation, merged_matrix, config.neg_ratio,
        derive_seed(config.seed, SeedStream::kValidationNegatives),
        config.negative_sampling);
    Rng context_rng(derive_seed(config.seed, SeedStream::kValidationContext));
    validation_examples.reserve(split.validation.size() + negatives.size());
    for (const Click& c : split.validation) {
      validation_examples.push_back(
          make_example(train_matrix, c.user, c.item, 1, config.context_cap, context_rng));
    }
    for (const Click& c : negatives) {
      validation_examples.push_back(
          make_example(train_matrix, c.user, c.item, 0, config.context_cap, context_rng));
    }
  }

  Parameters<Scalar> params = init_params<Scalar>(
      num_users, num_items, config.dim, config.init_sigma, config.seed, config.activation);
  AdamState<Scalar> state = AdamState<Scalar>::zeros_like(params);
  Gradients grads;

  Parameters<Scalar> best_params = params;
  EarlyStopper stopper(config.early_stop_patience);
  TrainReport report;
  const int threads = config.deterministic ? 1 : config.threads;

  std::vector<detail::LabeledPair> stream;
  std::vector<TrainExample> batch;
  for (Index epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();

    const std::vector<Click> negatives = sample_negatives(
        train_matrix, config.neg_ratio,
        derive_seed(config.seed, SeedStream::kNegatives, static_cast<std::uint64_t>(epoch)),
        config.negative_sampling);
    stream.clear();
    stream.reserve(split.train.size() + negatives.size());
    for (const Click& c : split.train) stream.push_back({c.user, c.item, 1});
    for (const Click& c : negatives) stream.push_back({c.user, c.item, 0});
    Rng shuffle_rng(
        derive_seed(config.seed, SeedStream::kShuffle, static_cast<std::uint64_t>(epoch)));
    std::shuffle(stream.begin(), stream.end(), shuffle_rng);

    const std::uint64_t dropout_seed =
        derive_seed(config.seed, SeedStream::kDropout, static_cast<std::uint64_t>(epoch));
    Rng context_rng(
        derive_seed(config.seed, SeedStream::kContext, static_cast<std::uint64_t>(epoch)));

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < stream.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(stream.size(), begin + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      batch.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const detail::LabeledPair& pair = stream[k];
        batch.push_back(make_example(train_matrix, pair.user, pair.item, pair.label,
                                     config.context_cap, context_rng));
      }
      loss_sum += batch_gradients(params, std::span<const TrainExample>(batch),
                                  config.lambda, config.dropout_rate, dropout_seed,
                                  static_cast<std::uint64_t>(begin), threads, grads);
      adam_step(params, state, grads, config);
    }
    const double train_loss = loss_sum / static_cast<double>(stream.size());
    if (!std::isfinite(train_loss)) {
      throw NumericalError("train loss became non-finite at epoch " +
                           std::to_string(epoch));
    }

    double validation_loss = std::numeric_limits<double>::quiet_NaN();
    if (!validation_examples.empty()) {
      double sum = 0.0;
      for (const TrainExample& ex : validation_examples) sum += example_loss(params, ex);
      validation_loss = sum / static_cast<double>(validation_examples.size());
      if (!std::isfinite(validation_loss)) {
        throw NumericalError("validation loss became non-finite at epoch " +
                             std::to_string(epoch));
      }
    }

    report.train_loss.push_back(train_loss);
    report.validation_loss.push_back(validation_loss);
    report.stopped_epoch = epoch;
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start)
            .count();
    report.epoch_seconds.push_back(elapsed);
    if (progress) {
      (*progress) << "epoch " << epoch << " train " << train_loss << " val "
                  << validation_loss << " elapsed " << elapsed << "s\n";
    }

    if (!validation_examples.empty()) {
      const bool stop = stopper.observe(validation_loss);
      if (stopper.improved()) best_params = params;
      if (stop) break;
    }
  }

  if (validation_examples.empty()) {
    report.best_epoch = report.stopped_epoch;
    return {std::move(params), std::move(report)};
  }
  report.best_epoch = stopper.best_epoch();
  return {std::move(best_params), std::move(report)};
}

}  // namespace npe
