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

#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "npe/errors.hpp"
#include "npe/rng.hpp"
#include "npe/types.hpp"

namespace npe {

enum class Activation { kRelu, kIdentity };

inline const char* activation_name(Activation a) {
  return a == Activation::kRelu ? "relu" : "identity";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  throw DataError("unknown activation '" + name + "'");
}

/// Embedding tables. Row u of `user_embeddings` and row i of
/// `item_embeddings` / `context_embeddings` are the raw (pre-activation)
/// representations; every consumer goes through `hidden` or `activate`.
template <typename Scalar>
struct Parameters {
  Matrix<Scalar> user_embeddings;     // num_users x dim
  Matrix<Scalar> item_embeddings;     // num_items x dim
  Matrix<Scalar> context_embeddings;  // num_items x dim
  Activation activation = Activation::kRelu;

  Index num_users() const { return user_embeddings.rows(); }
  Index num_items() const { return item_embeddings.rows(); }
  Index dim() const { return user_embeddings.cols(); }
};

/// Activated representations for one (user, item, context) triple.
template <typename Scalar>
struct HiddenTriple {
  Vector<Scalar> user;
  Vector<Scalar> item;
  Vector<Scalar> context;  // activation of the summed context rows
};

template <typename Scalar>
Vector<Scalar> activate(Vector<Scalar> pre, Activation activation) {
  if (activation == Activation::kRelu) pre = pre.cwiseMax(Scalar(0));
  return pre;
}

/// Elementwise derivative of the activation at the pre-activation point,
/// recovered from the activated value. Valid because both supported
/// activations satisfy: output > 0 iff the derivative is 1 (ReLU, with the
/// derivative at 0 taken as 0) or the derivative is identically 1 (identity).
template <typename Scalar>
Vector<Scalar> activation_gate(const Vector<Scalar>& activated, Activation activation) {
  if (activation == Activation::kIdentity) {
    return Vector<Scalar>::Ones(activated.size());
  }
  return (activated.array() > Scalar(0)).template cast<Scalar>();
}

/// Gaussian-initialized tables, filled row by row so every instantiation
/// draws the same underlying double sequence.
template <typename Scalar>
Parameters<Scalar> init_params(Index num_users, Index num_items, Index dim,
                               double sigma, std::uint64_t seed,
                               Activation activation = Activation::kRelu) {
  if (num_users <= 0 || num_items <= 0 || dim <= 0) {
    throw DataError("model dimensions must be positive");
  }
  Parameters<Scalar> params;
  params.activation = activation;
  params.user_embeddings.resize(num_users, dim);
  params.item_embeddings.resize(num_items, dim);
  params.context_embeddings.resize(num_items, dim);

  Rng rng(derive_seed(seed, SeedStream::kInit));
  std::normal_distribution<double> gauss(0.0, sigma);
  for (Matrix<Scalar>* table :
       {&params.user_embeddings, &params.item_embeddings, &params.context_embeddings}) {
    for (Index r = 0; r < table->rows(); ++r) {
      for (Index c = 0; c < table->cols(); ++c) {
        (*table)(r, c) = static_cast<Scalar>(gauss(rng));
      }
    }
  }
  return params;
}

/// Activated triple for one example. The context representation activates the
/// sum of the context item rows; an empty context yields the zero vector.
template <typename Scalar>
HiddenTriple<Scalar> hidden(const Parameters<Scalar>& params, Index user, Index item,
                            std::span<const Index> context) {
  if (user < 0 || user >= params.num_users()) {
    throw DataError("user index " + std::to_string(user) + " out of range");
  }
  if (item < 0 || item >= params.num_items()) {
    throw DataError("item index " + std::to_string(item) + " out of range");
  }
  HiddenTriple<Scalar> h;
  h.user = activate<Scalar>(params.user_embeddings.row(user).transpose(),
                            params.activation);
  h.item = activate<Scalar>(params.item_embeddings.row(item).transpose(),
                            params.activation);
  Vector<double> sum = Vector<double>::Zero(params.dim());
  for (Index j : context) {
    if (j < 0 || j >= params.num_items()) {
      throw DataError("context item index " + std::to_string(j) + " out of range");
    }
    sum += params.context_embeddings.row(j).transpose().template cast<double>();
  }
  h.context = activate<Scalar>(sum.cast<Scalar>().eval(), params.activation);
  return h;
}

/// Raw affinity h_u . w_i + w_i . v_c, accumulated in double.
template <typename Scalar>
double score(const HiddenTriple<Scalar>& h) {
  const Vector<double> item = h.item.template cast<double>();
  return h.user.template cast<double>().dot(item) +
         item.dot(h.context.template cast<double>());
}

/// Numerically stable logistic function.
inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

/// Click probability, clamped away from the log-loss singularities.
template <typename Scalar>
double predict_prob(const Parameters<Scalar>& params, Index user, Index item,
                    std::span<const Index> context) {
  const double p = sigmoid(score(hidden(params, user, item, context)));
  return std::min(1.0 - 1e-15, std::max(1e-15, p));
}

}  // namespace npe
