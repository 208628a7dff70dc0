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

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "npe/trainer.hpp"
#include "npe/types.hpp"

namespace npe {

/// Everything a run needs: data options, training hyperparameters, and
/// evaluation cutoffs. Serializes to JSON losslessly; flags overlay a config
/// file, which overlays the defaults below.
struct RunConfig {
  std::string input;      // raw interaction log path
  std::string split_dir;  // split manifest directory
  std::string format = "csv";
  bool no_header = false;
  std::string user_col = "0";   // position or header name
  std::string item_col = "1";
  std::string weight_col;       // empty: no weight column
  std::optional<double> threshold;  // min weight that counts as a click
  bool skip_bad_rows = false;
  Index min_clicks = 1;
  std::array<double, 3> split_ratios{0.7, 0.1, 0.2};

  TrainConfig train;

  std::vector<Index> eval_n{5, 10, 20};

  std::string checkpoint;
  std::string report;
  std::string per_user_csv;
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"input", c.input},
      {"split_dir", c.split_dir},
      {"format", c.format},
      {"no_header", c.no_header},
      {"user_col", c.user_col},
      {"item_col", c.item_col},
      {"weight_col", c.weight_col},
      {"skip_bad_rows", c.skip_bad_rows},
      {"min_clicks", c.min_clicks},
      {"split_ratios", c.split_ratios},
      {"dim", c.train.dim},
      {"neg_ratio", c.train.neg_ratio},
      {"batch_size", c.train.batch_size},
      {"epochs", c.train.max_epochs},
      {"lr", c.train.learning_rate},
      {"adam_beta1", c.train.adam_beta1},
      {"adam_beta2", c.train.adam_beta2},
      {"adam_eps", c.train.adam_eps},
      {"lambda", c.train.lambda},
      {"dropout", c.train.dropout_rate},
      {"init_sigma", c.train.init_sigma},
      {"patience", c.train.early_stop_patience},
      {"negative_sampling", negative_sampling_name(c.train.negative_sampling)},
      {"activation", activation_name(c.train.activation)},
      {"threads", c.train.threads},
      {"deterministic", c.train.deterministic},
      {"seed", c.train.seed},
      {"eval_n", c.eval_n},
      {"checkpoint", c.checkpoint},
      {"report", c.report},
      {"per_user_csv", c.per_user_csv},
  };
  j["threshold"] = c.threshold ? nlohmann::json(*c.threshold) : nlohmann::json();
  j["context_cap"] =
      c.train.context_cap ? nlohmann::json(*c.train.context_cap) : nlohmann::json();
}

/// Overlay: only keys present in `j` are assigned, so a partial config file
/// leaves the remaining fields at their prior values.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key) && !j.at(key).is_null()) j.at(key).get_to(field);
  };
  get("input", c.input);
  get("split_dir", c.split_dir);
  get("format", c.format);
  get("no_header", c.no_header);
  get("user_col", c.user_col);
  get("item_col", c.item_col);
  get("weight_col", c.weight_col);
  get("skip_bad_rows", c.skip_bad_rows);
  get("min_clicks", c.min_clicks);
  get("split_ratios", c.split_ratios);
  get("dim", c.train.dim);
  get("neg_ratio", c.train.neg_ratio);
  get("batch_size", c.train.batch_size);
  get("epochs", c.train.max_epochs);
  get("lr", c.train.learning_rate);
  get("adam_beta1", c.train.adam_beta1);
  get("adam_beta2", c.train.adam_beta2);
  get("adam_eps", c.train.adam_eps);
  get("lambda", c.train.lambda);
  get("dropout", c.train.dropout_rate);
  get("init_sigma", c.train.init_sigma);
  get("patience", c.train.early_stop_patience);
  get("threads", c.train.threads);
  get("deterministic", c.train.deterministic);
  get("seed", c.train.seed);
  get("eval_n", c.eval_n);
  get("checkpoint", c.checkpoint);
  get("report", c.report);
  get("per_user_csv", c.per_user_csv);
  if (j.contains("threshold")) {
    c.threshold = j.at("threshold").is_null()
                      ? std::nullopt
                      : std::optional<double>(j.at("threshold").get<double>());
  }
  if (j.contains("context_cap")) {
    c.train.context_cap = j.at("context_cap").is_null()
                              ? std::nullopt
                              : std::optional<Index>(j.at("context_cap").get<Index>());
  }
  if (j.contains("negative_sampling")) {
    c.train.negative_sampling =
        negative_sampling_from_name(j.at("negative_sampling").get<std::string>());
  }
  if (j.contains("activation")) {
    c.train.activation = activation_from_name(j.at("activation").get<std::string>());
  }
}

}  // namespace npe
