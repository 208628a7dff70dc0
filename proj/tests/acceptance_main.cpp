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

// End-to-end acceptance harness. Each check prints exactly one line,
// PASS / FAIL / WAIVED with a short numeric summary, and the process exits
// nonzero when any check fails. The checks are intentionally independent of
// the unit suites: oracles are recomputed here from first principles.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "npe/checkpoint.hpp"
#include "npe/dataset.hpp"
#include "npe/evaluation.hpp"
#include "npe/model.hpp"
#include "npe/query.hpp"
#include "npe/trainer.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

#ifndef NPE_CLI_BINARY
#error "NPE_CLI_BINARY must point at the command-line executable"
#endif

namespace npe {
namespace {

namespace fs = std::filesystem;

using testing::central_difference;
using testing::kink_free;
using testing::make_block_split;
using testing::make_random_examples;
using testing::make_uniform_params;
using testing::oracle_batch_loss;
using testing::oracle_mf_gradients;
using testing::oracle_ndcg;
using testing::oracle_recall;

struct Outcome {
  std::string name;
  bool pass = false;
  bool waived = false;
  std::string detail;
};

Outcome pass(std::string name, std::string detail) {
  return {std::move(name), true, false, std::move(detail)};
}
Outcome fail(std::string name, std::string detail) {
  return {std::move(name), false, false, std::move(detail)};
}
Outcome waived(std::string name, std::string detail) {
  return {std::move(name), false, true, std::move(detail)};
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream out;
  out.precision(digits);
  out << v;
  return out.str();
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients against central finite differences.

Outcome check_gradients() {
  const double kMargin = 0.02;
  const double kStep = 1e-5;
  Rng rng(881);
  int instances = 0;
  long coords = 0;
  double worst = 0.0;

  while (instances < 120) {
    const Index users = 2 + static_cast<Index>(rng() % 4);
    const Index items = 2 + static_cast<Index>(rng() % 4);
    const Index dim = 1 + static_cast<Index>(rng() % 4);
    auto params =
        make_uniform_params<double>(users, items, dim, rng, Activation::kRelu, kMargin);
    const auto batch =
        make_random_examples(users, items, 1 + static_cast<Index>(rng() % 6), rng);
    if (!kink_free(params, batch, kMargin)) continue;
    const double lambda = (instances % 3 == 0) ? 0.0 : 0.05 * double(instances % 3);

    Gradients grads;
    batch_gradients(params, std::span<const TrainExample>(batch), lambda, 0.0, 0, 0, 1,
                    grads);
    const auto loss = [&] {
      return oracle_batch_loss(params, std::span<const TrainExample>(batch), lambda);
    };

    const auto check_entry = [&](double analytic, double& entry) {
      const double fd = central_difference(entry, kStep, loss);
      const double scale = std::max(std::abs(analytic), std::abs(fd));
      const double err = std::abs(analytic - fd);
      const double band = std::max(1e-8, 1e-4 * scale);
      worst = std::max(worst, err / band);
      ++coords;
      return err <= band;
    };

    for (Index u : grads.touched_users) {
      for (Index d = 0; d < dim; ++d) {
        if (!check_entry(grads.user(u, d), params.user_embeddings(u, d))) {
          return fail("gradient_check", "user entry off at instance " +
                                            std::to_string(instances));
        }
      }
    }
    for (Index i : grads.touched_items) {
      for (Index d = 0; d < dim; ++d) {
        if (!check_entry(grads.item(i, d), params.item_embeddings(i, d))) {
          return fail("gradient_check", "item entry off at instance " +
                                            std::to_string(instances));
        }
      }
    }
    for (Index j : grads.touched_contexts) {
      for (Index d = 0; d < dim; ++d) {
        if (!check_entry(grads.context(j, d), params.context_embeddings(j, d))) {
          return fail("gradient_check", "context entry off at instance " +
                                            std::to_string(instances));
        }
      }
    }
    ++instances;
  }
  return pass("gradient_check", std::to_string(instances) + " instances, " +
                                    std::to_string(coords) +
                                    " coordinates, worst error at " + fmt(worst, 3) +
                                    " of the tolerance band");
}

// ---------------------------------------------------------------------------
// 2. Batch loss and rank metrics against brute-force recomputation.

Outcome check_oracles() {
  Rng rng(882);
  double worst_loss = 0.0;
  for (int round = 0; round < 200; ++round) {
    const Index users = 2 + static_cast<Index>(rng() % 4);
    const Index items = 2 + static_cast<Index>(rng() % 6);
    const Index dim = 1 + static_cast<Index>(rng() % 4);
    const auto params =
        make_uniform_params<double>(users, items, dim, rng, Activation::kRelu);
    const auto batch =
        make_random_examples(users, items, 1 + static_cast<Index>(rng() % 8), rng);
    const double lambda = 0.03 * double(round % 4);
    const double got = batch_loss(params, std::span<const TrainExample>(batch), lambda);
    const double want =
        oracle_batch_loss(params, std::span<const TrainExample>(batch), lambda);
    worst_loss = std::max(worst_loss, std::abs(got - want));
    if (std::abs(got - want) > 1e-10) {
      return fail("loss_metric_oracles",
                  "batch loss off by " + fmt(std::abs(got - want), 3));
    }
  }

  for (int round = 0; round < 300; ++round) {
    const Index m = 3 + static_cast<Index>(rng() % 10);
    std::vector<Index> ranked(m);
    for (Index i = 0; i < m; ++i) ranked[i] = i;
    std::shuffle(ranked.begin(), ranked.end(), rng);
    std::vector<Index> truth;
    for (Index i = 0; i < m; ++i) {
      if (rng() % 3 == 0) truth.push_back(i);
    }
    if (truth.empty()) truth.push_back(static_cast<Index>(rng() % m));
    const Index n = 1 + static_cast<Index>(rng() % (m + 2));
    if (recall_at_n(ranked, truth, n) != oracle_recall(ranked, truth, n)) {
      return fail("loss_metric_oracles", "recall mismatch at round " +
                                             std::to_string(round));
    }
    if (ndcg_at_n(ranked, truth, n) != oracle_ndcg(ranked, truth, n)) {
      return fail("loss_metric_oracles",
                  "ndcg mismatch at round " + std::to_string(round));
    }
  }
  return pass("loss_metric_oracles",
              "200 loss batches (worst abs " + fmt(worst_loss, 3) +
                  "), 500 metric evaluations exact");
}

// ---------------------------------------------------------------------------
// 3. Empty contexts reduce the model to plain matrix factorization; a zeroed
//    user table leaves exactly the item/context term.

Outcome check_mf_reduction() {
  Rng rng(883);
  double worst = 0.0;
  for (int round = 0; round < 60; ++round) {
    const Index users = 2 + static_cast<Index>(rng() % 4);
    const Index items = 2 + static_cast<Index>(rng() % 5);
    const Index dim = 1 + static_cast<Index>(rng() % 4);
    const auto params =
        make_uniform_params<double>(users, items, dim, rng, Activation::kRelu);
    auto batch = make_random_examples(users, items, 6, rng);
    for (auto& ex : batch) ex.context.clear();
    const double lambda = round % 2 == 0 ? 0.0 : 0.02;

    Gradients grads;
    batch_gradients(params, std::span<const TrainExample>(batch), lambda, 0.0, 0, 0, 1,
                    grads);
    const auto mf = oracle_mf_gradients(params, std::span<const TrainExample>(batch),
                                        lambda);
    const double user_err = (grads.user - mf.user).cwiseAbs().maxCoeff();
    const double item_err = (grads.item - mf.item).cwiseAbs().maxCoeff();
    worst = std::max({worst, user_err, item_err});
    if (user_err > 1e-10 || item_err > 1e-10 ||
        grads.context.cwiseAbs().sum() != 0.0) {
      return fail("mf_reduction", "gradient mismatch at round " + std::to_string(round));
    }

    // Score check: the context term must vanish with empty contexts, and the
    // user term must vanish when the user table is zeroed.
    for (const TrainExample& ex : batch) {
      const auto h = hidden(params, ex.user, ex.item, ex.context);
      double mf_score = 0.0;
      for (Index d = 0; d < dim; ++d) {
        mf_score += std::max(params.user_embeddings(ex.user, d), 0.0) *
                    std::max(params.item_embeddings(ex.item, d), 0.0);
      }
      if (std::abs(score(h) - mf_score) > 1e-12) {
        return fail("mf_reduction", "empty-context score disagrees with plain MF");
      }
    }
  }

  // Zeroed user table: score(u, i, ctx) collapses to the item/context term.
  for (int round = 0; round < 40; ++round) {
    const Index items = 2 + static_cast<Index>(rng() % 5);
    const Index dim = 1 + static_cast<Index>(rng() % 4);
    auto params = make_uniform_params<double>(3, items, dim, rng, Activation::kRelu);
    params.user_embeddings.setZero();
    auto batch = make_random_examples(3, items, 4, rng);
    for (const TrainExample& ex : batch) {
      const auto h = hidden(params, ex.user, ex.item, ex.context);
      const double full = score(h);
      const double context_term =
          h.item.cast<double>().dot(h.context.cast<double>());
      if (full != context_term) {
        return fail("mf_reduction", "zeroed user table leaves a residual user term");
      }
    }
  }
  return pass("mf_reduction", "60 gradient rounds (worst abs " + fmt(worst, 3) +
                                  "), 40 zeroed-user score rounds exact");
}

// ---------------------------------------------------------------------------
// 4. Negative sampler: counts, disjointness, per-user uniformity.

Outcome check_negative_sampler() {
  Rng rng(884);
  for (int round = 0; round < 20; ++round) {
    const Index users = 3 + static_cast<Index>(rng() % 10);
    const Index items = 8 + static_cast<Index>(rng() % 20);
    std::vector<Click> clicks;
    for (Index u = 0; u < users; ++u) {
      for (Index i = 0; i < items; ++i) {
        if (rng() % 3 == 0) clicks.push_back({u, i});
      }
    }
    if (clicks.empty()) clicks.push_back({0, 0});
    const SparseClickMatrix matrix(users, items, clicks);
    const Index ratio = 1 + static_cast<Index>(rng() % 6);
    const auto negatives = sample_negatives(matrix, ratio, 1000 + round);
    if (negatives.size() != clicks.size() * static_cast<std::size_t>(ratio)) {
      return fail("negative_sampler", "wrong negative count at round " +
                                          std::to_string(round));
    }
    for (const Click& c : negatives) {
      if (matrix.contains(c.user, c.item)) {
        return fail("negative_sampler", "negative collides with a positive");
      }
    }
  }

  // Uniformity: one user, 2 of 10 items clicked, 1e5 draws over the other 8.
  const SparseClickMatrix matrix(1, 10, std::vector<Click>{{0, 4}, {0, 7}});
  const auto draws = sample_negatives(matrix, 50000, 4242);
  std::map<Index, long> counts;
  for (const Click& c : draws) ++counts[c.item];
  const double sigma = std::sqrt(100000.0 * (1.0 / 8.0) * (7.0 / 8.0));
  long worst_dev = 0;
  for (const auto& [item, count] : counts) {
    worst_dev = std::max(worst_dev, std::labs(count - 12500));
  }
  if (counts.size() != 8 || static_cast<double>(worst_dev) > 3.0 * sigma) {
    return fail("negative_sampler", "uniformity outside the binomial bound, worst " +
                                        std::to_string(worst_dev));
  }
  return pass("negative_sampler", "counts and disjointness on 20 matrices; uniformity worst dev " +
                                      std::to_string(worst_dev) + " <= " +
                                      fmt(3.0 * sigma, 4));
}

// ---------------------------------------------------------------------------
// 5 and 7 share the synthetic block dataset and training setup.

TrainConfig synthetic_config(Index neg_ratio) {
  TrainConfig config;
  config.dim = 16;
  config.neg_ratio = neg_ratio;
  config.batch_size = 256;
  config.max_epochs = 120;
  config.learning_rate = 1e-3;
  config.init_sigma = 0.1;
  config.dropout_rate = 0.5;
  config.seed = 7001;
  return config;
}

double recall20(const Parameters<float>& params, const DatasetSplit& split) {
  const std::vector<Index> n_list{20};
  return evaluate(params, split, n_list).metrics.at("recall@20");
}

/// Expected Recall@20 of a uniformly random ranking: per test user, the
/// expected hit count in 20 slots over C candidates is 20 * t / C.
double random_recall_expectation(const DatasetSplit& split, Index top_n) {
  const SparseClickMatrix train_matrix =
      build_matrix(split.train, split.dataset.num_users, split.dataset.num_items);
  const SparseClickMatrix test_matrix =
      build_matrix(split.test, split.dataset.num_users, split.dataset.num_items);
  double sum = 0.0;
  long users = 0;
  for (Index u = 0; u < split.dataset.num_users; ++u) {
    const double t = static_cast<double>(test_matrix.row(u).size());
    if (t == 0.0) continue;
    const double candidates = static_cast<double>(
        split.dataset.num_items - static_cast<Index>(train_matrix.row(u).size()));
    const double expected_hits = static_cast<double>(top_n) * t / candidates;
    sum += expected_hits / std::min<double>(static_cast<double>(top_n), t);
    ++users;
  }
  return sum / static_cast<double>(users);
}

Outcome check_learnability(const DatasetSplit& split) {
  const double random_recall = random_recall_expectation(split, 20);

  auto [npe_params, npe_report] = train<float>(split, synthetic_config(4));
  const double npe = recall20(npe_params, split);

  TrainConfig mf_config = synthetic_config(4);
  mf_config.context_cap = 0;  // empty contexts: the plain-MF ablation
  auto [mf_params, mf_report] = train<float>(split, mf_config);
  const double mf = recall20(mf_params, split);

  const std::string detail = "npe " + fmt(npe, 4) + ", mf ablation " + fmt(mf, 4) +
                             ", random " + fmt(random_recall, 4);
  if (npe < 2.0 * random_recall) {
    return fail("synthetic_learnability", detail + "; npe below 2x random");
  }
  if (npe < mf) {
    return fail("synthetic_learnability", detail + "; npe below the mf ablation");
  }
  return pass("synthetic_learnability", detail);
}

Outcome check_sweep_shape(const DatasetSplit& split) {
  const std::vector<Index> ratios{1, 2, 4, 8, 16};
  std::vector<double> recalls;
  std::string detail;
  for (Index n : ratios) {
    auto [params, report] = train<float>(split, synthetic_config(n));
    recalls.push_back(recall20(params, split));
    detail += "n=" + std::to_string(n) + ":" + fmt(recalls.back(), 4) + " ";
  }
  const double best = *std::max_element(recalls.begin(), recalls.end());
  if (recalls[0] >= best) {
    return fail("neg_ratio_sweep_shape",
                detail + "(maximum at n=1: at this item-space scale fresh uniform "
                         "negatives saturate coverage at every ratio)");
  }
  return pass("neg_ratio_sweep_shape", detail);
}

// ---------------------------------------------------------------------------
// 6. Reproduction on the retail corpus, when a copy is available.

Outcome check_retail_reproduction() {
  const char* env = std::getenv("NPE_ONLINE_RETAIL_CSV");
  if (env == nullptr || !fs::exists(env)) {
    return waived("desk_scale_reproduction",
                  "set NPE_ONLINE_RETAIL_CSV to the retail transaction CSV to run; "
                  "covered by synthetic_learnability otherwise");
  }

  LoadOptions options;
  options.format = FileFormat::kCsv;
  options.has_header = true;
  options.user_column = std::string("CustomerID");
  options.item_column = std::string("StockCode");
  options.skip_bad_rows = true;  // rows without a customer id
  std::size_t skipped = 0;
  const auto records = load_interactions(env, options, &skipped);
  ClickDataset dataset = binarize(records, std::nullopt);
  const DatasetStats stats = dataset_stats(dataset);
  DatasetSplit split = npe::split(std::move(dataset), {0.7, 0.1, 0.2}, 42);

  TrainConfig config;
  config.dim = 64;
  config.neg_ratio = 4;
  config.batch_size = 10000;
  config.max_epochs = 50;
  config.learning_rate = 1e-3;
  config.early_stop_patience = 5;
  config.seed = 42;
  auto [params, report] = train<float>(split, config);
  const double recall = recall20(params, split);

  const std::string detail =
      "users " + std::to_string(stats.users) + ", items " + std::to_string(stats.items) +
      ", clicks " + std::to_string(stats.clicks) + ", skipped rows " +
      std::to_string(skipped) + ", recall@20 " + fmt(recall, 4) +
      " (target band 0.1837..0.2755)";
  if (recall < 0.2296 * 0.8 || recall > 0.2296 * 1.2) {
    return fail("desk_scale_reproduction", detail);
  }
  return pass("desk_scale_reproduction", detail);
}

// ---------------------------------------------------------------------------
// 8. Byte-level determinism of the command-line pipeline across processes
//    and working directories.

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

int run_in(const fs::path& cwd, const std::string& command) {
  const std::string full =
      "cd \"" + cwd.string() + "\" && " + command + " > cmd_out.txt 2> cmd_err.txt";
  return std::system(full.c_str());
}

Outcome check_determinism() {
  const fs::path root =
      fs::temp_directory_path() / ("npe_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const fs::path dir_a = root / "a";
  const fs::path dir_b = root / "b";
  fs::create_directories(dir_a);
  fs::create_directories(dir_b);

  const fs::path clicks = root / "clicks.csv";
  {
    std::ofstream out(clicks);
    out << "user,item\n";
    for (int u = 0; u < 12; ++u) {
      const int base = u < 6 ? 0 : 10;
      for (int j = 0; j < 10; ++j) out << "u" << u << ",i" << (base + j) << "\n";
    }
  }

  const std::string npe = std::string("\"") + NPE_CLI_BINARY + "\"";
  const std::string prepare =
      npe + " prepare --input \"" + clicks.string() + "\" --split-dir split --seed 11";
  if (run_in(dir_a, prepare) != 0 || run_in(dir_b, prepare) != 0) {
    fs::remove_all(root);
    return fail("determinism", "prepare run failed; see the pipeline smoke tests");
  }
  for (const char* name :
       {"users.csv", "items.csv", "train.csv", "validation.csv", "test.csv"}) {
    if (slurp(dir_a / "split" / name) != slurp(dir_b / "split" / name)) {
      fs::remove_all(root);
      return fail("determinism", std::string("split manifests differ in ") + name);
    }
  }

  const std::string train_cmd =
      npe + " train --split-dir split --dim 8 --epochs 4 --lr 0.05 --seed 11"
            " --deterministic --checkpoint model.npe --report train.json";
  const std::string eval_cmd =
      npe + " eval --split-dir split --checkpoint model.npe --deterministic"
            " --report eval.json";
  for (const fs::path& dir : {dir_a, dir_b}) {
    if (run_in(dir, train_cmd) != 0) {
      fs::remove_all(root);
      return fail("determinism", "train run failed in " + dir.string());
    }
    if (run_in(dir, eval_cmd) != 0) {
      fs::remove_all(root);
      return fail("determinism", "eval run failed in " + dir.string());
    }
  }

  for (const char* name : {"model.npe", "train.json", "eval.json"}) {
    const std::string a = slurp(dir_a / name);
    const std::string b = slurp(dir_b / name);
    if (a.empty() || a != b) {
      fs::remove_all(root);
      return fail("determinism", std::string(name) + " differs between runs");
    }
  }
  fs::remove_all(root);
  return pass("determinism",
              "prepare/train/eval byte-identical across processes and directories");
}

}  // namespace
}  // namespace npe

int main() {
  using npe::Outcome;
  std::vector<Outcome> results;

  const auto guard = [&results](const char* name, auto&& check) {
    const auto start = std::chrono::steady_clock::now();
    try {
      results.push_back(check());
    } catch (const std::exception& e) {
      results.push_back(npe::fail(name, std::string("exception: ") + e.what()));
    }
    const std::chrono::duration<double> elapsed =
        std::chrono::steady_clock::now() - start;
    std::ostringstream stamp;
    stamp.precision(1);
    stamp << std::fixed << " [" << elapsed.count() << "s]";
    results.back().detail += stamp.str();
  };

  guard("gradient_check", npe::check_gradients);
  guard("loss_metric_oracles", npe::check_oracles);
  guard("mf_reduction", npe::check_mf_reduction);
  guard("negative_sampler", npe::check_negative_sampler);

  // Criteria 5 and 7 share one synthetic dataset: 200 users x 200 items in 4
  // blocks, 90/10 per-user split.
  const npe::DatasetSplit synthetic =
      npe::testing::make_block_split(200, 200, 4, 0.3, 0.9, 20260812);
  guard("synthetic_learnability",
        [&synthetic] { return npe::check_learnability(synthetic); });
  guard("desk_scale_reproduction", npe::check_retail_reproduction);
  guard("neg_ratio_sweep_shape",
        [&synthetic] { return npe::check_sweep_shape(synthetic); });
  guard("determinism", npe::check_determinism);

  bool any_fail = false;
  for (const Outcome& o : results) {
    const char* status = o.pass ? "PASS" : (o.waived ? "WAIVED" : "FAIL");
    if (!o.pass && !o.waived) any_fail = true;
    std::cout << status << " " << o.name << " - " << o.detail << "\n";
  }
  return any_fail ? 1 : 0;
}
