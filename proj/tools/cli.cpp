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

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "npe/checkpoint.hpp"
#include "npe/dataset.hpp"
#include "npe/errors.hpp"
#include "npe/evaluation.hpp"
#include "npe/query.hpp"
#include "npe/run_config.hpp"
#include "npe/trainer.hpp"

namespace npe::cli {
namespace {

namespace fs = std::filesystem;

std::string with_commas(Index value) {
  std::string digits = std::to_string(value);
  std::string out;
  int run = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (run == 3) {
      out.push_back(',');
      run = 0;
    }
    out.push_back(*it);
    ++run;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::string fixed_decimals(double value, int decimals) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.*f", decimals, value);
  return buffer;
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(text);
  while (std::getline(in, part, ',')) parts.push_back(part);
  return parts;
}

std::vector<Index> parse_index_list(const std::string& text, const char* flag) {
  std::vector<Index> values;
  for (const std::string& part : split_list(text)) {
    try {
      std::size_t used = 0;
      values.push_back(static_cast<Index>(std::stoll(part, &used)));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "expected comma-separated integers, got '" +
                                           text + "'");
    }
  }
  if (values.empty()) throw CLI::ValidationError(flag, "list is empty");
  return values;
}

std::array<double, 3> parse_ratio_triple(const std::string& text, const char* flag) {
  const std::vector<std::string> parts = split_list(text);
  if (parts.size() != 3) {
    throw CLI::ValidationError(flag, "expected three comma-separated ratios");
  }
  std::array<double, 3> ratios{};
  for (std::size_t k = 0; k < 3; ++k) {
    try {
      std::size_t used = 0;
      ratios[k] = std::stod(parts[k], &used);
      if (used != parts[k].size()) throw std::invalid_argument(parts[k]);
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "expected three comma-separated ratios, got '" +
                                           text + "'");
    }
  }
  return ratios;
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failure on " + path.string());
}

LoadOptions load_options_from(const RunConfig& cfg) {
  LoadOptions options;
  options.format = cfg.format == "tsv" ? FileFormat::kTsv : FileFormat::kCsv;
  options.has_header = !cfg.no_header;
  options.user_column = parse_column_ref(cfg.user_col);
  options.item_column = parse_column_ref(cfg.item_col);
  if (!cfg.weight_col.empty()) options.weight_column = parse_column_ref(cfg.weight_col);
  options.skip_bad_rows = cfg.skip_bad_rows;
  return options;
}

/// Raw log -> binarized, filtered, split dataset, honoring the config's
/// column, threshold, and ratio settings.
DatasetSplit prepare_split(const RunConfig& cfg, std::ostream& err) {
  if (cfg.input.empty()) throw DataError("no --input file given");
  const LoadOptions options = load_options_from(cfg);
  std::size_t skipped = 0;
  const std::vector<InteractionRecord> records =
      load_interactions(cfg.input, options, &skipped);
  if (skipped > 0) {
    err << "skipped " << skipped << " malformed rows in " << cfg.input << "\n";
  }
  // Rating-style data defaults to the >= 4 binarization rule when no explicit
  // threshold is given.
  std::optional<double> threshold = cfg.threshold;
  if (!threshold && !cfg.weight_col.empty()) threshold = 4.0;
  ClickDataset dataset = binarize(records, threshold);
  dataset = filter_min_clicks(std::move(dataset), cfg.min_clicks);
  return split(std::move(dataset), cfg.split_ratios, cfg.train.seed);
}

/// Loads the manifest when --split-dir is set, otherwise prepares in memory.
DatasetSplit obtain_split(const RunConfig& cfg, std::ostream& err) {
  if (!cfg.split_dir.empty()) return load_split_manifest(cfg.split_dir);
  return prepare_split(cfg, err);
}

nlohmann::json eval_report_json(const EvalReport& report) {
  nlohmann::json j;
  j["users_evaluated"] = report.users_evaluated;
  j["metrics"] = report.metrics;
  for (const auto& [name, segment] : report.segments) {
    j["segments"][name] = {{"users", segment.users}, {"metrics", segment.metrics}};
  }
  return j;
}

void write_per_user_csv(const fs::path& path, const RunConfig& cfg,
                        const DatasetSplit& split,
                        const std::vector<UserMetrics>& rows) {
  std::ostringstream out;
  out << "user,segment";
  for (Index n : cfg.eval_n) out << ",recall@" << n;
  for (Index n : cfg.eval_n) out << ",ndcg@" << n;
  out << "\n";
  for (const UserMetrics& row : rows) {
    out << csv_quote(split.dataset.user_ids[row.user]) << ','
        << segment_name(row.segment);
    for (double v : row.recall) out << ',' << fixed_decimals(v, 6);
    for (double v : row.ndcg) out << ',' << fixed_decimals(v, 6);
    out << "\n";
  }
  write_text_file(path, out.str());
}

int cmd_prepare(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const DatasetSplit result = prepare_split(cfg, err);
  if (cfg.split_dir.empty()) throw DataError("prepare needs --split-dir");
  write_split_manifest(cfg.split_dir, result);

  const DatasetStats stats = dataset_stats(result.dataset);
  out << "# users: " << with_commas(stats.users) << "\n";
  out << "# items: " << with_commas(stats.items) << "\n";
  out << "# clicks: " << with_commas(stats.clicks) << "\n";
  out << "% clicks: " << fixed_decimals(stats.density_percent, 2) << "%\n";
  out << "train/validation/test: " << with_commas(static_cast<Index>(result.train.size()))
      << " / " << with_commas(static_cast<Index>(result.validation.size())) << " / "
      << with_commas(static_cast<Index>(result.test.size())) << "\n";
  return 0;
}

nlohmann::json train_report_json(const RunConfig& cfg, const TrainReport& report) {
  nlohmann::json j;
  j["config"] = cfg;
  j["train_loss"] = report.train_loss;
  j["validation_loss"] = report.validation_loss;  // NaN serializes as null
  j["stopped_epoch"] = report.stopped_epoch;
  j["best_epoch"] = report.best_epoch;
  // Wall-clock timings vary between runs; keep them out of reports that are
  // promised to be byte-reproducible.
  if (!cfg.train.deterministic) j["epoch_seconds"] = report.epoch_seconds;
  return j;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const DatasetSplit split = obtain_split(cfg, err);
  auto [params, report] = train<float>(split, cfg.train, &err);

  if (!cfg.checkpoint.empty()) {
    const fs::path path(cfg.checkpoint);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    save_checkpoint(path, params, cfg.split_dir);
  }
  if (!cfg.report.empty()) {
    write_text_file(cfg.report, train_report_json(cfg, report).dump(2) + "\n");
  }
  out << "trained " << report.stopped_epoch << " epochs, best epoch "
      << report.best_epoch << ", final train loss "
      << fixed_decimals(report.train_loss.back(), 6) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.split_dir.empty()) throw DataError("eval needs --split-dir");
  if (cfg.checkpoint.empty()) throw DataError("eval needs --checkpoint");
  const DatasetSplit split = load_split_manifest(cfg.split_dir);
  const Checkpoint checkpoint = load_checkpoint(cfg.checkpoint);

  const int threads = cfg.train.deterministic ? 1 : cfg.train.threads;
  std::vector<UserMetrics> per_user;
  const EvalReport report =
      evaluate(checkpoint.params, split, cfg.eval_n, threads,
               cfg.per_user_csv.empty() ? nullptr : &per_user);

  if (!cfg.report.empty()) {
    write_text_file(cfg.report, eval_report_json(report).dump(2) + "\n");
  }
  if (!cfg.per_user_csv.empty()) {
    write_per_user_csv(cfg.per_user_csv, cfg, split, per_user);
  }
  out << "users evaluated: " << report.users_evaluated << "\n";
  for (const auto& [key, value] : report.metrics) {
    out << key << ": " << fixed_decimals(value, 6) << "\n";
  }
  for (const auto& [name, segment] : report.segments) {
    out << "segment " << name << " (" << segment.users << " users)";
    for (const auto& [key, value] : segment.metrics) {
      out << " " << key << "=" << fixed_decimals(value, 6);
    }
    out << "\n";
  }
  (void)err;
  return 0;
}

struct QueryArgs {
  std::string user;
  std::string item;
  Index k = 5;
};

/// Locates the id-map directory: --split-dir wins, falling back to the
/// checkpoint's own reference resolved against the checkpoint's directory.
fs::path id_map_dir(const RunConfig& cfg, const Checkpoint& checkpoint) {
  if (!cfg.split_dir.empty()) return cfg.split_dir;
  if (checkpoint.id_map.empty()) {
    throw DataError("checkpoint carries no id map; pass --split-dir");
  }
  fs::path ref(checkpoint.id_map);
  if (ref.is_relative()) ref = fs::path(cfg.checkpoint).parent_path() / ref;
  return ref;
}

Index find_id(const std::vector<std::string>& ids, const std::string& raw,
              const char* kind) {
  const auto it = std::find(ids.begin(), ids.end(), raw);
  if (it == ids.end()) {
    throw DataError(std::string("unknown ") + kind + " id '" + raw + "'");
  }
  return static_cast<Index>(it - ids.begin());
}

nlohmann::json scored_json(const std::vector<ScoredItem>& items,
                           const std::vector<std::string>& item_ids) {
  nlohmann::json j = nlohmann::json::array();
  for (const ScoredItem& s : items) {
    j.push_back({{"item", item_ids[s.item]}, {"score", s.score}});
  }
  return j;
}

int cmd_query(const std::string& kind, const RunConfig& cfg, const QueryArgs& args,
              std::ostream& out, std::ostream& err) {
  if (cfg.checkpoint.empty()) throw DataError("query needs --checkpoint");
  const Checkpoint checkpoint = load_checkpoint(cfg.checkpoint);

  if (kind == "recommend") {
    const DatasetSplit split = load_split_manifest(id_map_dir(cfg, checkpoint));
    if (split.dataset.num_users != checkpoint.params.num_users() ||
        split.dataset.num_items != checkpoint.params.num_items()) {
      throw DataError("checkpoint and split manifest disagree on shapes");
    }
    const Index user = find_id(split.dataset.user_ids, args.user, "user");
    const SparseClickMatrix train_matrix =
        build_matrix(split.train, split.dataset.num_users, split.dataset.num_items);
    const auto results =
        recommend_top_n(checkpoint.params, user, train_matrix.row(user), args.k);
    if (results.empty()) {
      err << "user '" << args.user << "' has clicked every item; nothing to recommend\n";
    }
    out << scored_json(results, split.dataset.item_ids).dump(2) << "\n";
    return 0;
  }

  const std::vector<std::string> item_ids =
      load_id_list(id_map_dir(cfg, checkpoint) / "items.csv");
  if (static_cast<Index>(item_ids.size()) != checkpoint.params.num_items()) {
    throw DataError("checkpoint and id map disagree on the item count");
  }
  const Index item = find_id(item_ids, args.item, "item");
  const auto results = kind == "similar"
                           ? similar_items(checkpoint.params, item, args.k)
                           : co_purchased(checkpoint.params, item, args.k);
  out << scored_json(results, item_ids).dump(2) << "\n";
  return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::vector<Index>& dims,
              const std::vector<Index>& neg_ratios, const std::string& output,
              std::ostream& out, std::ostream& err) {
  const DatasetSplit split = obtain_split(cfg, err);

  std::ostringstream csv;
  csv << "dim,neg_ratio,users_evaluated";
  for (Index n : cfg.eval_n) csv << ",recall@" << n;
  for (Index n : cfg.eval_n) csv << ",ndcg@" << n;
  csv << ",status\n";

  const int threads = cfg.train.deterministic ? 1 : cfg.train.threads;
  for (Index dim : dims) {
    for (Index neg : neg_ratios) {
      TrainConfig train_config = cfg.train;
      train_config.dim = dim;
      train_config.neg_ratio = neg;
      csv << dim << ',' << neg;
      try {
        auto [params, report] = train<float>(split, train_config, &err);
        const EvalReport eval = evaluate(params, split, cfg.eval_n, threads);
        csv << ',' << eval.users_evaluated;
        for (Index n : cfg.eval_n) {
          csv << ',' << fixed_decimals(eval.metrics.at(detail::metric_key("recall", n)), 6);
        }
        for (Index n : cfg.eval_n) {
          csv << ',' << fixed_decimals(eval.metrics.at(detail::metric_key("ndcg", n)), 6);
        }
        csv << ",ok\n";
      } catch (const std::exception& e) {
        // One bad cell must not kill the grid; record it and move on.
        csv << ",0";
        for (std::size_t k = 0; k < 2 * cfg.eval_n.size(); ++k) csv << ',';
        csv << ',' << csv_quote(std::string("error: ") + e.what()) << "\n";
        err << "sweep cell dim=" << dim << " neg=" << neg << " failed: " << e.what()
            << "\n";
      }
    }
  }
  const std::string table = csv.str();
  if (!output.empty()) write_text_file(output, table);
  out << table;
  return 0;
}

/// Pulls the --config file (if any) out of the raw arguments so its values
/// can seed the defaults before CLI11 applies explicit flags on top.
std::optional<std::string> find_config_path(const std::vector<std::string>& args) {
  for (std::size_t k = 0; k < args.size(); ++k) {
    if (args[k] == "--config" && k + 1 < args.size()) return args[k + 1];
    if (args[k].rfind("--config=", 0) == 0) return args[k].substr(9);
  }
  return std::nullopt;
}

void overlay_config_file(const std::string& path, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad config file " + path + ": " + e.what());
  }
  j.get_to(cfg);
}

void add_config_flag(CLI::App* app, std::string& config_path) {
  app->add_option("--config", config_path,
                  "JSON config file; explicit flags override its values");
}

void add_data_flags(CLI::App* app, RunConfig& cfg) {
  app->add_option("--input", cfg.input, "raw interaction log (CSV/TSV)");
  app->add_option("--format", cfg.format, "input format")
      ->check(CLI::IsMember({"csv", "tsv"}));
  app->add_flag("--no-header", cfg.no_header, "input has no header row");
  app->add_option("--user-col", cfg.user_col, "user column, position or header name");
  app->add_option("--item-col", cfg.item_col, "item column, position or header name");
  app->add_option("--weight-col", cfg.weight_col,
                  "weight/rating column; enables thresholding");
  app->add_option("--threshold", cfg.threshold,
                  "min weight that counts as a click (default 4 when a weight "
                  "column is set)");
  app->add_flag("--skip-bad-rows", cfg.skip_bad_rows,
                "skip malformed rows instead of failing");
  app->add_option("--min-clicks", cfg.min_clicks,
                  "drop users with fewer clicks than this");
}

void add_split_flags(CLI::App* app, RunConfig& cfg, std::string& split_text) {
  app->add_option("--split", split_text,
                  "train,validation,test ratios (default 0.7,0.1,0.2)");
  app->add_option("--split-dir", cfg.split_dir, "split manifest directory");
  app->add_option("--seed", cfg.train.seed, "root random seed");
}

void add_train_flags(CLI::App* app, RunConfig& cfg) {
  app->add_option("--dim", cfg.train.dim, "embedding dimension");
  app->add_option("--neg-ratio", cfg.train.neg_ratio, "negatives per positive");
  app->add_option("--batch-size", cfg.train.batch_size, "mini-batch size");
  app->add_option("--epochs", cfg.train.max_epochs, "max training epochs");
  app->add_option("--lr", cfg.train.learning_rate, "Adam learning rate");
  app->add_option("--lambda", cfg.train.lambda, "L2 weight on touched rows");
  app->add_option("--dropout", cfg.train.dropout_rate,
                  "dropout rate on the hidden vectors");
  app->add_option("--init-sigma", cfg.train.init_sigma, "Gaussian init scale");
  app->add_option("--patience", cfg.train.early_stop_patience,
                  "early-stop patience in epochs");
  app->add_option("--context-cap", cfg.train.context_cap,
                  "subsample contexts to this size; 0 forces empty contexts "
                  "(pure MF)");
  app->add_option_function<std::string>(
         "--neg-sampling",
         [&cfg](const std::string& v) {
           cfg.train.negative_sampling = negative_sampling_from_name(v);
         },
         "negative sampling distribution")
      ->check(CLI::IsMember({"uniform", "popularity"}));
  app->add_option_function<std::string>(
         "--activation",
         [&cfg](const std::string& v) {
           cfg.train.activation = activation_from_name(v);
         },
         "hidden activation")
      ->check(CLI::IsMember({"relu", "identity"}));
}

void add_run_flags(CLI::App* app, RunConfig& cfg) {
  app->add_option("--threads", cfg.train.threads, "worker threads");
  app->add_flag("--deterministic", cfg.train.deterministic,
                "force sequential, byte-reproducible execution");
}

void add_output_flags(CLI::App* app, RunConfig& cfg) {
  app->add_option("--checkpoint", cfg.checkpoint, "model checkpoint path");
  app->add_option("--report", cfg.report, "JSON report path");
}

void add_eval_flags(CLI::App* app, RunConfig& cfg, std::string& n_text) {
  app->add_option("--n", n_text, "ranking cutoffs (default 5,10,20)");
  app->add_option("--per-user", cfg.per_user_csv, "per-user metrics CSV path");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  std::string config_path, split_text, n_text;
  std::string query_kind;
  QueryArgs query_args;
  std::string dims_text, negs_text, sweep_output = "sweep.csv";

  CLI::App app{"Neural personalized embedding recommender"};
  app.name("npe");
  app.require_subcommand(1);
  add_config_flag(&app, config_path);

  CLI::App* prepare = app.add_subcommand("prepare", "binarize and split a click log");
  add_config_flag(prepare, config_path);
  add_data_flags(prepare, cfg);
  add_split_flags(prepare, cfg, split_text);

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a split");
  add_config_flag(train_cmd, config_path);
  add_data_flags(train_cmd, cfg);
  add_split_flags(train_cmd, cfg, split_text);
  add_train_flags(train_cmd, cfg);
  add_run_flags(train_cmd, cfg);
  add_output_flags(train_cmd, cfg);

  CLI::App* eval_cmd = app.add_subcommand("eval", "rank and score the test split");
  add_config_flag(eval_cmd, config_path);
  eval_cmd->add_option("--split-dir", cfg.split_dir, "split manifest directory");
  eval_cmd->add_option("--checkpoint", cfg.checkpoint, "model checkpoint path");
  eval_cmd->add_option("--report", cfg.report, "JSON report path");
  add_eval_flags(eval_cmd, cfg, n_text);
  add_run_flags(eval_cmd, cfg);

  CLI::App* query_cmd = app.add_subcommand("query", "query a trained model");
  for (const char* kind : {"recommend", "similar", "copurchase"}) {
    CLI::App* sub = query_cmd->add_subcommand(
        kind, kind == std::string("recommend") ? "personalized top-n items"
              : kind == std::string("similar") ? "nearest items by embedding cosine"
                                               : "items that accompany this one");
    add_config_flag(sub, config_path);
    sub->add_option("--checkpoint", cfg.checkpoint, "model checkpoint path");
    sub->add_option("--split-dir", cfg.split_dir,
                    "split manifest directory (id maps and histories)");
    sub->add_option("--k", query_args.k, "results to return");
    if (kind == std::string("recommend")) {
      sub->add_option("--user", query_args.user, "raw user id")->required();
    } else {
      sub->add_option("--item", query_args.item, "raw item id")->required();
    }
    sub->callback([&query_kind, kind] { query_kind = kind; });
  }
  query_cmd->require_subcommand(1);

  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "train/eval over a hyperparameter grid");
  add_config_flag(sweep_cmd, config_path);
  add_data_flags(sweep_cmd, cfg);
  add_split_flags(sweep_cmd, cfg, split_text);
  add_train_flags(sweep_cmd, cfg);
  add_run_flags(sweep_cmd, cfg);
  sweep_cmd->add_option("--dims", dims_text, "embedding sizes, e.g. 8,16,32,64");
  sweep_cmd->add_option("--neg-ratios", negs_text,
                        "negative sampling ratios, e.g. 1,2,4,8");
  sweep_cmd->add_option("--output", sweep_output, "sweep CSV path");
  add_eval_flags(sweep_cmd, cfg, n_text);

  try {
    // Config file first, then flags on top of it.
    if (const auto path = find_config_path(args)) overlay_config_file(*path, cfg);

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("npe");
    for (const std::string& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());

    if (!split_text.empty()) {
      cfg.split_ratios = parse_ratio_triple(split_text, "--split");
    }
    if (!n_text.empty()) cfg.eval_n = parse_index_list(n_text, "--n");

    if (app.got_subcommand(prepare)) return cmd_prepare(cfg, out, err);
    if (app.got_subcommand(train_cmd)) return cmd_train(cfg, out, err);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(cfg, out, err);
    if (app.got_subcommand(query_cmd)) {
      return cmd_query(query_kind, cfg, query_args, out, err);
    }
    if (app.got_subcommand(sweep_cmd)) {
      const std::vector<Index> dims =
          dims_text.empty() ? std::vector<Index>{cfg.train.dim}
                            : parse_index_list(dims_text, "--dims");
      const std::vector<Index> negs =
          negs_text.empty() ? std::vector<Index>{cfg.train.neg_ratio}
                            : parse_index_list(negs_text, "--neg-ratios");
      return cmd_sweep(cfg, dims, negs, sweep_output, out, err);
    }
    throw DataError("no command selected");
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace npe::cli
