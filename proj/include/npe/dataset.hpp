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
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "npe/types.hpp"

namespace npe {

/// One raw interaction row as read from a log file.
struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  std::optional<double> weight;  // rating or play count, absent for pure clicks
};

/// A single binarized click, by dense 0-based indices.
struct Click {
  Index user = 0;
  Index item = 0;
  friend auto operator<=>(const Click&, const Click&) = default;
};

/// Binarized interactions with dense ids and the raw-id lookup tables.
/// `clicks` is sorted by (user, item) and holds no duplicates.
struct ClickDataset {
  Index num_users = 0;
  Index num_items = 0;
  std::vector<Click> clicks;
  std::vector<std::string> user_ids;  // index -> raw id
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, Index> user_index;  // raw id -> index
  std::unordered_map<std::string, Index> item_index;
};

/// Disjoint per-user partition of a dataset's clicks. The three parts share
/// the dataset's dimensions and id maps; their union is dataset.clicks.
struct DatasetSplit {
  ClickDataset dataset;
  std::vector<Click> train;
  std::vector<Click> validation;
  std::vector<Click> test;
  std::uint64_t seed = 0;
};

/// Per-user compressed adjacency over one set of clicks. Rows are sorted and
/// deduplicated; the structure is immutable after construction and safe to
/// share across threads.
class SparseClickMatrix {
 public:
  SparseClickMatrix() = default;
  SparseClickMatrix(Index num_users, Index num_items, std::span<const Click> clicks);

  Index num_users() const { return num_users_; }
  Index num_items() const { return num_items_; }
  Index num_clicks() const { return static_cast<Index>(items_.size()); }

  std::span<const Index> row(Index user) const {
    return {items_.data() + offsets_[user], items_.data() + offsets_[user + 1]};
  }

  /// Binary search within the user's row.
  bool contains(Index user, Index item) const;

 private:
  Index num_users_ = 0;
  Index num_items_ = 0;
  std::vector<Index> offsets_;  // size num_users_ + 1
  std::vector<Index> items_;    // sorted within each row
};

enum class FileFormat { kCsv, kTsv };

/// Column picked either by 0-based position or by header name.
using ColumnRef = std::variant<int, std::string>;

/// "2" -> position 2, anything else -> header name.
ColumnRef parse_column_ref(const std::string& text);

struct LoadOptions {
  FileFormat format = FileFormat::kCsv;
  std::optional<char> delimiter;  // overrides the format's default
  bool has_header = true;
  ColumnRef user_column = 0;
  ColumnRef item_column = 1;
  std::optional<ColumnRef> weight_column;
  // Count and skip malformed rows instead of failing. Off by default; real
  // retail exports carry rows with no customer id.
  bool skip_bad_rows = false;
};

/// Reads a delimited interaction log, one record per data row, in file order.
/// Errors name the offending line. `skipped`, when given, receives the number
/// of rows dropped in skip_bad_rows mode.
std::vector<InteractionRecord> load_interactions(const std::filesystem::path& path,
                                                 const LoadOptions& options,
                                                 std::size_t* skipped = nullptr);

/// Collapses records into a binary click set. With a threshold, a click
/// (u, i) exists iff some record for (u, i) has weight >= threshold; without
/// one, any record counts (implicit feedback). Ids are remapped to dense
/// 0-based indices in first-appearance order over the record stream, so ids
/// seen only in sub-threshold records still get an index.
ClickDataset binarize(std::span<const InteractionRecord> records,
                      std::optional<double> threshold = std::nullopt);

/// Drops users with fewer than `min_clicks` clicks and compacts user indices
/// (item indices are untouched). No-op for min_clicks <= 1.
ClickDataset filter_min_clicks(ClickDataset dataset, Index min_clicks);

/// Per-user random partition: each user's clicks are shuffled and cut at the
/// floor(r0*k) / floor((r0+r1)*k) boundaries. Users with fewer than 3 clicks
/// keep everything in train. Deterministic given the seed.
DatasetSplit split(ClickDataset dataset, const std::array<double, 3>& ratios,
                   std::uint64_t seed);

/// Groups a click view into sorted per-user rows.
SparseClickMatrix build_matrix(std::span<const Click> clicks, Index num_users,
                               Index num_items);

struct DatasetStats {
  Index users = 0;
  Index items = 0;
  Index clicks = 0;
  double density_percent = 0.0;  // 100 * clicks / (users * items)
};

DatasetStats dataset_stats(const ClickDataset& dataset);

/// Writes {train,validation,test}.csv as (user,item) raw-id pairs plus
/// users.csv / items.csv id maps into `dir`.
void write_split_manifest(const std::filesystem::path& dir, const DatasetSplit& split);

/// Rebuilds a DatasetSplit from the files written by write_split_manifest.
DatasetSplit load_split_manifest(const std::filesystem::path& dir);

/// Reads a one-column id file (users.csv / items.csv), index order preserved.
std::vector<std::string> load_id_list(const std::filesystem::path& path);

}  // namespace npe
