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

#include "npe/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "npe/errors.hpp"
#include "npe/rng.hpp"

namespace npe {
namespace {

// Splits one physical line into fields. Supports RFC 4180 quoting: a field
// starting with '"' runs to the matching quote, with "" as an escaped quote.
// Newlines inside quotes are not supported; interaction logs are line records.
std::vector<std::string> split_fields(const std::string& line, char delimiter,
                                      std::size_t line_number) {
  std::vector<std::string> fields;
  std::string field;
  std::size_t i = 0;
  const std::size_t n = line.size();
  while (true) {
    field.clear();
    if (i < n && line[i] == '"') {
      ++i;
      bool closed = false;
      while (i < n) {
        if (line[i] == '"') {
          if (i + 1 < n && line[i + 1] == '"') {
            field.push_back('"');
            i += 2;
          } else {
            ++i;
            closed = true;
            break;
          }
        } else {
          field.push_back(line[i]);
          ++i;
        }
      }
      if (!closed) {
        throw DataError("line " + std::to_string(line_number) +
                        ": unterminated quoted field");
      }
    } else {
      while (i < n && line[i] != delimiter) {
        field.push_back(line[i]);
        ++i;
      }
    }
    fields.push_back(std::move(field));
    if (i >= n) break;
    if (line[i] != delimiter) {
      throw DataError("line " + std::to_string(line_number) +
                      ": garbage after closing quote");
    }
    ++i;  // consume the delimiter; a trailing one yields an empty last field
  }
  return fields;
}

// Quotes a field for CSV output when it contains characters that would
// otherwise change the row's shape.
std::string quote_field(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

struct ColumnPlan {
  int user = -1;
  int item = -1;
  int weight = -1;  // -1 when no weight column was requested
};

int resolve_column(const ColumnRef& ref, const std::vector<std::string>& header,
                   bool has_header, const char* role) {
  if (const int* pos = std::get_if<int>(&ref)) {
    if (*pos < 0) {
      throw DataError(std::string(role) + " column index must be non-negative");
    }
    return *pos;
  }
  const std::string& name = std::get<std::string>(ref);
  if (!has_header) {
    throw DataError(std::string(role) + " column '" + name +
                    "' referenced by name but the file has no header");
  }
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  throw DataError(std::string(role) + " column '" + name + "' not found in header");
}

double parse_weight(const std::string& text, std::size_t line_number) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  // Tolerate surrounding spaces; exports pad numeric cells.
  while (begin < end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(end[-1]))) --end;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError("line " + std::to_string(line_number) + ": bad weight '" +
                    text + "'");
  }
  return value;
}

// Packs a (user, item) pair into one key for duplicate detection. Indices are
// dense and far below 2^32 for any dataset this engine targets.
std::uint64_t pair_key(Index user, Index item) {
  return (static_cast<std::uint64_t>(user) << 32) | static_cast<std::uint64_t>(item);
}

Index intern(const std::string& id, std::unordered_map<std::string, Index>& index,
             std::vector<std::string>& ids) {
  auto [it, inserted] = index.try_emplace(id, static_cast<Index>(ids.size()));
  if (inserted) ids.push_back(id);
  return it->second;
}

// floor with a one-ulp-scale guard: 0.7 * 10 sits just below 7 in binary and
// must still cut at 7.
Index ratio_cut(double ratio, Index count) {
  return static_cast<Index>(std::floor(ratio * static_cast<double>(count) + 1e-9));
}

std::vector<Click> load_click_pairs(const std::filesystem::path& path,
                                    const ClickDataset& dataset) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Click> clicks;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line, ',', line_number);
    if (fields.size() != 2) {
      throw DataError(path.string() + " line " + std::to_string(line_number) +
                      ": expected 2 fields, got " + std::to_string(fields.size()));
    }
    auto user_it = dataset.user_index.find(fields[0]);
    auto item_it = dataset.item_index.find(fields[1]);
    if (user_it == dataset.user_index.end() || item_it == dataset.item_index.end()) {
      throw DataError(path.string() + " line " + std::to_string(line_number) +
                      ": id not present in the manifest id maps");
    }
    clicks.push_back({user_it->second, item_it->second});
  }
  return clicks;
}

}  // namespace

SparseClickMatrix::SparseClickMatrix(Index num_users, Index num_items,
                                     std::span<const Click> clicks)
    : num_users_(num_users), num_items_(num_items) {
  offsets_.assign(static_cast<std::size_t>(num_users) + 1, 0);
  for (const Click& c : clicks) {
    if (c.user < 0 || c.user >= num_users || c.item < 0 || c.item >= num_items) {
      throw DataError("click (" + std::to_string(c.user) + ", " +
                      std::to_string(c.item) + ") out of range for " +
                      std::to_string(num_users) + " x " + std::to_string(num_items));
    }
    ++offsets_[static_cast<std::size_t>(c.user) + 1];
  }
  std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
  items_.resize(clicks.size());
  std::vector<Index> cursor(offsets_.begin(), offsets_.end() - 1);
  for (const Click& c : clicks) {
    items_[static_cast<std::size_t>(cursor[c.user]++)] = c.item;
  }
  for (Index u = 0; u < num_users_; ++u) {
    auto* begin = items_.data() + offsets_[u];
    auto* end = items_.data() + offsets_[u + 1];
    std::sort(begin, end);
    if (std::adjacent_find(begin, end) != end) {
      throw DataError("duplicate click for user " + std::to_string(u));
    }
  }
}

bool SparseClickMatrix::contains(Index user, Index item) const {
  auto r = row(user);
  return std::binary_search(r.begin(), r.end(), item);
}

ColumnRef parse_column_ref(const std::string& text) {
  int pos = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), pos);
  if (ec == std::errc() && ptr == text.data() + text.size()) return pos;
  return text;
}

std::vector<InteractionRecord> load_interactions(const std::filesystem::path& path,
                                                 const LoadOptions& options,
                                                 std::size_t* skipped) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const char delimiter =
      options.delimiter.value_or(options.format == FileFormat::kTsv ? '\t' : ',');

  std::vector<InteractionRecord> records;
  std::string line;
  std::size_t line_number = 0;
  std::size_t bad_rows = 0;
  ColumnPlan plan;
  bool plan_ready = false;

  auto build_plan = [&](const std::vector<std::string>& header) {
    plan.user = resolve_column(options.user_column, header, options.has_header, "user");
    plan.item = resolve_column(options.item_column, header, options.has_header, "item");
    if (options.weight_column) {
      plan.weight =
          resolve_column(*options.weight_column, header, options.has_header, "weight");
    }
    plan_ready = true;
  };

  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_number == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
      line.erase(0, 3);  // UTF-8 BOM
    }
    if (line.empty()) continue;
    auto fields = split_fields(line, delimiter, line_number);
    if (options.has_header && !plan_ready) {
      build_plan(fields);
      continue;
    }
    if (!plan_ready) build_plan({});

    const int needed = std::max({plan.user, plan.item, plan.weight});
    const bool shape_ok = static_cast<int>(fields.size()) > needed;
    const bool ids_ok = shape_ok && !fields[plan.user].empty() &&
                        !fields[plan.item].empty();
    if (!ids_ok) {
      if (options.skip_bad_rows) {
        ++bad_rows;
        continue;
      }
      throw DataError(path.string() + " line " + std::to_string(line_number) +
                      (shape_ok ? ": empty user or item id" : ": too few fields"));
    }
    InteractionRecord record;
    record.user_id = fields[plan.user];
    record.item_id = fields[plan.item];
    if (plan.weight >= 0) {
      try {
        record.weight = parse_weight(fields[plan.weight], line_number);
      } catch (const DataError&) {
        if (options.skip_bad_rows) {
          ++bad_rows;
          continue;
        }
        throw;
      }
    }
    records.push_back(std::move(record));
  }
  if (records.empty() && bad_rows == 0) {
    throw DataError(path.string() + ": no data rows");
  }
  if (skipped) *skipped = bad_rows;
  return records;
}

ClickDataset binarize(std::span<const InteractionRecord> records,
                      std::optional<double> threshold) {
  ClickDataset dataset;
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(records.size());
  for (const InteractionRecord& record : records) {
    // Intern before thresholding: the id space covers every observed id, so
    // downstream index ranges do not depend on the threshold.
    const Index u = intern(record.user_id, dataset.user_index, dataset.user_ids);
    const Index i = intern(record.item_id, dataset.item_index, dataset.item_ids);
    if (threshold) {
      if (!record.weight) {
        throw DataError("record (" + record.user_id + ", " + record.item_id +
                        ") has no weight but a click threshold was given");
      }
      if (*record.weight < *threshold) continue;
    }
    if (seen.insert(pair_key(u, i)).second) {
      dataset.clicks.push_back({u, i});
    }
  }
  dataset.num_users = static_cast<Index>(dataset.user_ids.size());
  dataset.num_items = static_cast<Index>(dataset.item_ids.size());
  std::sort(dataset.clicks.begin(), dataset.clicks.end());
  return dataset;
}

ClickDataset filter_min_clicks(ClickDataset dataset, Index min_clicks) {
  if (min_clicks <= 1) return dataset;
  std::vector<Index> counts(static_cast<std::size_t>(dataset.num_users), 0);
  for (const Click& c : dataset.clicks) ++counts[c.user];

  std::vector<Index> remap(static_cast<std::size_t>(dataset.num_users), -1);
  ClickDataset out;
  out.num_items = dataset.num_items;
  out.item_ids = std::move(dataset.item_ids);
  out.item_index = std::move(dataset.item_index);
  for (Index u = 0; u < dataset.num_users; ++u) {
    if (counts[u] >= min_clicks) {
      remap[u] = static_cast<Index>(out.user_ids.size());
      out.user_ids.push_back(std::move(dataset.user_ids[u]));
    }
  }
  out.num_users = static_cast<Index>(out.user_ids.size());
  for (Index u = 0; u < out.num_users; ++u) out.user_index[out.user_ids[u]] = u;
  out.clicks.reserve(dataset.clicks.size());
  for (const Click& c : dataset.clicks) {
    if (remap[c.user] >= 0) out.clicks.push_back({remap[c.user], c.item});
  }
  return out;
}

DatasetSplit split(ClickDataset dataset, const std::array<double, 3>& ratios,
                   std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (!(total > 0.999 && total < 1.001) || ratios[0] < 0 || ratios[1] < 0 ||
      ratios[2] < 0) {
    throw DataError("split ratios must be non-negative and sum to 1");
  }

  DatasetSplit result;
  result.seed = seed;

  // dataset.clicks is sorted by user, so each user's clicks are contiguous.
  std::size_t begin = 0;
  const auto& clicks = dataset.clicks;
  while (begin < clicks.size()) {
    std::size_t end = begin;
    const Index user = clicks[begin].user;
    while (end < clicks.size() && clicks[end].user == user) ++end;
    const Index k = static_cast<Index>(end - begin);

    std::vector<Click> mine(clicks.begin() + begin, clicks.begin() + end);
    if (k < 3) {
      // Too few clicks to populate three parts; keep the user trainable.
      result.train.insert(result.train.end(), mine.begin(), mine.end());
    } else {
      Rng rng(derive_seed(seed, SeedStream::kSplit, static_cast<std::uint64_t>(user)));
      std::shuffle(mine.begin(), mine.end(), rng);
      const Index train_end = ratio_cut(ratios[0], k);
      const Index val_end = ratio_cut(ratios[0] + ratios[1], k);
      result.train.insert(result.train.end(), mine.begin(), mine.begin() + train_end);
      result.validation.insert(result.validation.end(), mine.begin() + train_end,
                               mine.begin() + val_end);
      result.test.insert(result.test.end(), mine.begin() + val_end, mine.end());
    }
    begin = end;
  }
  std::sort(result.train.begin(), result.train.end());
  std::sort(result.validation.begin(), result.validation.end());
  std::sort(result.test.begin(), result.test.end());
  result.dataset = std::move(dataset);
  return result;
}

SparseClickMatrix build_matrix(std::span<const Click> clicks, Index num_users,
                               Index num_items) {
  return SparseClickMatrix(num_users, num_items, clicks);
}

DatasetStats dataset_stats(const ClickDataset& dataset) {
  DatasetStats stats;
  stats.users = dataset.num_users;
  stats.items = dataset.num_items;
  stats.clicks = static_cast<Index>(dataset.clicks.size());
  const double cells =
      static_cast<double>(dataset.num_users) * static_cast<double>(dataset.num_items);
  stats.density_percent = cells > 0 ? 100.0 * static_cast<double>(stats.clicks) / cells : 0.0;
  return stats;
}

void write_split_manifest(const std::filesystem::path& dir, const DatasetSplit& split) {
  std::filesystem::create_directories(dir);
  auto write_clicks = [&](const char* name, const std::vector<Click>& clicks) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    for (const Click& c : clicks) {
      out << quote_field(split.dataset.user_ids[c.user]) << ','
          << quote_field(split.dataset.item_ids[c.item]) << '\n';
    }
  };
  auto write_ids = [&](const char* name, const std::vector<std::string>& ids) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    for (const std::string& id : ids) out << quote_field(id) << '\n';
  };
  write_clicks("train.csv", split.train);
  write_clicks("validation.csv", split.validation);
  write_clicks("test.csv", split.test);
  write_ids("users.csv", split.dataset.user_ids);
  write_ids("items.csv", split.dataset.item_ids);
}

std::vector<std::string> load_id_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> ids;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line, ',', line_number);
    if (fields.size() != 1) {
      throw DataError(path.string() + " line " + std::to_string(line_number) +
                      ": expected 1 field");
    }
    ids.push_back(std::move(fields[0]));
  }
  return ids;
}

DatasetSplit load_split_manifest(const std::filesystem::path& dir) {
  DatasetSplit split;
  split.dataset.user_ids = load_id_list(dir / "users.csv");
  split.dataset.item_ids = load_id_list(dir / "items.csv");
  split.dataset.num_users = static_cast<Index>(split.dataset.user_ids.size());
  split.dataset.num_items = static_cast<Index>(split.dataset.item_ids.size());
  for (Index u = 0; u < split.dataset.num_users; ++u) {
    if (!split.dataset.user_index.emplace(split.dataset.user_ids[u], u).second) {
      throw DataError("duplicate user id in manifest: " + split.dataset.user_ids[u]);
    }
  }
  for (Index i = 0; i < split.dataset.num_items; ++i) {
    if (!split.dataset.item_index.emplace(split.dataset.item_ids[i], i).second) {
      throw DataError("duplicate item id in manifest: " + split.dataset.item_ids[i]);
    }
  }
  split.train = load_click_pairs(dir / "train.csv", split.dataset);
  split.validation = load_click_pairs(dir / "validation.csv", split.dataset);
  split.test = load_click_pairs(dir / "test.csv", split.dataset);
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());

  split.dataset.clicks.reserve(split.train.size() + split.validation.size() +
                               split.test.size());
  split.dataset.clicks.insert(split.dataset.clicks.end(), split.train.begin(),
                              split.train.end());
  split.dataset.clicks.insert(split.dataset.clicks.end(), split.validation.begin(),
                              split.validation.end());
  split.dataset.clicks.insert(split.dataset.clicks.end(), split.test.begin(),
                              split.test.end());
  std::sort(split.dataset.clicks.begin(), split.dataset.clicks.end());
  auto dup = std::adjacent_find(split.dataset.clicks.begin(), split.dataset.clicks.end());
  if (dup != split.dataset.clicks.end()) {
    throw DataError("manifest parts overlap: user " + std::to_string(dup->user) +
                    " item " + std::to_string(dup->item) + " appears twice");
  }
  return split;
}

}  // namespace npe
