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

#include "npe/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "npe/errors.hpp"

// Tables are written as raw float32 memory; a big-endian host would need
// byte swaps this code does not implement.
static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace npe {
namespace {

constexpr char kMagic[4] = {'N', 'P', 'E', '1'};

void write_table(std::ofstream& out, const Matrix<float>& table) {
  // Row-major storage, so the buffer is already in serialization order.
  out.write(reinterpret_cast<const char*>(table.data()),
            static_cast<std::streamsize>(sizeof(float) * table.size()));
}

void read_table(std::ifstream& in, Matrix<float>& table, const std::string& path) {
  in.read(reinterpret_cast<char*>(table.data()),
          static_cast<std::streamsize>(sizeof(float) * table.size()));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(float) * table.size())) {
    throw DataError(path + ": truncated parameter table");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Parameters<float>& params,
                     const std::string& id_map) {
  if (params.item_embeddings.rows() != params.context_embeddings.rows() ||
      params.item_embeddings.cols() != params.dim() ||
      params.context_embeddings.cols() != params.dim()) {
    throw DataError("parameter tables disagree on shape");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));

  nlohmann::json header;
  header["N"] = params.num_users();
  header["M"] = params.num_items();
  header["D"] = params.dim();
  header["activation"] = activation_name(params.activation);
  header["id_map"] = id_map;
  const std::string line = header.dump();
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.put('\n');

  write_table(out, params.user_embeddings);
  write_table(out, params.item_embeddings);
  write_table(out, params.context_embeddings);
  if (!out) throw DataError("write failure on " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());

  char magic[4] = {};
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + ": not a model checkpoint (bad magic)");
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(path.string() + ": missing header");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  Checkpoint checkpoint;
  Index num_users = 0, num_items = 0, dim = 0;
  try {
    num_users = header.at("N").get<Index>();
    num_items = header.at("M").get<Index>();
    dim = header.at("D").get<Index>();
    checkpoint.params.activation =
        activation_from_name(header.at("activation").get<std::string>());
    checkpoint.id_map = header.value("id_map", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  if (num_users <= 0 || num_items <= 0 || dim <= 0) {
    throw DataError(path.string() + ": non-positive dimensions in header");
  }

  checkpoint.params.user_embeddings.resize(num_users, dim);
  checkpoint.params.item_embeddings.resize(num_items, dim);
  checkpoint.params.context_embeddings.resize(num_items, dim);
  read_table(in, checkpoint.params.user_embeddings, path.string());
  read_table(in, checkpoint.params.item_embeddings, path.string());
  read_table(in, checkpoint.params.context_embeddings, path.string());

  char extra = 0;
  if (in.read(&extra, 1).gcount() != 0) {
    throw DataError(path.string() + ": trailing bytes after parameter tables");
  }
  return checkpoint;
}

}  // namespace npe
