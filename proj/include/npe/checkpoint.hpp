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

#include <filesystem>
#include <string>

#include "npe/model.hpp"

namespace npe {

/// On-disk model snapshot. Layout: the 4-byte magic "NPE1", one compact JSON
/// header line {"D","M","N","activation","id_map"} ending in '\n', then the
/// user, item, and context tables as little-endian float32 row-major arrays,
/// in that order. `id_map` is a path (usually relative to the checkpoint) to
/// a directory holding users.csv / items.csv.
struct Checkpoint {
  Parameters<float> params;
  std::string id_map;
};

void save_checkpoint(const std::filesystem::path& path, const Parameters<float>& params,
                     const std::string& id_map);

/// Reads and validates a checkpoint; sizes must match the header exactly.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace npe
