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

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>
#include <unistd.h>

#include "npe/rng.hpp"
#include "support/synthetic.hpp"

namespace npe {
namespace {

using testing::make_uniform_params;

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("npe_ckpt_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::filesystem::path file(const std::string& name) const { return dir_ / name; }

  static std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
  }

  static void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  std::filesystem::path dir_;
};

Parameters<float> sample_params(Index users, Index items, Index dim,
                                std::uint64_t seed) {
  Rng rng(seed);
  return make_uniform_params<float>(users, items, dim, rng, Activation::kRelu);
}

TEST_F(CheckpointTest, RoundTripPreservesEveryByte) {
  const auto params = sample_params(5, 7, 3, 100);
  const auto path = file("model.npe");
  save_checkpoint(path, params, "splits/dir");
  const Checkpoint loaded = load_checkpoint(path);

  EXPECT_EQ(loaded.id_map, "splits/dir");
  EXPECT_EQ(loaded.params.activation, Activation::kRelu);
  ASSERT_EQ(loaded.params.num_users(), 5);
  ASSERT_EQ(loaded.params.num_items(), 7);
  ASSERT_EQ(loaded.params.dim(), 3);
  EXPECT_TRUE(
      (loaded.params.user_embeddings.array() == params.user_embeddings.array()).all());
  EXPECT_TRUE(
      (loaded.params.item_embeddings.array() == params.item_embeddings.array()).all());
  EXPECT_TRUE((loaded.params.context_embeddings.array() ==
               params.context_embeddings.array())
                  .all());
}

TEST_F(CheckpointTest, FileLeadsWithMagicThenJsonHeaderLine) {
  const auto params = sample_params(2, 3, 4, 7);
  const auto path = file("model.npe");
  save_checkpoint(path, params, "ids");
  const std::string bytes = read_bytes(path);

  ASSERT_GE(bytes.size(), 5u);
  EXPECT_EQ(bytes.substr(0, 4), "NPE1");
  const std::size_t newline = bytes.find('\n', 4);
  ASSERT_NE(newline, std::string::npos);
  const auto header = nlohmann::json::parse(bytes.substr(4, newline - 4));
  EXPECT_EQ(header.at("N").get<int>(), 2);
  EXPECT_EQ(header.at("M").get<int>(), 3);
  EXPECT_EQ(header.at("D").get<int>(), 4);
  EXPECT_EQ(header.at("activation").get<std::string>(), "relu");
  EXPECT_EQ(header.at("id_map").get<std::string>(), "ids");

  // Payload: three row-major float32 tables, nothing else.
  const std::size_t payload = bytes.size() - newline - 1;
  EXPECT_EQ(payload, sizeof(float) * (2 * 4 + 3 * 4 + 3 * 4));

  // First float of the payload is user row 0, dim 0.
  float first = 0.0f;
  std::memcpy(&first, bytes.data() + newline + 1, sizeof(float));
  EXPECT_EQ(first, params.user_embeddings(0, 0));
}

TEST_F(CheckpointTest, IdentityActivationRoundTrips) {
  Rng rng(8);
  const auto params = make_uniform_params<float>(2, 2, 2, rng, Activation::kIdentity);
  const auto path = file("model.npe");
  save_checkpoint(path, params, "");
  const Checkpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.params.activation, Activation::kIdentity);
  EXPECT_EQ(loaded.id_map, "");
}

TEST_F(CheckpointTest, RejectsBadMagic) {
  const auto path = file("model.npe");
  save_checkpoint(path, sample_params(2, 2, 2, 1), "x");
  std::string bytes = read_bytes(path);
  bytes[0] = 'X';
  write_bytes(path, bytes);
  EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST_F(CheckpointTest, RejectsTruncatedTables) {
  const auto path = file("model.npe");
  save_checkpoint(path, sample_params(3, 4, 2, 2), "x");
  std::string bytes = read_bytes(path);
  bytes.resize(bytes.size() - 5);
  write_bytes(path, bytes);
  EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST_F(CheckpointTest, RejectsTrailingBytes) {
  const auto path = file("model.npe");
  save_checkpoint(path, sample_params(3, 4, 2, 3), "x");
  std::string bytes = read_bytes(path);
  bytes.push_back('\0');
  write_bytes(path, bytes);
  EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST_F(CheckpointTest, RejectsGarbageHeader) {
  const auto path = file("model.npe");
  write_bytes(path, std::string("NPE1") + "this is not json\n");
  EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST_F(CheckpointTest, RejectsHeaderWithMissingOrBadFields) {
  const auto path = file("model.npe");
  write_bytes(path, std::string("NPE1") + R"({"N":2,"M":2})" + "\n");
  EXPECT_THROW(load_checkpoint(path), DataError);

  write_bytes(path, std::string("NPE1") +
                        R"({"N":2,"M":2,"D":2,"activation":"softplus","id_map":""})" +
                        "\n");
  EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST_F(CheckpointTest, RejectsNonPositiveDimensions) {
  const auto path = file("model.npe");
  write_bytes(path, std::string("NPE1") +
                        R"({"N":2,"M":2,"D":0,"activation":"relu","id_map":""})" +
                        "\n");
  EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST_F(CheckpointTest, MissingFileIsAnError) {
  EXPECT_THROW(load_checkpoint(file("nope.npe")), DataError);
}

TEST_F(CheckpointTest, UnwritablePathIsAnError) {
  const auto params = sample_params(2, 2, 2, 4);
  EXPECT_THROW(save_checkpoint(dir_ / "missing_dir" / "model.npe", params, "x"),
               DataError);
}

TEST_F(CheckpointTest, MismatchedTableShapesRefuseToSave) {
  auto params = sample_params(2, 3, 2, 5);
  params.context_embeddings.resize(4, 2);  // no longer matches item table
  EXPECT_THROW(save_checkpoint(file("model.npe"), params, "x"), DataError);
}

}  // namespace
}  // namespace npe
