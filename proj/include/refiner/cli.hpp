#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "refiner/model.hpp"
#include "refiner/training.hpp"

namespace refiner::cli {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Entry point shared by the binary and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Flat run configuration: every model, training and data key at top level,
/// plus an optional "preset" naming the base model.
struct ResolvedConfig {
  ModelConfig model;
  TrainConfig train;
  std::size_t samples = 256;
  std::uint64_t data_seed = 0;
  nlohmann::json flat;  // every key with its resolved value
};

const std::vector<std::string>& config_keys();
/// Throws ConfigError for unknown keys or bad values. A run manifest is
/// accepted too; its "config" object is used.
ResolvedConfig resolve_config(const nlohmann::json& flat);
nlohmann::json read_json_file(const std::filesystem::path& path);

/// git's blob id: SHA-1 of "blob <size>\0" followed by the content, in hex.
std::string git_blob_hash(std::string_view content);

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string input_hash;
  std::vector<std::string> outputs;

  nlohmann::json to_json() const;
};

/// Hash over the canonical config text and the bytes of every input file.
std::string hash_inputs(const nlohmann::json& config, const std::vector<std::filesystem::path>& files);

/// Written as run_manifest.json in the run directory.
void write_manifest(const std::filesystem::path& dir, const RunManifest& m);

}  // namespace refiner::cli
