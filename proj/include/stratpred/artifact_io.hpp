#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stratpred::io {

std::uint64_t fnv1a(const std::string& s);
std::string hex64(std::uint64_t v);

// First line of every text artifact: producing command, config hash, seed.
std::string artifact_header(const std::string& command, std::uint64_t config_hash,
                            std::uint64_t seed);

bool file_exists(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Throws with a message naming the stage that produces the missing artifact.
void require_artifact(const std::string& path, const std::string& producing_stage);

void append_manifest_line(const std::string& manifest_path, const std::string& command,
                          std::uint64_t config_hash, std::uint64_t seed, double wall_seconds);

}  // namespace stratpred::io
