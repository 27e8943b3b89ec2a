#include "stratpred/artifact_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stratpred::io {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string artifact_header(const std::string& command, std::uint64_t config_hash,
                            std::uint64_t seed) {
  return "# stratpred\tcommand=" + command + "\tconfig=" + hex64(config_hash) +
         "\tseed=" + std::to_string(seed) + "\n";
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

void require_artifact(const std::string& path, const std::string& producing_stage) {
  if (!file_exists(path)) {
    throw std::runtime_error("missing artifact " + path + "; run `" + producing_stage + "` first");
  }
}

void append_manifest_line(const std::string& manifest_path, const std::string& command,
                          std::uint64_t config_hash, std::uint64_t seed, double wall_seconds) {
  const std::filesystem::path p(manifest_path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(manifest_path, std::ios::app);
  if (!out) throw std::runtime_error("cannot write " + manifest_path);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", wall_seconds);
  out << command << '\t' << hex64(config_hash) << '\t' << seed << '\t' << buf << '\n';
}

}  // namespace stratpred::io
