#pragma once

// Run manifests: command, resolved config, seeds, tool version and a SHA-256
// digest of every output file. Needs OpenSSL (libcrypto) and nlohmann/json.

#include <openssl/evp.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "horokit/io.hpp"
#include "json.hpp"

namespace horokit {

inline std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    throw Error("SHA-256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string sha256_file(const std::filesystem::path& p) { return sha256_hex(io::read_file(p)); }

struct OutputDigest {
  std::string file;  // relative to the run directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  std::string command;
  std::string config;  // canonical text of the resolved config
  std::vector<std::uint64_t> seeds;
  unsigned workers = 1;
  std::string tool_version;
  int exit_code = 0;
  std::vector<std::string> notes;
  std::vector<OutputDigest> outputs;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["seeds"] = seeds;
    j["workers"] = workers;
    j["tool_version"] = tool_version;
    j["exit_code"] = exit_code;
    j["notes"] = notes;
    j["outputs"] = nlohmann::json::array();
    for (const auto& o : outputs) j["outputs"].push_back({{"file", o.file}, {"sha256", o.sha256}, {"bytes", o.bytes}});
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
      m.command = j.at("command").get<std::string>();
      m.config = j.at("config").get<std::string>();
      m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      m.workers = j.value("workers", 1u);
      m.tool_version = j.at("tool_version").get<std::string>();
      m.exit_code = j.at("exit_code").get<int>();
      m.notes = j.value("notes", std::vector<std::string>{});
      for (const auto& o : j.at("outputs"))
        m.outputs.push_back({o.at("file").get<std::string>(), o.at("sha256").get<std::string>(),
                             o.at("bytes").get<std::uintmax_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("manifest", e.what());
    }
    return m;
  }

  static RunManifest load(const std::filesystem::path& p) {
    try {
      return from_json(nlohmann::json::parse(io::read_file(p)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("manifest", e.what());
    }
  }

  /// Digests `files` (relative to dir), then writes dir/manifest.json last.
  void finalize(const std::filesystem::path& dir, const std::vector<std::string>& files) {
    outputs.clear();
    for (const auto& f : files) {
      const std::string data = io::read_file(dir / f);
      outputs.push_back({f, sha256_hex(data), data.size()});
    }
    io::write_atomic(dir / "manifest.json", to_json().dump(2) + "\n");
  }

  /// Files whose current digest under dir differs from the recorded one.
  std::vector<std::string> mismatches(const std::filesystem::path& dir) const {
    std::vector<std::string> bad;
    for (const auto& o : outputs) {
      const auto p = dir / o.file;
      if (!std::filesystem::exists(p) || sha256_file(p) != o.sha256) bad.push_back(o.file);
    }
    return bad;
  }
};

}  // namespace horokit
