#pragma once

// Run manifest ("strata-manifest" v1) and content fingerprints. Outputs
// reference their manifest by file name, so re-running a campaign with the
// same seed reproduces every CSV and template byte for byte; only the
// manifest's timestamps differ.

#include <openssl/evp.h>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "strata/error.hpp"
#include "strata/trace.hpp"

namespace strata {

inline constexpr std::string_view tool_version = "0.1.0";
inline constexpr std::string_view manifest_format = "strata-manifest";
inline constexpr int manifest_version = 1;

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      fail(ErrorKind::environment, "SHA-256 unavailable");
    }
  }

  Sha256& update(std::span<const std::uint8_t> bytes) {
    EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size());
    return *this;
  }

  Sha256& update(std::string_view text) {
    EVP_DigestUpdate(ctx_.get(), text.data(), text.size());
    return *this;
  }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md, &len);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 0xf];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view text) { return Sha256{}.update(text).hex(); }

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) { return Sha256{}.update(bytes).hex(); }

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return h.hex();
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now()) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string command;
  std::string config_sha256;
  std::string tool_version{strata::tool_version};
  std::vector<std::string> backends;
  std::uint64_t rng_seed = 0;
  std::string started;
  std::string finished;
  std::map<std::string, std::string> inputs;  // path -> sha256
  std::vector<std::string> outputs;
  std::vector<std::string> notes;

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

inline nlohmann::json to_json(const RunManifest& m) {
  return {{"format", manifest_format},
          {"version", manifest_version},
          {"command", m.command},
          {"config_sha256", m.config_sha256},
          {"tool_version", m.tool_version},
          {"backends", m.backends},
          {"rng_seed", m.rng_seed},
          {"started", m.started},
          {"finished", m.finished},
          {"inputs", m.inputs},
          {"outputs", m.outputs},
          {"notes", m.notes}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  detail::check_header(j, manifest_format, manifest_version);
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config_sha256 = j.value("config_sha256", "");
    m.tool_version = j.value("tool_version", "");
    m.backends = j.value("backends", std::vector<std::string>{});
    m.rng_seed = j.value("rng_seed", std::uint64_t{0});
    m.started = j.value("started", "");
    m.finished = j.value("finished", "");
    m.inputs = j.value("inputs", std::map<std::string, std::string>{});
    m.outputs = j.value("outputs", std::vector<std::string>{});
    m.notes = j.value("notes", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

inline std::string dump_manifest(const RunManifest& m) { return to_json(m).dump(2) + "\n"; }

inline RunManifest read_manifest(const std::filesystem::path& path) {
  return manifest_from_json(detail::parse_json_file(path));
}

inline void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  detail::write_text_file(path, dump_manifest(m));
}

}  // namespace strata
