#include "tsconv/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tsconv {

static_assert(std::endian::native == std::endian::little, "checkpoint layout assumes little endian");

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* ext) {
  return prefix.string() + ext;
}

constexpr const char* kMagic = "tsconv-checkpoint 1";

}  // namespace

std::uint32_t crc32_of(const double* data, std::size_t count) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* bytes = reinterpret_cast<const Bytef*>(data);
  std::size_t left = count * sizeof(double);
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, bytes, chunk);
    bytes += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void save_checkpoint(const std::filesystem::path& prefix, const TsConvModel& model,
                     const RunConfig& config) {
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  std::ofstream bin(with_suffix(prefix, ".bin"), std::ios::binary);
  std::ofstream man(with_suffix(prefix, ".manifest"));
  man << kMagic << '\n';
  std::size_t offset = 0;
  char line[256];
  for (const auto& p : model.params()) {
    const auto& d = p.value.data();
    bin.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    const Shape s = p.value.shape();
    std::snprintf(line, sizeof line, " %d,%d,%d %zu %zu %08x", s.w, s.h, s.f, offset, d.size(),
                  crc32_of(d.data(), d.size()));
    man << p.name << line << '\n';
    offset += d.size();
  }
  std::ofstream(with_suffix(prefix, ".cfg")) << config.serialize();
  if (!bin || !man) throw Error("checkpoint: write failed for " + prefix.string());
}

void load_parameters(const std::filesystem::path& prefix, TsConvModel& model) {
  std::ifstream man(with_suffix(prefix, ".manifest"));
  if (!man) throw ManifestError("checkpoint: missing manifest for " + prefix.string());
  std::string line;
  if (!std::getline(man, line) || line != kMagic) throw ManifestError("checkpoint: bad manifest header");
  std::ifstream bin(with_suffix(prefix, ".bin"), std::ios::binary);
  if (!bin) throw ManifestError("checkpoint: missing .bin for " + prefix.string());
  bin.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  if (bytes % sizeof(double) != 0) throw ManifestError("checkpoint: truncated .bin");
  std::vector<double> flat(bytes / sizeof(double));
  bin.seekg(0);
  bin.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(bytes));

  std::size_t k = 0;
  auto& params = model.params();
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    if (k >= params.size()) throw ManifestError("checkpoint: more entries than model parameters");
    std::istringstream ls(line);
    std::string name, shape;
    std::size_t offset = 0, count = 0;
    std::string crc_hex;
    if (!(ls >> name >> shape >> offset >> count >> crc_hex)) {
      throw ManifestError("checkpoint: malformed manifest line '" + line + "'");
    }
    auto& p = params[k];
    const Shape s = p.value.shape();
    const std::string want = std::to_string(s.w) + "," + std::to_string(s.h) + "," + std::to_string(s.f);
    if (name != p.name || shape != want) {
      throw ManifestError("checkpoint: expected " + p.name + " " + want + ", found " + name + " " + shape);
    }
    if (count != p.value.size() || offset + count > flat.size()) {
      throw ManifestError("checkpoint: size mismatch for " + name);
    }
    if (std::stoul(crc_hex, nullptr, 16) != crc32_of(flat.data() + offset, count)) {
      throw ManifestError("checkpoint: checksum mismatch for " + name);
    }
    std::memcpy(p.value.data().data(), flat.data() + offset, count * sizeof(double));
    ++k;
  }
  if (k != params.size()) throw ManifestError("checkpoint: manifest lists fewer parameters than the model");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& prefix) {
  RunConfig cfg;
  try {
    cfg = RunConfig::load(with_suffix(prefix, ".cfg"));
  } catch (const ConfigError& e) {
    throw ManifestError(std::string("checkpoint: ") + e.what());
  }
  LoadedCheckpoint out{cfg, TsConvModel(cfg.model, cfg.seed)};
  load_parameters(prefix, out.model);
  return out;
}

}  // namespace tsconv
