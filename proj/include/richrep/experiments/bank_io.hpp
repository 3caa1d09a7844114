#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "richrep/errors.hpp"
#include "richrep/nn/serialize.hpp"
#include "richrep/rich/bank.hpp"

namespace richrep {

// A saved bank is a directory holding member_<i>.rrnn (extractor plus its
// head, in the network format) and manifest.json:
//   {"format": "richrep-bank", "version": 1, "input_dim": d,
//    "provenance": "...", "config_hash": "...",
//    "members": [{"file": "member_0.rrnn", "seed": s, "dim": w}, ...]}

inline constexpr int kBankManifestVersion = 1;

inline std::optional<Provenance> parse_provenance(std::string_view s) {
  for (auto p : {Provenance::independent_episodes, Provenance::snapshots, Provenance::joint_training}) {
    if (s == to_string(p)) return p;
  }
  return std::nullopt;
}

inline void save_bank(const std::filesystem::path& dir, const RepresentationBank& bank,
                      const std::string& config_hash) {
  bank.validate();
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "richrep-bank";
  manifest["version"] = kBankManifestVersion;
  manifest["input_dim"] = bank.input_dim;
  manifest["provenance"] = to_string(bank.provenance);
  manifest["config_hash"] = config_hash;
  manifest["members"] = nlohmann::ordered_json::array();
  const auto dims = bank.dims();
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const std::string file = "member_" + std::to_string(i) + ".rrnn";
    save_network(dir / file, bank.member(i));
    manifest["members"].push_back({{"file", file}, {"seed", bank.seeds[i]}, {"dim", dims[i]}});
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
}

struct LoadedBank {
  RepresentationBank bank;
  std::string config_hash;
};

/// Reads a bank directory back and checks the manifest against the files.
inline LoadedBank load_bank(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(binary::read_file(dir / "manifest.json"));
    if (manifest.at("format") != "richrep-bank") throw FormatError("bank manifest: wrong format tag");
    if (manifest.at("version") != kBankManifestVersion) throw FormatError("bank manifest: unsupported version");
    LoadedBank out;
    out.bank.input_dim = manifest.at("input_dim").get<Index>();
    const auto prov = parse_provenance(manifest.at("provenance").get<std::string>());
    if (!prov) throw FormatError("bank manifest: unknown provenance");
    out.bank.provenance = *prov;
    out.config_hash = manifest.at("config_hash").get<std::string>();
    for (const auto& m : manifest.at("members")) {
      Network net = load_network(dir / m.at("file").get<std::string>());
      if (net.input_dim() != out.bank.input_dim) throw FormatError("bank member input width differs from manifest");
      if (net.feature_dim() != m.at("dim").get<Index>()) throw FormatError("bank member width differs from manifest");
      if (net.head_kind() != HeadKind::linear) throw FormatError("bank members need linear heads");
      out.bank.push_back(std::move(net), m.at("seed").get<std::uint64_t>());
    }
    out.bank.validate();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bank manifest: ") + e.what());
  }
}

}  // namespace richrep
