#include "csiloc/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "csiloc/binary_io.hpp"
#include "csiloc/checksum.hpp"
#include "csiloc/error.hpp"
#include "csiloc/rng.hpp"
#include "json.hpp"

namespace csiloc {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kPacketMagic = "CSIPKT01";
constexpr std::string_view kFeatureMagic = "CSIFEAT1";
constexpr std::uint32_t kPacketFileVersion = 1;
constexpr std::uint32_t kFeatureFileVersion = 1;
constexpr std::size_t kFeatureRecordBytes = 4 + 2 * kFeatureLength * 8;

bool valid_id(const std::string& id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

std::string packet_file_name(const std::string& id) { return "loc_" + id + ".csi"; }
std::string feature_file_name(const std::string& id) { return "feat_" + id + ".bin"; }

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

json read_json(const fs::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key, const std::string& context) {
  if (!j.contains(key)) throw FormatError(context + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(context + ": field '" + key + "': " + e.what());
  }
}

void read_header(io::ByteReader& in, std::string_view magic, std::uint32_t version) {
  if (in.raw(magic.size()) != magic) throw FormatError(in.context() + ": bad magic");
  const auto v = in.u32();
  if (v != version) throw FormatError(in.context() + ": unsupported version " + std::to_string(v));
}

}  // namespace

std::string to_string(LocationRole role) { return role == LocationRole::reference ? "reference" : "test"; }

LocationRole parse_role(const std::string& text) {
  if (text == "reference") return LocationRole::reference;
  if (text == "test") return LocationRole::test;
  throw FormatError("unknown location role '" + text + "'");
}

void RadioMap::validate() const {
  std::set<std::string> ap_ids;
  for (const auto& ap : aps) {
    if (!valid_id(ap.id)) throw DatasetError("invalid AP id '" + ap.id + "'");
    if (!ap_ids.insert(ap.id).second) throw DatasetError("duplicate AP id '" + ap.id + "'");
  }
  std::set<std::string> ids;
  for (const auto& loc : locations) {
    if (!valid_id(loc.id)) throw DatasetError("invalid location id '" + loc.id + "'");
    if (!ids.insert(loc.id).second) throw DatasetError("duplicate location id '" + loc.id + "'");
    if (!ap_ids.count(loc.ap_id)) throw DatasetError("location " + loc.id + " references unknown AP '" + loc.ap_id + "'");
    if (loc.role == LocationRole::reference && loc.packets.empty()) {
      throw DatasetError("reference location " + loc.id + " has no packets");
    }
  }
}

const Location* RadioMap::find(const std::string& id) const {
  for (const auto& loc : locations) {
    if (loc.id == id) return &loc;
  }
  return nullptr;
}

std::vector<unsigned char> encode_packets(std::span<const CsiPacket> packets) {
  io::ByteWriter out;
  out.raw(kPacketMagic);
  out.u32(kPacketFileVersion);
  out.u32(static_cast<std::uint32_t>(packets.size()));
  for (const auto& p : packets) {
    out.u32(p.sequence_no);
    out.i64(p.capture_timestamp_us);
    out.f32(static_cast<float>(p.rssi_dbm));
    for (const auto& v : p.subcarriers) {
      out.f32(static_cast<float>(v.real()));
      out.f32(static_cast<float>(v.imag()));
    }
  }
  return out.take();
}

std::vector<CsiPacket> decode_packets(std::span<const unsigned char> bytes, const std::string& context) {
  io::ByteReader in(bytes, context);
  read_header(in, kPacketMagic, kPacketFileVersion);
  const auto count = in.u32();
  if (in.remaining() != static_cast<std::size_t>(count) * kPacketRecordBytes) {
    throw FormatError(context + ": expected " + std::to_string(count) + " records of " +
                      std::to_string(kPacketRecordBytes) + " bytes, found " + std::to_string(in.remaining()) +
                      " payload bytes");
  }
  std::vector<CsiPacket> packets(count);
  std::size_t bad = 0;
  for (auto& p : packets) {
    p.sequence_no = in.u32();
    p.capture_timestamp_us = in.i64();
    p.rssi_dbm = in.f32();
    bool finite = std::isfinite(p.rssi_dbm);
    for (auto& v : p.subcarriers) {
      const float re = in.f32();
      const float im = in.f32();
      finite = finite && std::isfinite(re) && std::isfinite(im);
      v = ComplexValue(re, im);
    }
    if (!finite) ++bad;
  }
  if (bad > 0) {
    throw ValidationError(context + ": " + std::to_string(bad) + " of " + std::to_string(count) +
                          " packets contain non-finite values");
  }
  return packets;
}

DatasetManifest save_radio_map(const RadioMap& map, const fs::path& directory) {
  map.validate();
  fs::create_directories(directory);
  DatasetManifest manifest;
  manifest.aps = map.aps;
  manifest.metadata = map.metadata;

  json locs = json::array();
  for (const auto& loc : map.locations) {
    const auto bytes = encode_packets(loc.packets);
    const auto name = packet_file_name(loc.id);
    io::write_file(directory / name, bytes);
    ManifestEntry e{loc.id, loc.role, loc.x, loc.y, loc.ap_id, loc.packets.size(), name, sha256_hex(bytes)};
    locs.push_back({{"id", e.id},
                    {"role", to_string(e.role)},
                    {"x", e.x},
                    {"y", e.y},
                    {"ap_id", e.ap_id},
                    {"packet_count", e.packet_count},
                    {"file", e.file},
                    {"sha256", e.sha256}});
    manifest.locations.push_back(std::move(e));
  }
  json aps = json::array();
  for (const auto& ap : map.aps) aps.push_back({{"id", ap.id}});

  json root = {{"format_version", manifest.format_version},
               {"aps", aps},
               {"locations", locs},
               {"metadata", map.metadata}};
  write_text(directory / kManifestFile, root.dump(2) + "\n");
  return manifest;
}

DatasetManifest load_manifest(const fs::path& directory) {
  const auto path = directory / kManifestFile;
  const auto root = read_json(path);
  const auto ctx = path.string();
  DatasetManifest m;
  m.format_version = field<std::uint32_t>(root, "format_version", ctx);
  if (m.format_version != kDatasetFormatVersion) {
    throw FormatError(ctx + ": unsupported format_version " + std::to_string(m.format_version));
  }
  for (const auto& ap : field<json>(root, "aps", ctx)) m.aps.push_back({field<std::string>(ap, "id", ctx)});
  for (const auto& l : field<json>(root, "locations", ctx)) {
    ManifestEntry e;
    e.id = field<std::string>(l, "id", ctx);
    e.role = parse_role(field<std::string>(l, "role", ctx));
    e.x = field<double>(l, "x", ctx);
    e.y = field<double>(l, "y", ctx);
    e.ap_id = field<std::string>(l, "ap_id", ctx);
    e.packet_count = field<std::size_t>(l, "packet_count", ctx);
    e.file = field<std::string>(l, "file", ctx);
    e.sha256 = field<std::string>(l, "sha256", ctx);
    if (e.file != packet_file_name(e.id)) throw FormatError(ctx + ": unexpected file name '" + e.file + "'");
    m.locations.push_back(std::move(e));
  }
  if (root.contains("metadata")) {
    m.metadata = root.at("metadata").get<std::map<std::string, std::string>>();
  }
  return m;
}

RadioMap load_radio_map(const fs::path& directory) {
  const auto manifest = load_manifest(directory);
  RadioMap map;
  map.aps = manifest.aps;
  map.metadata = manifest.metadata;
  for (const auto& e : manifest.locations) {
    const auto path = directory / e.file;
    const auto bytes = io::read_file(path);
    if (sha256_hex(bytes) != e.sha256) throw FormatError(path.string() + ": checksum mismatch");
    Location loc{e.id, e.role, e.x, e.y, e.ap_id, decode_packets(bytes, path.string())};
    if (loc.packets.size() != e.packet_count) {
      throw FormatError(path.string() + ": manifest declares " + std::to_string(e.packet_count) + " packets, file has " +
                        std::to_string(loc.packets.size()));
    }
    for (auto& p : loc.packets) {
      p.ap_id = e.ap_id;
      p.location_id = e.id;
    }
    map.locations.push_back(std::move(loc));
  }
  map.validate();
  return map;
}

std::string dataset_checksum(const fs::path& directory) { return sha256_file(directory / kManifestFile); }

bool NativeImporter::can_load(const fs::path& source) const {
  return fs::is_directory(source) && fs::exists(source / kManifestFile);
}

RadioMap NativeImporter::load(const fs::path& source) const { return load_radio_map(source); }

ImporterRegistry::ImporterRegistry() { importers_.push_back(std::make_unique<NativeImporter>()); }

void ImporterRegistry::add(std::unique_ptr<RadioMapImporter> importer) { importers_.push_back(std::move(importer)); }

RadioMap ImporterRegistry::load(const fs::path& source) const {
  for (const auto& imp : importers_) {
    if (imp->can_load(source)) return imp->load(source);
  }
  throw DatasetError("no importer recognises " + source.string());
}

TrainValSplit split_train_val(std::span<const std::size_t> samples_per_rp, std::uint64_t seed) {
  TrainValSplit split;
  split.train.resize(samples_per_rp.size());
  split.val.resize(samples_per_rp.size());
  for (std::size_t rp = 0; rp < samples_per_rp.size(); ++rp) {
    const auto n = samples_per_rp[rp];
    if (n < 2) {
      throw DatasetError("RP class " + std::to_string(rp) + " has " + std::to_string(n) +
                         " samples; a train/validation split needs at least 2");
    }
    if (n < 10) {
      split.warnings.push_back("RP class " + std::to_string(rp) + " has only " + std::to_string(n) + " samples");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    CounterRng rng{seed, 0x73706C6974ULL, rp};
    for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);

    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * 0.1)));
    split.val[rp].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train[rp].assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(split.val[rp].begin(), split.val[rp].end());
    std::sort(split.train[rp].begin(), split.train[rp].end());
  }
  return split;
}

std::vector<std::size_t> draw_test_samples(std::size_t available, std::size_t draws, std::uint64_t seed) {
  if (available < draws) {
    throw InvalidArgument("cannot draw " + std::to_string(draws) + " samples from " + std::to_string(available));
  }
  std::vector<std::size_t> pool(available);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  CounterRng rng{seed, 0x64726177ULL};
  std::vector<std::size_t> out;
  out.reserve(draws);
  for (std::size_t d = 0; d < draws; ++d) {
    // Pick from what is left, then drop it from the pool.
    const auto j = d + static_cast<std::size_t>(rng.below(available - d));
    std::swap(pool[d], pool[j]);
    out.push_back(pool[d]);
  }
  return out;
}

std::vector<unsigned char> encode_features(std::span<const FeatureVector> features) {
  io::ByteWriter out;
  out.raw(kFeatureMagic);
  out.u32(kFeatureFileVersion);
  out.u32(static_cast<std::uint32_t>(features.size()));
  for (const auto& f : features) {
    out.u32(f.source_sequence);
    for (double v : f.magnitude) out.f64(v);
    for (double v : f.phase_rad) out.f64(v);
  }
  return out.take();
}

std::vector<FeatureVector> decode_features(std::span<const unsigned char> bytes, const std::string& context) {
  io::ByteReader in(bytes, context);
  read_header(in, kFeatureMagic, kFeatureFileVersion);
  const auto count = in.u32();
  if (in.remaining() != static_cast<std::size_t>(count) * kFeatureRecordBytes) {
    throw FormatError(context + ": record count does not match file size");
  }
  std::vector<FeatureVector> out(count);
  for (auto& f : out) {
    f.source_sequence = in.u32();
    for (auto& v : f.magnitude) v = in.f64();
    for (auto& v : f.phase_rad) v = in.f64();
  }
  return out;
}

void save_feature_set(const FeatureSet& set, const fs::path& directory) {
  fs::create_directories(directory);
  json locs = json::array();
  for (const auto& loc : set.locations) {
    const auto bytes = encode_features(loc.features);
    const auto name = feature_file_name(loc.id);
    io::write_file(directory / name, bytes);
    locs.push_back({{"id", loc.id},
                    {"role", to_string(loc.role)},
                    {"x", loc.x},
                    {"y", loc.y},
                    {"ap_id", loc.ap_id},
                    {"scale_factor", loc.scale_factor},
                    {"sample_count", loc.features.size()},
                    {"file", name},
                    {"sha256", sha256_hex(bytes)}});
  }
  json aps = json::array();
  for (const auto& ap : set.aps) aps.push_back({{"id", ap.id}});
  json root = {{"format_version", kFeatureFileVersion},
               {"aps", aps},
               {"locations", locs},
               {"source_dataset_sha256", set.source_checksum},
               {"config_sha256", set.config_checksum}};
  write_text(directory / kFeatureManifestFile, root.dump(2) + "\n");
}

FeatureSet load_feature_set(const fs::path& directory) {
  const auto path = directory / kFeatureManifestFile;
  const auto root = read_json(path);
  const auto ctx = path.string();
  if (field<std::uint32_t>(root, "format_version", ctx) != kFeatureFileVersion) {
    throw FormatError(ctx + ": unsupported format_version");
  }
  FeatureSet set;
  set.source_checksum = field<std::string>(root, "source_dataset_sha256", ctx);
  set.config_checksum = field<std::string>(root, "config_sha256", ctx);
  for (const auto& ap : field<json>(root, "aps", ctx)) set.aps.push_back({field<std::string>(ap, "id", ctx)});
  for (const auto& l : field<json>(root, "locations", ctx)) {
    ProcessedLocation loc;
    loc.id = field<std::string>(l, "id", ctx);
    loc.role = parse_role(field<std::string>(l, "role", ctx));
    loc.x = field<double>(l, "x", ctx);
    loc.y = field<double>(l, "y", ctx);
    loc.ap_id = field<std::string>(l, "ap_id", ctx);
    loc.scale_factor = field<double>(l, "scale_factor", ctx);
    const auto file = field<std::string>(l, "file", ctx);
    if (file != feature_file_name(loc.id)) throw FormatError(ctx + ": unexpected file name '" + file + "'");
    const auto bytes = io::read_file(directory / file);
    if (sha256_hex(bytes) != field<std::string>(l, "sha256", ctx)) {
      throw FormatError((directory / file).string() + ": checksum mismatch");
    }
    loc.features = decode_features(bytes, (directory / file).string());
    if (loc.features.size() != field<std::size_t>(l, "sample_count", ctx)) {
      throw FormatError((directory / file).string() + ": sample count mismatch");
    }
    set.locations.push_back(std::move(loc));
  }
  return set;
}

}  // namespace csiloc
