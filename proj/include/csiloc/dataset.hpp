#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "csiloc/csi_core.hpp"

namespace csiloc {

enum class LocationRole { reference, test };

std::string to_string(LocationRole role);
LocationRole parse_role(const std::string& text);

struct ApRecord {
  std::string id;

  bool operator==(const ApRecord&) const = default;
};

struct Location {
  std::string id;
  LocationRole role = LocationRole::reference;
  double x = 0.0;  // meters
  double y = 0.0;
  std::string ap_id;
  std::vector<CsiPacket> packets;
};

struct RadioMap {
  std::vector<ApRecord> aps;
  std::vector<Location> locations;
  std::map<std::string, std::string> metadata;  // free-form collection notes

  /// Unique location ids, known APs, reference locations non-empty, and ids
  /// usable as file-name components.
  void validate() const;
  const Location* find(const std::string& id) const;
};

inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";

struct ManifestEntry {
  std::string id;
  LocationRole role = LocationRole::reference;
  double x = 0.0;
  double y = 0.0;
  std::string ap_id;
  std::size_t packet_count = 0;
  std::string file;
  std::string sha256;
};

struct DatasetManifest {
  std::uint32_t format_version = kDatasetFormatVersion;
  std::vector<ApRecord> aps;
  std::vector<ManifestEntry> locations;
  std::map<std::string, std::string> metadata;
};

/// Packet file body. Layout (little-endian): 8-byte magic "CSIPKT01",
/// u32 version, u32 record count, then per record: u32 sequence_no,
/// i64 capture_timestamp_us, f32 rssi_dbm, 64 x (f32 re, f32 im).
inline constexpr std::size_t kPacketRecordBytes = 4 + 8 + 4 + kSubcarrierCount * 8;
std::vector<unsigned char> encode_packets(std::span<const CsiPacket> packets);
/// Throws FormatError on bad header or truncation, ValidationError when any
/// record holds non-finite values (the message carries the count).
std::vector<CsiPacket> decode_packets(std::span<const unsigned char> bytes, const std::string& context);

/// Writes manifest.json plus one loc_<id>.csi file per location.
DatasetManifest save_radio_map(const RadioMap& map, const std::filesystem::path& directory);
DatasetManifest load_manifest(const std::filesystem::path& directory);
/// Verifies every checksum before decoding; errors name the offending file.
RadioMap load_radio_map(const std::filesystem::path& directory);

/// SHA-256 of the manifest file, which itself pins every data file.
std::string dataset_checksum(const std::filesystem::path& directory);

/// Seam for foreign dataset layouts. The native importer handles directories
/// written by save_radio_map; adapters for other formats register alongside.
class RadioMapImporter {
 public:
  virtual ~RadioMapImporter() = default;
  virtual std::string name() const = 0;
  virtual bool can_load(const std::filesystem::path& source) const = 0;
  virtual RadioMap load(const std::filesystem::path& source) const = 0;
};

class NativeImporter final : public RadioMapImporter {
 public:
  std::string name() const override { return "native"; }
  bool can_load(const std::filesystem::path& source) const override;
  RadioMap load(const std::filesystem::path& source) const override;
};

class ImporterRegistry {
 public:
  /// Registry holding only the native importer.
  ImporterRegistry();
  void add(std::unique_ptr<RadioMapImporter> importer);
  /// First importer that accepts the source wins.
  RadioMap load(const std::filesystem::path& source) const;

 private:
  std::vector<std::unique_ptr<RadioMapImporter>> importers_;
};

// ---------------------------------------------------------------------------
// Split and draw protocols

struct TrainValSplit {
  std::vector<std::vector<std::size_t>> train;  // per RP, sample indices
  std::vector<std::vector<std::size_t>> val;
  std::vector<std::string> warnings;
};

/// Per-RP stratified 9:1 split. Each RP contributes max(1, round(n/10))
/// validation samples. Throws DatasetError for an RP with fewer than 2.
TrainValSplit split_train_val(std::span<const std::size_t> samples_per_rp, std::uint64_t seed);

/// `draws` distinct indices into a set of `available` samples, drawn without
/// replacement. Throws InvalidArgument when available < draws.
std::vector<std::size_t> draw_test_samples(std::size_t available, std::size_t draws, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Preprocessed feature sets

struct ProcessedLocation {
  std::string id;
  LocationRole role = LocationRole::reference;
  double x = 0.0;
  double y = 0.0;
  std::string ap_id;
  double scale_factor = 1.0;
  std::vector<FeatureVector> features;
};

struct FeatureSet {
  std::vector<ApRecord> aps;
  std::vector<ProcessedLocation> locations;
  std::string source_checksum;  // dataset the features came from
  std::string config_checksum;
};

inline constexpr const char* kFeatureManifestFile = "processed.json";

/// Feature file layout (little-endian): 8-byte magic "CSIFEAT1", u32 version,
/// u32 record count, then per record: u32 source_sequence, 57 f64 magnitudes,
/// 57 f64 unwrapped phases.
std::vector<unsigned char> encode_features(std::span<const FeatureVector> features);
std::vector<FeatureVector> decode_features(std::span<const unsigned char> bytes, const std::string& context);

void save_feature_set(const FeatureSet& set, const std::filesystem::path& directory);
FeatureSet load_feature_set(const std::filesystem::path& directory);

}  // namespace csiloc
