#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace csiloc {

inline constexpr std::size_t kSubcarrierCount = 64;
inline constexpr std::size_t kFeatureLength = 57;
/// Position of the zeroed DC entry inside an extracted feature sequence.
inline constexpr std::size_t kDcFeaturePosition = 28;
inline constexpr int kLowestFrequencyIndex = -32;

using ComplexValue = std::complex<double>;

enum class SubcarrierKind { guard, pilot, data, dc };

/// Classification of the 64 slots of a 20 MHz symbol. Slot `s` of a packet
/// holds frequency index `s - 32`, i.e. packets are stored in ascending
/// frequency order with DC at slot 32.
class SubcarrierLayout {
 public:
  /// 802.11 20 MHz convention: guards at -32..-29 and +29..+31, DC at 0,
  /// pilots at +-7 and +-21, data elsewhere. Extraction covers -28..+28.
  static SubcarrierLayout ieee80211_20mhz();

  /// Throws ValidationError unless the kinds describe 7 guard, 4 pilot,
  /// 52 data and 1 DC slot with DC at frequency 0 and the 57 non-guard
  /// slots contiguous.
  explicit SubcarrierLayout(const std::array<SubcarrierKind, kSubcarrierCount>& kinds);

  SubcarrierKind kind_at(int frequency_index) const;
  std::size_t count(SubcarrierKind kind) const;

  static std::size_t slot_of(int frequency_index);
  static int frequency_of(std::size_t slot) { return static_cast<int>(slot) + kLowestFrequencyIndex; }

  /// Packet slots that feed the 57-element feature sequences, in order.
  const std::array<std::size_t, kFeatureLength>& extraction_slots() const { return extraction_; }

 private:
  std::array<SubcarrierKind, kSubcarrierCount> kinds_;
  std::array<std::size_t, kFeatureLength> extraction_{};
};

struct CsiPacket {
  std::array<ComplexValue, kSubcarrierCount> subcarriers{};
  double rssi_dbm = 0.0;
  std::int64_t capture_timestamp_us = 0;
  std::uint32_t sequence_no = 0;
  std::string ap_id;
  std::string location_id;
};

/// Builds a packet from a raw value list; the list must hold exactly 64 values.
CsiPacket make_packet(std::span<const ComplexValue> values, double rssi_dbm, std::uint32_t sequence_no);

/// Throws ValidationError (naming the sequence number) on non-finite
/// subcarrier values or RSSI outside [-120, 0] dBm.
void validate_packet(const CsiPacket& packet);

struct FeatureVector {
  std::array<double, kFeatureLength> magnitude{};
  std::array<double, kFeatureLength> phase_rad{};
  std::uint32_t source_sequence = 0;

  bool operator==(const FeatureVector&) const = default;
};

enum class UnwrapMode {
  /// Each +-2pi correction carries forward to every later subcarrier.
  cumulative,
  /// Only the subcarrier following a jump is corrected (literal one-step form).
  single_step,
};

/// Removes 2pi discontinuities along the subcarrier axis. A raw adjacent
/// difference >= pi is corrected by -2pi, one <= -pi by +2pi.
std::vector<double> unwrap_phase(std::span<const double> raw_phase, UnwrapMode mode = UnwrapMode::cumulative);

FeatureVector extract_features(const CsiPacket& packet, const SubcarrierLayout& layout,
                               UnwrapMode mode = UnwrapMode::cumulative);

}  // namespace csiloc
