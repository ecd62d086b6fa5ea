#include "csiloc/csi_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "csiloc/error.hpp"

namespace csiloc {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

SubcarrierLayout SubcarrierLayout::ieee80211_20mhz() {
  std::array<SubcarrierKind, kSubcarrierCount> kinds{};
  for (std::size_t s = 0; s < kSubcarrierCount; ++s) {
    const int f = frequency_of(s);
    if (f == 0) {
      kinds[s] = SubcarrierKind::dc;
    } else if (f < -28 || f > 28) {
      kinds[s] = SubcarrierKind::guard;
    } else if (f == -21 || f == -7 || f == 7 || f == 21) {
      kinds[s] = SubcarrierKind::pilot;
    } else {
      kinds[s] = SubcarrierKind::data;
    }
  }
  return SubcarrierLayout(kinds);
}

SubcarrierLayout::SubcarrierLayout(const std::array<SubcarrierKind, kSubcarrierCount>& kinds) : kinds_(kinds) {
  if (count(SubcarrierKind::guard) != 7 || count(SubcarrierKind::pilot) != 4 ||
      count(SubcarrierKind::data) != 52 || count(SubcarrierKind::dc) != 1) {
    throw ValidationError("subcarrier layout must have 7 guard, 4 pilot, 52 data and 1 dc slot");
  }
  if (kind_at(0) != SubcarrierKind::dc) throw ValidationError("subcarrier layout: dc must sit at frequency 0");

  std::size_t n = 0;
  for (std::size_t s = 0; s < kSubcarrierCount; ++s) {
    if (kinds_[s] == SubcarrierKind::guard) continue;
    if (n > 0 && extraction_[n - 1] + 1 != s) {
      throw ValidationError("subcarrier layout: non-guard slots must be contiguous");
    }
    extraction_[n++] = s;
  }
  if (extraction_[kDcFeaturePosition] != slot_of(0)) {
    throw ValidationError("subcarrier layout: dc must be the centre of the extracted block");
  }
}

SubcarrierKind SubcarrierLayout::kind_at(int frequency_index) const { return kinds_[slot_of(frequency_index)]; }

std::size_t SubcarrierLayout::count(SubcarrierKind kind) const {
  return static_cast<std::size_t>(std::count(kinds_.begin(), kinds_.end(), kind));
}

std::size_t SubcarrierLayout::slot_of(int frequency_index) {
  if (frequency_index < kLowestFrequencyIndex || frequency_index >= kLowestFrequencyIndex + 64) {
    throw InvalidArgument("frequency index " + std::to_string(frequency_index) + " outside -32..31");
  }
  return static_cast<std::size_t>(frequency_index - kLowestFrequencyIndex);
}

CsiPacket make_packet(std::span<const ComplexValue> values, double rssi_dbm, std::uint32_t sequence_no) {
  if (values.size() != kSubcarrierCount) {
    throw ValidationError("packet " + std::to_string(sequence_no) + ": expected 64 subcarriers, got " +
                          std::to_string(values.size()));
  }
  CsiPacket p;
  std::copy(values.begin(), values.end(), p.subcarriers.begin());
  p.rssi_dbm = rssi_dbm;
  p.sequence_no = sequence_no;
  validate_packet(p);
  return p;
}

void validate_packet(const CsiPacket& packet) {
  for (std::size_t s = 0; s < kSubcarrierCount; ++s) {
    const auto& v = packet.subcarriers[s];
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
      throw ValidationError("packet " + std::to_string(packet.sequence_no) + ": non-finite value at subcarrier slot " +
                            std::to_string(s));
    }
  }
  if (!std::isfinite(packet.rssi_dbm) || packet.rssi_dbm < -120.0 || packet.rssi_dbm > 0.0) {
    throw ValidationError("packet " + std::to_string(packet.sequence_no) + ": rssi " +
                          std::to_string(packet.rssi_dbm) + " dBm outside [-120, 0]");
  }
}

std::vector<double> unwrap_phase(std::span<const double> raw_phase, UnwrapMode mode) {
  for (double v : raw_phase) {
    if (!std::isfinite(v)) throw ValidationError("unwrap_phase: non-finite phase value");
  }
  std::vector<double> out(raw_phase.begin(), raw_phase.end());
  double offset = 0.0;
  for (std::size_t i = 1; i < raw_phase.size(); ++i) {
    const double diff = raw_phase[i] - raw_phase[i - 1];
    double step = 0.0;
    if (diff >= std::numbers::pi) {
      step = -kTwoPi;
    } else if (diff <= -std::numbers::pi) {
      step = kTwoPi;
    }
    if (mode == UnwrapMode::cumulative) {
      offset += step;
      out[i] = raw_phase[i] + offset;
    } else {
      out[i] = raw_phase[i] + step;
    }
  }
  return out;
}

FeatureVector extract_features(const CsiPacket& packet, const SubcarrierLayout& layout, UnwrapMode mode) {
  validate_packet(packet);
  FeatureVector fv;
  fv.source_sequence = packet.sequence_no;
  std::array<double, kFeatureLength> raw{};
  const auto& slots = layout.extraction_slots();
  for (std::size_t k = 0; k < kFeatureLength; ++k) {
    if (k == kDcFeaturePosition) continue;  // dc stays (0, 0)
    const auto& v = packet.subcarriers[slots[k]];
    fv.magnitude[k] = std::hypot(v.real(), v.imag());
    raw[k] = std::atan2(v.imag(), v.real());
  }
  const auto unwrapped = unwrap_phase(raw, mode);
  std::copy(unwrapped.begin(), unwrapped.end(), fv.phase_rad.begin());
  return fv;
}

}  // namespace csiloc
