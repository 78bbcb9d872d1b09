// Fixed data schema: the 15 dynamic channels, 5 static covariates and the
// six adverse events, in the order every array in the pipeline uses.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

#include "iaenet/common.hpp"

namespace iaenet {

inline constexpr std::size_t kWindow = 15;         // W: 30 s at 2 s
inline constexpr std::size_t kDynamic = 15;        // D
inline constexpr std::size_t kStatic = 5;          // S
inline constexpr std::size_t kEvents = 6;          // C
inline constexpr std::size_t kEventSegment = 30;   // 1 min at 2 s
inline constexpr double kPeriodSeconds = 2.0;

enum class Channel : std::uint8_t {
  PPF20_VOL,
  RFTN20_VOL,
  PPF20_CE,
  RFTN20_CE,
  HR,
  BT,
  ART_DBP,
  ART_SBP,
  ART_MBP,
  ETCO2,
  PLETH_SPO2,
  VENT_TV,
  VENT_RR,
  BIS,
  ECG_II,
};

inline constexpr std::array<std::string_view, kDynamic> kChannelNames = {
    "Orchestra/PPF20_VOL", "Orchestra/RFTN20_VOL", "Orchestra/PPF20_CE",
    "Orchestra/RFTN20_CE", "Solar8000/HR",         "Solar8000/BT",
    "Solar8000/ART_DBP",   "Solar8000/ART_SBP",    "Solar8000/ART_MBP",
    "Solar8000/ETCO2",     "Solar8000/PLETH_SPO2", "Solar8000/VENT_TV",
    "Solar8000/VENT_RR",   "BIS/BIS",              "SNUADC/ECG_II",
};

inline constexpr std::array<std::string_view, kStatic> kStaticNames = {
    "age", "sex", "weight", "height", "asa"};

constexpr std::size_t index_of(Channel c) { return static_cast<std::size_t>(c); }

constexpr std::string_view channel_name(Channel c) { return kChannelNames[index_of(c)]; }

inline std::optional<Channel> channel_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kDynamic; ++i) {
    if (kChannelNames[i] == name) return static_cast<Channel>(i);
  }
  return std::nullopt;
}

constexpr bool is_volume_channel(Channel c) {
  return c == Channel::PPF20_VOL || c == Channel::RFTN20_VOL;
}

/// Event order is frozen; label vectors and co-occurrence matrices use it.
enum class EventId : std::uint8_t {
  hypotension,
  low_doa,
  arrhythmia,
  hypoxemia,
  hypothermia,
  hypocapnia,
};

inline constexpr std::array<EventId, kEvents> kAllEvents = {
    EventId::hypotension, EventId::low_doa,     EventId::arrhythmia,
    EventId::hypoxemia,   EventId::hypothermia, EventId::hypocapnia};

inline constexpr std::array<std::string_view, kEvents> kEventNames = {
    "hypotension", "low_doa", "arrhythmia", "hypoxemia", "hypothermia", "hypocapnia"};

constexpr std::size_t index_of(EventId e) { return static_cast<std::size_t>(e); }

constexpr std::string_view event_name(EventId e) { return kEventNames[index_of(e)]; }

inline std::optional<EventId> event_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kEvents; ++i) {
    if (kEventNames[i] == name) return static_cast<EventId>(i);
  }
  return std::nullopt;
}

/// Channel each event condition is evaluated on.
constexpr Channel source_channel(EventId e) {
  switch (e) {
    case EventId::hypotension: return Channel::ART_MBP;
    case EventId::low_doa: return Channel::BIS;
    case EventId::arrhythmia: return Channel::HR;
    case EventId::hypoxemia: return Channel::PLETH_SPO2;
    case EventId::hypothermia: return Channel::BT;
    case EventId::hypocapnia: return Channel::ETCO2;
  }
  return Channel::ART_MBP;
}

/// Lower threshold of each event (arrhythmia also has an upper bound of 100).
constexpr double event_threshold(EventId e) {
  switch (e) {
    case EventId::hypotension: return 65.0;
    case EventId::low_doa: return 40.0;
    case EventId::arrhythmia: return 60.0;
    case EventId::hypoxemia: return 90.0;
    case EventId::hypothermia: return 35.0;
    case EventId::hypocapnia: return 30.0;
  }
  return 0.0;
}

inline constexpr double kTachycardiaThreshold = 100.0;

/// Lead time in minutes to a sample offset on the 2 s grid.
inline std::size_t lead_steps_for_minutes(int minutes) {
  require_config(minutes == 5 || minutes == 10 || minutes == 15,
                 "lead_minutes must be one of 5, 10, 15");
  return static_cast<std::size_t>(minutes) * 30;
}

}  // namespace iaenet
