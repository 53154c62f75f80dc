#pragma once

// Scenario algebra: which pulse sequences are present and which must be
// synthesized, plus the curriculum / random sampling of scenarios used while
// training.

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mmgan/error.hpp"

namespace mmgan {

inline constexpr int kDefaultChannels = 4;
inline constexpr int kMaxChannels = 16;

// Canonical channel order for the BraTS-style configuration.
inline const std::vector<std::string>& default_channel_names() {
  static const std::vector<std::string> names{"T1", "T2", "T1c", "T2flair"};
  return names;
}

// Presence mask over C ordered sequences. Character i of the string form
// refers to channel i, '1' meaning present and '0' missing, so "0011" has
// channels 0 and 1 missing. Only nondegenerate masks are representable.
class Scenario {
 public:
  // Bits are packed so that the string read as a binary number (leftmost
  // digit most significant) equals code().
  static Scenario from_code(std::uint32_t code, int channels) {
    check_channels(channels);
    const std::uint32_t full = (1u << channels) - 1u;
    if (code == 0u || code >= full) {
      throw InvalidScenario("mask must have at least one present and one missing sequence");
    }
    return Scenario(code, channels);
  }

  std::uint32_t code() const { return code_; }
  int channels() const { return channels_; }

  bool present(int k) const { return ((code_ >> (channels_ - 1 - k)) & 1u) != 0u; }
  bool missing(int k) const { return !present(k); }

  std::vector<int> present_indices() const { return collect(true); }
  std::vector<int> missing_indices() const { return collect(false); }

  int missing_count() const {
    int n = 0;
    for (int k = 0; k < channels_; ++k) n += missing(k) ? 1 : 0;
    return n;
  }
  int present_count() const { return channels_ - missing_count(); }

  std::string str() const {
    std::string s(static_cast<std::size_t>(channels_), '0');
    for (int k = 0; k < channels_; ++k) s[static_cast<std::size_t>(k)] = present(k) ? '1' : '0';
    return s;
  }

  friend bool operator==(const Scenario&, const Scenario&) = default;
  friend auto operator<=>(const Scenario&, const Scenario&) = default;

 private:
  Scenario(std::uint32_t code, int channels) : code_(code), channels_(channels) {}

  static void check_channels(int channels) {
    if (channels < 2 || channels > kMaxChannels) {
      throw InvalidScenario("channel count " + std::to_string(channels) + " outside [2, 16]");
    }
  }

  std::vector<int> collect(bool want_present) const {
    std::vector<int> out;
    for (int k = 0; k < channels_; ++k) {
      if (present(k) == want_present) out.push_back(k);
    }
    return out;
  }

  std::uint32_t code_ = 0;
  int channels_ = 0;
};

inline Scenario parse_scenario(std::string_view s, int channels) {
  if (static_cast<int>(s.size()) != channels) {
    throw InvalidScenario("'" + std::string(s) + "' has length " + std::to_string(s.size()) +
                          ", expected " + std::to_string(channels));
  }
  std::uint32_t code = 0;
  for (char ch : s) {
    if (ch != '0' && ch != '1') {
      throw InvalidScenario("'" + std::string(s) + "' contains a character other than 0/1");
    }
    code = (code << 1u) | (ch == '1' ? 1u : 0u);
  }
  const std::uint32_t full = (channels >= 2 && channels <= kMaxChannels) ? (1u << channels) - 1u : 0u;
  if (code == 0u) throw InvalidScenario("'" + std::string(s) + "': all sequences missing");
  if (code == full) throw InvalidScenario("'" + std::string(s) + "': all sequences present");
  return Scenario::from_code(code, channels);
}

// Many-to-many synthesis, or many-to-one with a fixed target channel.
struct SynthesisMode {
  std::optional<int> miso_target;

  static SynthesisMode mimo() { return {}; }
  static SynthesisMode miso(int target) { return {target}; }
  bool is_miso() const { return miso_target.has_value(); }
};

// Valid scenarios in ascending binary order of their string form.
inline std::vector<Scenario> enumerate_valid(int channels, SynthesisMode mode = SynthesisMode::mimo()) {
  if (channels < 2 || channels > kMaxChannels) {
    throw InvalidScenario("channel count " + std::to_string(channels) + " outside [2, 16]");
  }
  if (mode.is_miso() && (*mode.miso_target < 0 || *mode.miso_target >= channels)) {
    throw InvalidScenario("MISO target " + std::to_string(*mode.miso_target) + " out of range");
  }
  std::vector<Scenario> out;
  const std::uint32_t full = (1u << channels) - 1u;
  for (std::uint32_t code = 1; code < full; ++code) {
    auto s = Scenario::from_code(code, channels);
    if (mode.is_miso() && s.present(*mode.miso_target)) continue;
    out.push_back(s);
  }
  return out;
}

// Difficulty tier: 1 = easy, 2 = moderate, 3 = hard for four sequences.
inline int difficulty_tier(const Scenario& s) { return s.missing_count(); }

enum class SamplingMode { Curriculum, Random };

struct CurriculumSchedule {
  int tier_epochs = 10;
  int uniform_after = 30;
  int total_epochs = 60;
  SamplingMode mode = SamplingMode::Curriculum;

  // Missing-count the curriculum restricts sampling to at this epoch, or
  // nullopt when every valid scenario is eligible.
  std::optional<int> tier_at(int epoch, int channels) const {
    if (mode == SamplingMode::Random || epoch >= uniform_after) return std::nullopt;
    const int hardest = channels - 1;
    const int tier = 1 + epoch / (tier_epochs > 0 ? tier_epochs : 1);
    return tier < hardest ? tier : hardest;
  }
};

inline std::string to_string(SamplingMode m) { return m == SamplingMode::Curriculum ? "CL" : "RS"; }

inline SamplingMode parse_sampling_mode(std::string_view s) {
  if (s == "CL" || s == "cl") return SamplingMode::Curriculum;
  if (s == "RS" || s == "rs") return SamplingMode::Random;
  throw InvalidScenario("unknown sampling mode '" + std::string(s) + "' (expected CL or RS)");
}

// Candidate set the sampler draws from at a given epoch.
inline std::vector<Scenario> eligible_scenarios(const CurriculumSchedule& schedule, int epoch,
                                                int channels, SynthesisMode mode) {
  auto all = enumerate_valid(channels, mode);
  // MISO training never uses the curriculum.
  if (mode.is_miso()) return all;
  const auto tier = schedule.tier_at(epoch, channels);
  if (!tier) return all;
  std::vector<Scenario> out;
  for (const auto& s : all) {
    if (difficulty_tier(s) == *tier) out.push_back(s);
  }
  return out;
}

// Draws one scenario i.i.d. uniformly from the epoch's eligible set. Only the
// rng argument is mutated.
template <class Rng>
Scenario sample_scenario(const CurriculumSchedule& schedule, int epoch, Rng& rng, int channels,
                         SynthesisMode mode = SynthesisMode::mimo()) {
  if (epoch < 0 || epoch >= schedule.total_epochs) {
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside schedule of " +
                            std::to_string(schedule.total_epochs) + " epochs");
  }
  const auto candidates = eligible_scenarios(schedule, epoch, channels, mode);
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  return candidates[pick(rng)];
}

}  // namespace mmgan
