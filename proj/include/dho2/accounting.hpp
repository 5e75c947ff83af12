#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace dho2 {

/// Peak float-slot accounting per named object. Counts come from the
/// instrumented allocation sites, not from the OS, so they are exact.
struct SlotMeter {
  std::map<std::string, std::int64_t> peak;

  void record(const std::string& name, std::int64_t slots) {
    auto& p = peak[name];
    if (slots > p) p = slots;
  }

  void merge(const SlotMeter& other) {
    for (const auto& [name, slots] : other.peak) record(name, slots);
  }

  std::int64_t get(const std::string& name) const {
    const auto it = peak.find(name);
    return it == peak.end() ? 0 : it->second;
  }
};

}  // namespace dho2
