#pragma once

#include <cstdint>

namespace combo {

// Opaque worker identifier, unique and stable for the lifetime of a run.
enum class WorkerId : std::uint32_t {};

constexpr std::uint32_t raw(WorkerId id) noexcept {
  return static_cast<std::uint32_t>(id);
}

constexpr WorkerId worker_id(std::uint32_t value) noexcept {
  return WorkerId{value};
}

}  // namespace combo
