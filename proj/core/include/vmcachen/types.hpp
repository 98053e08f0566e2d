#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace vmcachen {

using u8 = std::uint8_t;
using u16 = std::uint16_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;

/// Page identifier. The slot index into the reserved page space never changes
/// for the lifetime of the database.
struct PageId {
   u64 slot = 0;

   constexpr PageId() = default;
   constexpr explicit PageId(u64 s) : slot(s) {}
   friend constexpr auto operator<=>(PageId, PageId) = default;
};

/// Tier index. 0 is local DRAM, n-1 is disk; memory tiers are 0..n-2.
struct TierId {
   u32 index = 0;

   constexpr TierId() = default;
   constexpr explicit TierId(u32 i) : index(i) {}
   friend constexpr auto operator<=>(TierId, TierId) = default;
};

struct Error : std::runtime_error {
   using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
   using Error::Error;
};

struct EncodingError : Error {
   using Error::Error;
};

/// No free frame in the target tier.
struct TierFullError : Error {
   using Error::Error;
};

/// Operation applied to a page in the wrong placement (e.g. write-back of an
/// on-disk page).
struct IllegalStateError : Error {
   using Error::Error;
};

/// Malformed migration request (length mismatch, duplicate pages, cap 0).
struct RequestError : Error {
   using Error::Error;
};

/// Lock acquisition gave up under pathological contention.
struct TimeoutError : Error {
   using Error::Error;
};

} // namespace vmcachen

template <>
struct std::hash<vmcachen::PageId> {
   std::size_t operator()(vmcachen::PageId p) const noexcept { return std::hash<vmcachen::u64>{}(p.slot); }
};
