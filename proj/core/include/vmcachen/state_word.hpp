#pragma once

#include <atomic>
#include <memory>
#include <optional>

#include "vmcachen/types.hpp"

namespace vmcachen {

enum class LockKind : u8 { Unlocked, Shared, Locked, Marked, Evicted };

/// The top byte of a page-state word.
///   Unlocked = 0, LockedShared = 1..252 (the reader count), Locked = 253,
///   Marked = 254, Evicted = 255
class LockState {
public:
   static constexpr u8 kUnlocked = 0;
   static constexpr u8 kMaxShared = 252;
   static constexpr u8 kLocked = 253;
   static constexpr u8 kMarked = 254;
   static constexpr u8 kEvicted = 255;

   constexpr LockState() = default;

   static constexpr LockState fromByte(u8 b) { return LockState(b); }
   static constexpr LockState unlocked() { return LockState(kUnlocked); }
   static constexpr LockState locked() { return LockState(kLocked); }
   static constexpr LockState marked() { return LockState(kMarked); }
   static constexpr LockState evicted() { return LockState(kEvicted); }
   static LockState shared(u32 count);

   constexpr u8 byte() const { return raw_; }
   constexpr u8 sharedCount() const { return kind() == LockKind::Shared ? raw_ : 0; }
   constexpr LockKind kind() const {
      if (raw_ == kUnlocked)
         return LockKind::Unlocked;
      if (raw_ <= kMaxShared)
         return LockKind::Shared;
      if (raw_ == kLocked)
         return LockKind::Locked;
      if (raw_ == kMarked)
         return LockKind::Marked;
      return LockKind::Evicted;
   }

   friend constexpr bool operator==(LockState, LockState) = default;

private:
   constexpr explicit LockState(u8 b) : raw_(b) {}
   u8 raw_ = kUnlocked;
};

/// 64-bit packed page state: lock byte | tier bits | version counter.
struct StateWord {
   u64 bits = 0;

   constexpr StateWord() = default;
   constexpr explicit StateWord(u64 b) : bits(b) {}
   friend constexpr bool operator==(StateWord, StateWord) = default;
};

struct DecodedState {
   LockState state;
   TierId tier;
   u64 version = 0;

   friend bool operator==(const DecodedState&, const DecodedState&) = default;
};

enum class EdgeKind : u8 { LockExclusive, LockShared, UnlockExclusive, UnlockShared, Mark, Evict, SetTier, FaultIn };

struct Edge {
   EdgeKind kind = EdgeKind::LockExclusive;
   bool dirty = false;  // UnlockExclusive only
   TierId tier;         // SetTier / FaultIn only

   static constexpr Edge lockExclusive() { return {EdgeKind::LockExclusive, false, TierId{}}; }
   static constexpr Edge lockShared() { return {EdgeKind::LockShared, false, TierId{}}; }
   static constexpr Edge unlockExclusive(bool dirty) { return {EdgeKind::UnlockExclusive, dirty, TierId{}}; }
   static constexpr Edge unlockShared() { return {EdgeKind::UnlockShared, false, TierId{}}; }
   static constexpr Edge mark() { return {EdgeKind::Mark, false, TierId{}}; }
   static constexpr Edge evict() { return {EdgeKind::Evict, false, TierId{}}; }
   static constexpr Edge setTier(TierId t) { return {EdgeKind::SetTier, false, t}; }
   static constexpr Edge faultIn(TierId t) { return {EdgeKind::FaultIn, false, t}; }
};

/// Bit layout of the state word for an n-tier hierarchy (n counts the disk).
/// Tier bits = ceil(log2(n-1)); version bits = 64 - 8 - tier bits.
class StateLayout {
public:
   explicit StateLayout(u32 tierCount);

   u32 tierCount() const { return tierCount_; }
   u32 memoryTiers() const { return tierCount_ - 1; }
   u32 tierBits() const { return tierBits_; }
   u32 versionBits() const { return versionBits_; }
   u64 maxVersion() const { return versionMask_; }

   /// Throws EncodingError for a non-memory tier or an oversized version.
   StateWord encode(LockState state, TierId tier, u64 version) const;
   DecodedState decode(StateWord word) const;

   /// The successor word along `edge`, or nullopt when the edge is not legal
   /// from `current`. Pure.
   std::optional<StateWord> transition(StateWord current, Edge edge) const;

   static LockState lockOf(StateWord w) { return LockState::fromByte(static_cast<u8>(w.bits >> 56)); }
   TierId tierOf(StateWord w) const { return TierId(static_cast<u32>((w.bits >> versionBits_) & tierMask_)); }
   u64 versionOf(StateWord w) const { return w.bits & versionMask_; }

private:
   StateWord with(StateWord w, LockState s) const { return StateWord((w.bits & ~(0xFFull << 56)) | (u64(s.byte()) << 56)); }
   StateWord withTier(StateWord w, TierId t) const;
   StateWord bumped(StateWord w) const;

   u32 tierCount_;
   u32 tierBits_;
   u32 versionBits_;
   u64 versionMask_;
   u64 tierMask_;
};

/// Shared array of state words indexed by page slot. All mutation goes
/// through compare-and-swap of a legal transition.
class StateTable {
public:
   StateTable(const StateLayout& layout, u64 pages, StateWord initial);

   const StateLayout& layout() const { return layout_; }
   u64 size() const { return count_; }

   StateWord load(PageId pid) const { return StateWord(words_[pid.slot].load()); }

   /// CAS from `expected` along `edge`. Returns the installed word, or nullopt
   /// when the edge is illegal or the CAS lost a race (`expected` is then
   /// refreshed with the current word).
   std::optional<StateWord> apply(PageId pid, StateWord& expected, Edge edge);

   /// Retries `apply` until it succeeds or the edge becomes illegal.
   std::optional<StateWord> applyLoop(PageId pid, Edge edge);

private:
   StateLayout layout_;
   u64 count_;
   std::unique_ptr<std::atomic<u64>[]> words_;
};

} // namespace vmcachen
