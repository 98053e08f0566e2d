#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vmcachen/cost_model.hpp"
#include "vmcachen/types.hpp"

namespace vmcachen {

struct TierSpec {
   u64 capacityPages = 0;
   u64 readLatencyNs = 0;
   u64 writeLatencyNs = 0;
};

/// Memory tiers (DRAM first) plus the disk. The disk capacity defines the
/// page slot space.
struct TierTopology {
   std::vector<TierSpec> memoryTiers;
   TierSpec disk;
   u32 pageSize = 4096;

   u32 tierCount() const { return static_cast<u32>(memoryTiers.size()) + 1; }
   void validate() const;
};

/// Physical location of a page: a frame in one memory tier, or disk.
struct Placement {
   bool onDisk = true;
   TierId tier;
   u64 frame = 0;

   static Placement disk() { return {}; }
   static Placement inMemory(TierId t, u64 f) { return {false, t, f}; }
   friend bool operator==(const Placement&, const Placement&) = default;
};

struct BackendStats {
   u64 diskReads = 0;
   u64 diskWrites = 0;
   u64 bytesCopied = 0;  // frame-to-frame copies by retargetFrame
   u64 retargets = 0;
   std::vector<u64> occupancy;
};

struct ArenaDeleter {
   void operator()(std::byte* p) const;
};

/// Byte store for every page slot. In-memory by default; file-backed when a
/// path is given (flat file, page i at byte offset i * pageSize).
class SimDisk {
public:
   SimDisk(u64 pages, u32 pageSize, std::optional<std::string> path = std::nullopt);
   ~SimDisk();
   SimDisk(const SimDisk&) = delete;
   SimDisk& operator=(const SimDisk&) = delete;

   void read(PageId pid, std::span<std::byte> out);
   void write(PageId pid, std::span<const std::byte> in);
   /// read() without touching the counters
   void peek(PageId pid, std::span<std::byte> out);

   u64 reads() const { return reads_.load(std::memory_order_relaxed); }
   u64 writes() const { return writes_.load(std::memory_order_relaxed); }
   u64 pages() const { return pages_; }
   u32 pageSize() const { return pageSize_; }
   bool fileBacked() const { return fd_ >= 0; }

private:
   u64 pages_;
   u32 pageSize_;
   int fd_ = -1;
   std::unique_ptr<std::byte[], ArenaDeleter> store_;
   std::atomic<u64> reads_{0};
   std::atomic<u64> writes_{0};
};

/// Simulated n-tier physical substrate: per-tier frame pools, a page table
/// from slot to placement, and the disk.
///
/// Callers hold the page's exclusive state-word lock around bindAndRead,
/// bindFresh, writeBack, discard, flushPage and retargetFrame. Accessors are
/// wait-free.
class TierBackend {
public:
   explicit TierBackend(TierTopology topology, CostModel cost = {}, std::optional<std::string> diskPath = std::nullopt);
   ~TierBackend();
   TierBackend(const TierBackend&) = delete;
   TierBackend& operator=(const TierBackend&) = delete;

   const TierTopology& topology() const { return topology_; }
   u32 memoryTiers() const { return static_cast<u32>(tiers_.size()); }
   u64 pageCount() const { return disk_.pages(); }
   u32 pageSize() const { return topology_.pageSize; }
   CostModel& cost() { return cost_; }
   const CostModel& cost() const { return cost_; }

   /// mbind(MPOL_BIND) + pread analog: allocate a frame in `target` and fill it
   /// from disk. Throws TierFullError / IllegalStateError.
   Placement bindAndRead(PageId pid, TierId target);
   /// Like bindAndRead but zero-fills the frame without touching the disk.
   Placement bindFresh(PageId pid, TierId target);
   /// Copy the frame to disk, free it; the page becomes OnDisk.
   void writeBack(PageId pid);
   /// Free the frame without writing (clean eviction).
   void discard(PageId pid);
   /// Copy the frame to disk and keep it resident.
   void flushPage(PageId pid);
   /// Move the page to a frame in `target`; the slot is unchanged. Retargeting
   /// to the current tier is a no-op.
   Placement retargetFrame(PageId pid, TierId target);

   Placement placementOf(PageId pid) const { return decodeEntry(entry(pid)); }
   /// Raw page-table entry; changes on every placement change (it carries a
   /// generation counter), so optimistic readers can validate against it.
   u64 placementToken(PageId pid) const { return entry(pid); }
   static Placement decodeEntry(u64 e);

   u64 capacity(TierId t) const { return tier(t).capacity; }
   u64 freeFrames(TierId t) const;
   u64 occupancy(TierId t) const { return capacity(t) - freeFrames(t); }
   BackendStats counters() const;

   std::span<std::byte> frameBytes(Placement p);
   std::span<const std::byte> frameBytes(Placement p) const;
   /// Bytes of the current frame; throws IllegalStateError if OnDisk.
   std::span<std::byte> pageBytes(PageId pid);
   std::vector<std::byte> diskBytes(PageId pid);

private:
   struct FramePool {
      u64 capacity = 0;
      std::unique_ptr<std::byte[], ArenaDeleter> arena;
      std::mutex latch;
      std::vector<u64> freeList;
      std::atomic<u64> freeCount{0};
   };

   static constexpr u64 kFrameBits = 40;
   static constexpr u64 kFrameMask = (1ull << kFrameBits) - 1;
   static constexpr u64 kTierShift = 40;
   static constexpr u64 kGenShift = 48;

   u64 entry(PageId pid) const;
   void checkPid(PageId pid) const;
   void checkTier(TierId t) const;
   FramePool& tier(TierId t) { return *tiers_[t.index]; }
   const FramePool& tier(TierId t) const { return *tiers_[t.index]; }
   std::optional<u64> allocFrame(TierId t);
   void freeFrame(TierId t, u64 frame);
   void install(PageId pid, Placement p);
   Placement bind(PageId pid, TierId target, bool fromDisk);
   void release(PageId pid, bool write);

   TierTopology topology_;
   CostModel cost_;
   SimDisk disk_;
   std::vector<std::unique_ptr<FramePool>> tiers_;
   std::unique_ptr<std::atomic<u64>[]> pageTable_;
   std::atomic<u64> bytesCopied_{0};
   std::atomic<u64> retargets_{0};
};

} // namespace vmcachen
