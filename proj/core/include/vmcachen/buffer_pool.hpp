#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "vmcachen/migration_engine.hpp"
#include "vmcachen/resident_set.hpp"
#include "vmcachen/state_word.hpp"
#include "vmcachen/tier_backend.hpp"

namespace vmcachen {

/// Probabilistic tier policy.
///   dr: a disk read lands in DRAM with probability dr, else in the next tier
///   rw: a DRAM eviction batch goes to the next memory tier with probability
///       rw, else to disk
///   rr: a read of a page in a non-DRAM tier promotes it with probability rr
///   dw: a dirty page selected for eviction from a non-DRAM tier to disk is
///       accepted (and written back) with probability dw, else left marked
struct MigrationPolicy {
   double dr = 1.0;
   double dw = 1.0;
   double rr = 1.0;
   double rw = 1.0;
   double utilizationThreshold = 0.95;
   u32 evictBatch = 512;
   u32 promoteBatch = 64;
   u32 maxBatchedMigration = 1024;  // 2x evictBatch

   void validate() const;
};

struct PoolConfig {
   TierTopology topology;
   MigrationPolicy policy;
   MigrationEngineKind engine = MigrationEngineKind::MovePages2;
   MigrationMode mode = MigrationMode::Sync;
   CostModel cost;
   std::optional<std::string> diskPath;
};

/// Seeded generator for the policy draws. One per worker thread.
class Rng {
public:
   explicit Rng(u64 seed = 0x9e3779b97f4a7c15ull) : gen_(seed) {}

   u64 next() { return gen_(); }
   double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
   /// True with probability p; p >= 1 and p <= 0 consume no randomness.
   bool chance(double p) {
      if (p >= 1.0)
         return true;
      if (p <= 0.0)
         return false;
      return uniform() < p;
   }
   u64 below(u64 n) { return std::uniform_int_distribution<u64>(0, n - 1)(gen_); }
   std::mt19937_64& engine() { return gen_; }

private:
   std::mt19937_64 gen_;
};

enum class AccessMode { Shared, Exclusive };

class BufferPool;

/// A fixed page. Releasing (explicitly or on destruction) unfixes it.
class PageHandle {
public:
   PageHandle() = default;
   PageHandle(PageHandle&& o) noexcept { *this = std::move(o); }
   PageHandle& operator=(PageHandle&& o) noexcept;
   PageHandle(const PageHandle&) = delete;
   PageHandle& operator=(const PageHandle&) = delete;
   ~PageHandle() { release(); }

   bool valid() const { return pool_ != nullptr; }
   explicit operator bool() const { return valid(); }
   PageId pid() const { return pid_; }
   AccessMode mode() const { return mode_; }
   /// Version observed when the lock was taken.
   u64 version() const { return version_; }

   std::span<const std::byte> bytes() const { return bytes_; }
   /// Exclusive handles only; marks the page dirty.
   std::span<std::byte> mutableBytes();
   void markDirty() { dirty_ = true; }
   bool dirty() const { return dirty_; }

   void release();

private:
   friend class BufferPool;
   BufferPool* pool_ = nullptr;
   PageId pid_;
   AccessMode mode_ = AccessMode::Shared;
   u64 version_ = 0;
   std::span<std::byte> bytes_;
   bool dirty_ = false;
};

struct PoolStats {
   std::vector<u64> hits;  // per memory tier
   u64 faults = 0;
   u64 fixes = 0;
   u64 optimisticReads = 0;
   u64 optimisticRetries = 0;
   u64 allocations = 0;
   u64 promotions = 0;
   u64 demotions = 0;
   u64 evictionsToDisk = 0;
   u64 diskReads = 0;
   u64 diskWrites = 0;
   u64 migrationCalls = 0;
   u64 pagesMigrated = 0;
   u64 shootdowns = 0;
   u64 thresholdEvictions = 0;
   u64 timeDiskNs = 0;
   u64 timeMigrationNs = 0;

   /// fixes + successful optimistic reads; equals totalHits() + faults.
   u64 accesses() const { return fixes + optimisticReads; }
   u64 totalHits() const;
   PoolStats operator-(const PoolStats& earlier) const;
};

struct PoolEvent {
   enum class Kind { Fault, Migrated, Evicted, EvictBatch };
   Kind kind = Kind::Fault;
   PageId pid;
   TierId src;
   TierId dst;
   bool toDisk = false;
   // EvictBatch only
   u64 occupancyBefore = 0;
   u64 requested = 0;
   u64 moved = 0;
   u64 limit = 0;  // largest occupancy below the utilization threshold
   bool thresholdTriggered = false;
};

/// Receives residency changes as they happen. Called from worker threads
/// while the affected pages are locked; implementations must be thread-safe
/// when the pool is shared.
class PoolObserver {
public:
   virtual ~PoolObserver() = default;
   virtual void onEvent(const PoolEvent& e) = 0;
};

/// n-tier virtual-memory-assisted buffer pool over the simulated backend.
///
/// Every page has a state word; fix/unfix and optimistic reads follow the
/// state machine in state_word.hpp. Each memory tier keeps a resident set
/// scanned by the clock. Tiers are refilled by batch eviction (demotion to the
/// next tier or write-back to disk) once their occupancy reaches the
/// utilization threshold, and pages read from a slower memory tier may be
/// promoted to DRAM in a batch.
class BufferPool {
public:
   explicit BufferPool(PoolConfig config);
   ~BufferPool();
   BufferPool(const BufferPool&) = delete;
   BufferPool& operator=(const BufferPool&) = delete;

   PageHandle fix(PageId pid, AccessMode mode, Rng& rng);
   /// Claims a never-used page: zero-filled, placed in DRAM, returned
   /// exclusively locked and dirty. No disk read.
   PageHandle fixNew(PageId pid, Rng& rng);
   /// Releases the handle. Unfixing an already released handle throws
   /// IllegalStateError.
   void unfix(PageHandle& h);

   /// Runs reader(bytes) without locking and validates afterwards; retries if
   /// the page changed. Falls back to a shared fix when the page is locked or
   /// evicted, or when the read is chosen for promotion. The reader must
   /// tolerate arbitrary bytes (its result is discarded unless validated).
   template <class Fn>
   auto optimisticRead(PageId pid, Fn&& reader, Rng& rng) -> std::invoke_result_t<Fn&, std::span<const std::byte>>;

   /// One clock-driven batch eviction from `src`. dst nullopt = disk. The
   /// one-argument form draws the destination from the policy.
   u64 evictBatch(TierId src, std::optional<TierId> dst, Rng& rng);
   u64 evictBatch(TierId src, Rng& rng);
   /// Locks `trigger` (must be cached in a non-DRAM tier and unlocked) and
   /// promotes it with up to promoteBatch-1 unlocked neighbours from its
   /// tier's resident set. Returns pages moved.
   u64 promoteBatch(PageId trigger, Rng& rng);

   /// Writes every dirty cached page to disk; pages stay cached.
   void flushAll();
   /// Writes back and evicts every cached page (cold start).
   void evictAllToDisk();

   PoolStats stats() const;

   const PoolConfig& config() const { return config_; }
   TierBackend& backend() { return backend_; }
   const TierBackend& backend() const { return backend_; }
   CostModel& cost() { return backend_.cost(); }
   const StateLayout& layout() const { return states_.layout(); }
   StateWord stateOf(PageId pid) const { return states_.load(pid); }
   u64 pageCount() const { return backend_.pageCount(); }
   u32 pageSize() const { return backend_.pageSize(); }
   u32 memoryTiers() const { return backend_.memoryTiers(); }
   const ResidentSet& residentSet(TierId t) const { return tiers_[t.index]->resident; }
   /// Frames in use or reserved in tier t.
   u64 occupancy(TierId t) const { return tiers_[t.index]->committed.load(); }
   /// Largest occupancy strictly below utilizationThreshold * capacity.
   u64 thresholdLimit(TierId t) const { return tiers_[t.index]->limit; }
   bool isDirty(PageId pid) const { return dirty_[pid.slot].load() != 0; }

   /// Residency coherence and frame conservation at a quiescent point (no
   /// page locked). Returns one message per violation.
   std::vector<std::string> checkCoherence() const;

   void setObserver(PoolObserver* obs) { observer_ = obs; }

private:
   enum class Promotion { Decide, Force, Never };

   struct TierState {
      explicit TierState(u64 capacity) : resident(capacity) {}
      ResidentSet resident;
      std::atomic<u64> committed{0};
      std::mutex evictLatch;
      u64 capacity = 0;
      u64 limit = 0;
   };

   struct OptimisticTicket {
      bool fallback = false;
      bool promote = false;
      StateWord word;
      u64 placement = 0;
      TierId tier;
      std::span<const std::byte> bytes;
   };

   struct Counters;

   PageHandle fixImpl(PageId pid, AccessMode mode, Rng& rng, Promotion promo);
   PageHandle makeHandle(PageId pid, AccessMode mode, StateWord w);
   OptimisticTicket beginOptimistic(PageId pid, Rng& rng);
   bool validateOptimistic(PageId pid, const OptimisticTicket& t);
   void noteOptimistic(const OptimisticTicket& t, u64 attempts);

   void checkPid(PageId pid) const;
   TierId chooseFaultTier(Rng& rng) const;
   std::optional<TierId> chooseEvictTarget(TierId src, Rng& rng) const;
   void faultIn(PageId pid, TierId target, bool fresh, Rng& rng);
   void makeRoom(TierId t, u64 incoming, Rng& rng);
   u64 evictFrom(TierId src, std::optional<TierId> dst, u64 want, bool thresholdTriggered, Rng& rng);
   u64 promoteLocked(PageId trigger, TierId src, Rng& rng);
   void evictToDisk(PageId pid, TierId src);
   std::optional<StateWord> lockForMaintenance(PageId pid);
   MigrationOutcome runMigration(const std::vector<PageId>& pages, TierId target);
   void unlockExclusive(PageId pid, bool dirty);
   void emit(const PoolEvent& e) {
      if (observer_)
         observer_->onEvent(e);
   }

   PoolConfig config_;
   TierBackend backend_;
   StateTable states_;
   MigrationEngine engine_;
   std::vector<std::unique_ptr<TierState>> tiers_;
   std::unique_ptr<std::atomic<u8>[]> dirty_;
   std::unique_ptr<Counters> counters_;
   PoolObserver* observer_ = nullptr;
};

//---------------------------------------------------------------------------

template <class Fn>
auto BufferPool::optimisticRead(PageId pid, Fn&& reader, Rng& rng)
   -> std::invoke_result_t<Fn&, std::span<const std::byte>> {
   for (u64 attempt = 1;; attempt++) {
      OptimisticTicket t = beginOptimistic(pid, rng);
      if (t.fallback) {
         PageHandle h = fixImpl(pid, AccessMode::Shared, rng, t.promote ? Promotion::Force : Promotion::Never);
         if constexpr (std::is_void_v<std::invoke_result_t<Fn&, std::span<const std::byte>>>) {
            reader(h.bytes());
            return;
         } else {
            auto r = reader(h.bytes());
            return r;
         }
      }
      if constexpr (std::is_void_v<std::invoke_result_t<Fn&, std::span<const std::byte>>>) {
         reader(t.bytes);
         if (validateOptimistic(pid, t)) {
            noteOptimistic(t, attempt);
            return;
         }
      } else {
         auto r = reader(t.bytes);
         if (validateOptimistic(pid, t)) {
            noteOptimistic(t, attempt);
            return r;
         }
      }
   }
}

} // namespace vmcachen
