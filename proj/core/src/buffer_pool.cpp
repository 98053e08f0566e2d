#include "vmcachen/buffer_pool.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <thread>
#include <unordered_map>

namespace vmcachen {

namespace {

constexpr u64 kEvictSweeps = 8;
constexpr u64 kClockChunk = 64;
constexpr u64 kTimeoutNs = 30'000'000'000ull;
constexpr u32 kMakeRoomAttempts = 64;
constexpr u32 kPromoteSharedPatience = 64;


// Spins politely; raises TimeoutError once the wait exceeds kTimeoutNs.
class Backoff {
public:
   void pause() {
      attempts_++;
      if ((attempts_ & 1023) == 0) {
         u64 now = nowNs();
         if (!start_)
            start_ = now;
         else if (now - start_ > kTimeoutNs)
            throw TimeoutError("page lock not acquired within the retry budget");
      }
      std::this_thread::yield();
   }
   u64 attempts() const { return attempts_; }

private:
   u64 attempts_ = 0;
   u64 start_ = 0;
};

u32 shardIndex() {
   static std::atomic<u32> nextShard{0};
   thread_local u32 idx = nextShard.fetch_add(1, std::memory_order_relaxed);
   return idx;
}

} // namespace

void MigrationPolicy::validate() const {
   for (double p : {dr, dw, rr, rw})
      if (!(p >= 0.0 && p <= 1.0))
         throw ConfigError("migration probabilities must lie in [0,1]");
   if (!(utilizationThreshold > 0.0 && utilizationThreshold <= 1.0))
      throw ConfigError("utilization threshold must lie in (0,1]");
   if (evictBatch == 0 || promoteBatch == 0 || maxBatchedMigration == 0)
      throw ConfigError("batch sizes must be >= 1");
}

u64 PoolStats::totalHits() const {
   u64 s = 0;
   for (u64 h : hits)
      s += h;
   return s;
}

PoolStats PoolStats::operator-(const PoolStats& e) const {
   PoolStats d = *this;
   for (std::size_t i = 0; i < d.hits.size() && i < e.hits.size(); i++)
      d.hits[i] -= e.hits[i];
   d.faults -= e.faults;
   d.fixes -= e.fixes;
   d.optimisticReads -= e.optimisticReads;
   d.optimisticRetries -= e.optimisticRetries;
   d.allocations -= e.allocations;
   d.promotions -= e.promotions;
   d.demotions -= e.demotions;
   d.evictionsToDisk -= e.evictionsToDisk;
   d.diskReads -= e.diskReads;
   d.diskWrites -= e.diskWrites;
   d.migrationCalls -= e.migrationCalls;
   d.pagesMigrated -= e.pagesMigrated;
   d.shootdowns -= e.shootdowns;
   d.thresholdEvictions -= e.thresholdEvictions;
   d.timeDiskNs -= e.timeDiskNs;
   d.timeMigrationNs -= e.timeMigrationNs;
   return d;
}

//---------------------------------------------------------------------------

struct BufferPool::Counters {
   enum Id : u32 {
      Faults,
      Fixes,
      OptReads,
      OptRetries,
      Allocations,
      Promotions,
      Demotions,
      EvictionsToDisk,
      DiskReads,
      DiskWrites,
      MigrationCalls,
      PagesMigrated,
      Shootdowns,
      ThresholdEvictions,
      TimeDisk,
      TimeMigration,
      kFixed
   };
   static constexpr u32 kShards = 16;

   struct alignas(64) Shard {
      std::unique_ptr<std::atomic<u64>[]> v;
   };

   explicit Counters(u32 tiers) : width(kFixed + tiers) {
      for (Shard& s : shards) {
         s.v = std::make_unique<std::atomic<u64>[]>(width);
         for (u32 i = 0; i < width; i++)
            s.v[i].store(0, std::memory_order_relaxed);
      }
   }

   void add(u32 id, u64 n = 1) { shards[shardIndex() % kShards].v[id].fetch_add(n, std::memory_order_relaxed); }
   void hit(TierId t) { add(kFixed + t.index); }
   u64 sum(u32 id) const {
      u64 s = 0;
      for (const Shard& sh : shards)
         s += sh.v[id].load(std::memory_order_relaxed);
      return s;
   }

   u32 width;
   Shard shards[kShards];
};

//---------------------------------------------------------------------------

PageHandle& PageHandle::operator=(PageHandle&& o) noexcept {
   if (this != &o) {
      release();
      pool_ = o.pool_;
      pid_ = o.pid_;
      mode_ = o.mode_;
      version_ = o.version_;
      bytes_ = o.bytes_;
      dirty_ = o.dirty_;
      o.pool_ = nullptr;
   }
   return *this;
}

std::span<std::byte> PageHandle::mutableBytes() {
   if (!pool_ || mode_ != AccessMode::Exclusive)
      throw IllegalStateError("mutable access needs an exclusive handle");
   dirty_ = true;
   return bytes_;
}

void PageHandle::release() {
   if (pool_)
      pool_->unfix(*this);
}

//---------------------------------------------------------------------------

BufferPool::BufferPool(PoolConfig config)
   : config_((config.policy.validate(), std::move(config))),
     backend_(config_.topology, config_.cost, config_.diskPath),
     states_(StateLayout(config_.topology.tierCount()), config_.topology.disk.capacityPages,
             StateLayout(config_.topology.tierCount()).encode(LockState::evicted(), TierId(0), 0)),
     engine_(backend_),
     dirty_(std::make_unique<std::atomic<u8>[]>(config_.topology.disk.capacityPages)),
     counters_(std::make_unique<Counters>(backend_.memoryTiers())) {
   for (u64 i = 0; i < pageCount(); i++)
      dirty_[i].store(0, std::memory_order_relaxed);
   for (const TierSpec& spec : config_.topology.memoryTiers) {
      auto ts = std::make_unique<TierState>(spec.capacityPages);
      ts->capacity = spec.capacityPages;
      double x = config_.policy.utilizationThreshold * static_cast<double>(spec.capacityPages);
      double f = std::floor(x);
      u64 limit = static_cast<u64>(f == x ? f - 1 : f);
      ts->limit = std::min<u64>(limit, spec.capacityPages - 1);
      tiers_.push_back(std::move(ts));
   }
}

BufferPool::~BufferPool() = default;

void BufferPool::checkPid(PageId pid) const {
   if (pid.slot >= pageCount())
      throw IllegalStateError("page " + std::to_string(pid.slot) + " out of range");
}

TierId BufferPool::chooseFaultTier(Rng& rng) const {
   if (memoryTiers() == 1)
      return TierId(0);
   return rng.chance(config_.policy.dr) ? TierId(0) : TierId(1);
}

std::optional<TierId> BufferPool::chooseEvictTarget(TierId src, Rng& rng) const {
   if (src.index + 1 >= memoryTiers())
      return std::nullopt;
   if (rng.chance(config_.policy.rw))
      return TierId(src.index + 1);
   return std::nullopt;
}

void BufferPool::unlockExclusive(PageId pid, bool dirty) {
   [[maybe_unused]] auto w = states_.applyLoop(pid, Edge::unlockExclusive(dirty));
   assert(w && "unlock of a page that is not exclusively locked");
}

PageHandle BufferPool::makeHandle(PageId pid, AccessMode mode, StateWord w) {
   PageHandle h;
   h.pool_ = this;
   h.pid_ = pid;
   h.mode_ = mode;
   h.version_ = layout().versionOf(w);
   h.bytes_ = backend_.pageBytes(pid);
   return h;
}

//---------------------------------------------------------------------------
// fix / unfix

PageHandle BufferPool::fix(PageId pid, AccessMode mode, Rng& rng) {
   return fixImpl(pid, mode, rng, Promotion::Decide);
}

PageHandle BufferPool::fixImpl(PageId pid, AccessMode mode, Rng& rng, Promotion promo) {
   checkPid(pid);
   bool decided = promo != Promotion::Decide;
   bool promote = promo == Promotion::Force;
   bool didIo = false;
   u64 sharedWaits = 0;
   Backoff backoff;

   auto finish = [&](StateWord w) {
      TierId t = layout().tierOf(w);
      counters_->add(Counters::Fixes);
      if (didIo)
         counters_->add(Counters::Faults);
      else
         counters_->hit(t);
      cost().charge(config_.topology.memoryTiers[t.index].readLatencyNs);
      return makeHandle(pid, mode, w);
   };

   while (true) {
      StateWord w = states_.load(pid);
      LockKind k = StateLayout::lockOf(w).kind();
      TierId t = layout().tierOf(w);

      if (k == LockKind::Evicted) {
         TierId target = chooseFaultTier(rng);
         if (auto nw = states_.apply(pid, w, Edge::faultIn(target))) {
            try {
               faultIn(pid, target, false, rng);
            } catch (...) {
               states_.applyLoop(pid, Edge::evict());
               throw;
            }
            didIo = true;
            // the placement was just chosen by dr; no promotion on this access
            decided = true;
            promote = false;
            if (mode == AccessMode::Exclusive)
               return finish(*nw);
            unlockExclusive(pid, false);
         }
         continue;
      }
      if (k == LockKind::Locked) {
         backoff.pause();
         continue;
      }

      if (t.index != 0 && !decided) {
         decided = true;
         promote = rng.chance(config_.policy.rr);
      }
      if (t.index != 0 && promote) {
         if (k == LockKind::Shared) {
            // promotion needs the page exclusively; give up after a while
            if (++sharedWaits > kPromoteSharedPatience)
               promote = false;
            backoff.pause();
            continue;
         }
         if (states_.apply(pid, w, Edge::lockExclusive())) {
            promote = false;
            promoteLocked(pid, t, rng);
            StateWord cur = states_.load(pid);
            if (mode == AccessMode::Exclusive)
               return finish(cur);
            unlockExclusive(pid, false);
         }
         continue;
      }

      if (mode == AccessMode::Exclusive) {
         if (auto nw = states_.apply(pid, w, Edge::lockExclusive()))
            return finish(*nw);
      } else if (k == LockKind::Marked) {
         // clear the mark (second chance), then retry for a shared lock
         if (states_.apply(pid, w, Edge::lockExclusive()))
            unlockExclusive(pid, false);
         continue;
      } else if (auto nw = states_.apply(pid, w, Edge::lockShared())) {
         return finish(*nw);
      }
      backoff.pause();
   }
}

PageHandle BufferPool::fixNew(PageId pid, Rng& rng) {
   checkPid(pid);
   Backoff backoff;
   while (true) {
      StateWord w = states_.load(pid);
      if (StateLayout::lockOf(w).kind() != LockKind::Evicted)
         throw IllegalStateError("page " + std::to_string(pid.slot) + " is already in use");
      if (auto nw = states_.apply(pid, w, Edge::faultIn(TierId(0)))) {
         try {
            faultIn(pid, TierId(0), true, rng);
         } catch (...) {
            states_.applyLoop(pid, Edge::evict());
            throw;
         }
         counters_->add(Counters::Allocations);
         PageHandle h = makeHandle(pid, AccessMode::Exclusive, *nw);
         h.dirty_ = true;
         return h;
      }
      backoff.pause();
   }
}

void BufferPool::unfix(PageHandle& h) {
   if (!h.pool_)
      throw IllegalStateError("unfix of a released handle");
   if (h.pool_ != this)
      throw IllegalStateError("handle belongs to another pool");
   PageId pid = h.pid_;
   if (h.mode_ == AccessMode::Exclusive) {
      if (h.dirty_) {
         dirty_[pid.slot].store(1);
         TierId t = layout().tierOf(states_.load(pid));
         cost().charge(config_.topology.memoryTiers[t.index].writeLatencyNs);
      }
      unlockExclusive(pid, h.dirty_);
   } else {
      [[maybe_unused]] auto w = states_.applyLoop(pid, Edge::unlockShared());
      assert(w && "shared unfix of a page that is not share-locked");
   }
   h.pool_ = nullptr;
}

//---------------------------------------------------------------------------
// optimistic reads

BufferPool::OptimisticTicket BufferPool::beginOptimistic(PageId pid, Rng& rng) {
   checkPid(pid);
   bool decided = false;
   Backoff backoff;
   while (true) {
      StateWord w = states_.load(pid);
      LockKind k = StateLayout::lockOf(w).kind();
      if (k == LockKind::Locked || k == LockKind::Evicted)
         return {.fallback = true};
      if (k == LockKind::Marked) {
         if (states_.apply(pid, w, Edge::lockExclusive()))
            unlockExclusive(pid, false);
         continue;
      }
      TierId t = layout().tierOf(w);
      if (t.index != 0 && !decided) {
         decided = true;
         if (rng.chance(config_.policy.rr))
            return {.fallback = true, .promote = true};
      }
      u64 token = backend_.placementToken(pid);
      Placement p = TierBackend::decodeEntry(token);
      if (p.onDisk || p.tier != t) {
         backoff.pause();
         continue;
      }
      cost().charge(config_.topology.memoryTiers[t.index].readLatencyNs);
      OptimisticTicket ticket;
      ticket.word = w;
      ticket.placement = token;
      ticket.tier = t;
      ticket.bytes = backend_.frameBytes(p);
      return ticket;
   }
}

bool BufferPool::validateOptimistic(PageId pid, const OptimisticTicket& t) {
   std::atomic_thread_fence(std::memory_order_acquire);
   StateWord w = states_.load(pid);
   LockKind k = StateLayout::lockOf(w).kind();
   if (k == LockKind::Locked || k == LockKind::Evicted)
      return false;
   if (backend_.placementToken(pid) != t.placement)
      return false;
   return layout().versionOf(w) == layout().versionOf(t.word) && layout().tierOf(w) == t.tier;
}

void BufferPool::noteOptimistic(const OptimisticTicket& t, u64 attempts) {
   counters_->add(Counters::OptReads);
   counters_->hit(t.tier);
   if (attempts > 1)
      counters_->add(Counters::OptRetries, attempts - 1);
}

//---------------------------------------------------------------------------
// residency

void BufferPool::faultIn(PageId pid, TierId target, bool fresh, Rng& rng) {
   makeRoom(target, 1, rng);
   TierState& ts = *tiers_[target.index];
   u64 t0 = nowNs();
   try {
      if (fresh)
         backend_.bindFresh(pid, target);
      else
         backend_.bindAndRead(pid, target);
   } catch (...) {
      ts.committed.fetch_sub(1);
      throw;
   }
   if (!fresh) {
      counters_->add(Counters::DiskReads);
      counters_->add(Counters::TimeDisk, nowNs() - t0);
   }
   dirty_[pid.slot].store(fresh ? 1 : 0);
   ts.resident.insert(pid);
   emit({.kind = PoolEvent::Kind::Fault, .pid = pid, .src = target, .dst = target});
}

void BufferPool::makeRoom(TierId t, u64 incoming, Rng& rng) {
   TierState& ts = *tiers_[t.index];
   if (incoming > ts.capacity)
      throw TierFullError("request exceeds the capacity of tier " + std::to_string(t.index));

   auto tryReserve = [&](bool belowLimitOnly) {
      u64 c = ts.committed.load();
      while ((!belowLimitOnly || c <= ts.limit) && c + incoming <= ts.capacity)
         if (ts.committed.compare_exchange_weak(c, c + incoming))
            return true;
      return false;
   };

   for (u32 attempt = 0; attempt < kMakeRoomAttempts; attempt++) {
      if (tryReserve(true))
         return;
      {
         std::lock_guard guard(ts.evictLatch);
         if (tryReserve(true))
            return;
         u64 c = ts.committed.load();
         u64 want = config_.policy.evictBatch;
         if (c > ts.limit)
            want = std::max(want, c - ts.limit);
         if (c + incoming > ts.capacity)
            want = std::max(want, c + incoming - ts.capacity);
         want = std::min(want, c);
         if (want > 0)
            evictFrom(t, chooseEvictTarget(t, rng), want, true, rng);
         if (tryReserve(false))
            return;
      }
      std::this_thread::yield();
   }
   throw TierFullError("tier " + std::to_string(t.index) + " stays full after eviction");
}

MigrationOutcome BufferPool::runMigration(const std::vector<PageId>& pages, TierId target) {
   u64 t0 = nowNs();
   MigrationOutcome out =
      engine_.migrate(config_.engine, pages, target, config_.mode, config_.policy.maxBatchedMigration);
   counters_->add(Counters::MigrationCalls);
   counters_->add(Counters::PagesMigrated, out.migrated);
   counters_->add(Counters::Shootdowns, out.shootdowns);
   counters_->add(Counters::TimeMigration, nowNs() - t0);
   return out;
}

u64 BufferPool::evictFrom(TierId src, std::optional<TierId> dst, u64 want, bool thresholdTriggered, Rng& rng) {
   TierState& ts = *tiers_[src.index];
   const u64 before = ts.committed.load();
   const u64 table = ts.resident.tableSize();
   const u64 chunk = std::min(table, kClockChunk);
   const u64 maxScan = kEvictSweeps * table;
   const bool dwApplies = !dst && src.index != 0 && config_.policy.dw < 1.0;

   // step 1: clock scan, marking unlocked pages and locking marked ones
   std::vector<PageId> victims;
   for (u64 scanned = 0; victims.size() < want && scanned < maxScan && ts.resident.size() > 0; scanned += chunk) {
      const bool forceDirty = scanned >= maxScan / 2;
      ts.resident.iterateClockBatch(chunk, [&](PageId pid) {
         if (victims.size() >= want)
            return;
         StateWord w = states_.load(pid);
         if (layout().tierOf(w) != src)
            return;
         LockKind k = StateLayout::lockOf(w).kind();
         if (k == LockKind::Unlocked) {
            states_.apply(pid, w, Edge::mark());
         } else if (k == LockKind::Marked) {
            if (dwApplies && !forceDirty && isDirty(pid) && !rng.chance(config_.policy.dw))
               return;
            if (states_.apply(pid, w, Edge::lockExclusive()))
               victims.push_back(pid);
         }
      });
   }

   bool toDisk = !dst;
   if (!victims.empty() && dst) {
      try {
         makeRoom(*dst, victims.size(), rng);
      } catch (const TierFullError&) {
         toDisk = true;
      }
   }

   u64 moved = 0;
   if (!victims.empty() && !toDisk) {
      // steps 2-4 toward a memory tier
      TierState& ds = *tiers_[dst->index];
      MigrationOutcome out = runMigration(victims, *dst);
      for (std::size_t i = 0; i < victims.size(); i++) {
         PageId pid = victims[i];
         if (out.status[i] >= 0) {
            ts.resident.remove(pid);
            ds.resident.insert(pid);
            states_.applyLoop(pid, Edge::setTier(*dst));
            emit({.kind = PoolEvent::Kind::Migrated, .pid = pid, .src = src, .dst = *dst});
            unlockExclusive(pid, false);
            moved++;
         } else {
            unlockExclusive(pid, false);
            ds.committed.fetch_sub(1);
         }
      }
      counters_->add(Counters::Demotions, moved);
   } else {
      for (PageId pid : victims)
         evictToDisk(pid, src);
      moved = victims.size();
      counters_->add(Counters::EvictionsToDisk, moved);
   }
   ts.committed.fetch_sub(moved);
   if (thresholdTriggered)
      counters_->add(Counters::ThresholdEvictions);

   emit({.kind = PoolEvent::Kind::EvictBatch,
         .src = src,
         .dst = toDisk ? src : *dst,
         .toDisk = toDisk,
         .occupancyBefore = before,
         .requested = want,
         .moved = moved,
         .limit = ts.limit,
         .thresholdTriggered = thresholdTriggered});
   return moved;
}

// Caller holds pid exclusively; it ends Evicted. Does not touch `committed`.
void BufferPool::evictToDisk(PageId pid, TierId src) {
   u64 t0 = nowNs();
   if (dirty_[pid.slot].load()) {
      backend_.writeBack(pid);
      counters_->add(Counters::DiskWrites);
   } else {
      backend_.discard(pid);
   }
   counters_->add(Counters::TimeDisk, nowNs() - t0);
   dirty_[pid.slot].store(0);
   tiers_[src.index]->resident.remove(pid);
   emit({.kind = PoolEvent::Kind::Evicted, .pid = pid, .src = src, .dst = src, .toDisk = true});
   [[maybe_unused]] auto w = states_.applyLoop(pid, Edge::evict());
   assert(w);
}

u64 BufferPool::promoteLocked(PageId trigger, TierId src, Rng& rng) {
   TierState& ss = *tiers_[src.index];
   TierState& ds = *tiers_[0];
   const u64 limit = std::min<u64>(config_.policy.promoteBatch, std::max<u64>(1, ds.limit / 2));
   const u64 table = ss.resident.tableSize();
   const u64 chunk = std::min(table, kClockChunk);

   std::vector<PageId> batch{trigger};
   for (u64 scanned = 0; batch.size() < limit && scanned < table; scanned += chunk) {
      ss.resident.iterateClockBatch(chunk, [&](PageId pid) {
         if (batch.size() >= limit || pid == trigger)
            return;
         StateWord w = states_.load(pid);
         if (StateLayout::lockOf(w).kind() != LockKind::Unlocked || layout().tierOf(w) != src)
            return;
         if (states_.apply(pid, w, Edge::lockExclusive()))
            batch.push_back(pid);
      });
   }

   try {
      makeRoom(TierId(0), batch.size(), rng);
   } catch (const TierFullError&) {
      for (PageId pid : batch)
         if (pid != trigger)
            unlockExclusive(pid, false);
      return 0;
   }

   MigrationOutcome out = runMigration(batch, TierId(0));
   u64 moved = 0;
   for (std::size_t i = 0; i < batch.size(); i++) {
      PageId pid = batch[i];
      if (out.status[i] >= 0) {
         ss.resident.remove(pid);
         ds.resident.insert(pid);
         states_.applyLoop(pid, Edge::setTier(TierId(0)));
         emit({.kind = PoolEvent::Kind::Migrated, .pid = pid, .src = src, .dst = TierId(0)});
         moved++;
      } else {
         ds.committed.fetch_sub(1);
      }
      if (pid != trigger)
         unlockExclusive(pid, false);
   }
   ss.committed.fetch_sub(moved);
   counters_->add(Counters::Promotions, moved);
   return moved;
}

//---------------------------------------------------------------------------
// explicit batch operations

u64 BufferPool::evictBatch(TierId src, std::optional<TierId> dst, Rng& rng) {
   if (src.index >= memoryTiers())
      throw RequestError("tier " + std::to_string(src.index) + " is not a memory tier");
   if (dst && (dst->index <= src.index || dst->index >= memoryTiers()))
      throw RequestError("eviction target must be a slower memory tier or disk");
   TierState& ts = *tiers_[src.index];
   std::lock_guard guard(ts.evictLatch);
   u64 want = std::min<u64>(config_.policy.evictBatch, ts.committed.load());
   if (want == 0)
      return 0;
   return evictFrom(src, dst, want, false, rng);
}

u64 BufferPool::evictBatch(TierId src, Rng& rng) {
   if (src.index >= memoryTiers())
      throw RequestError("tier " + std::to_string(src.index) + " is not a memory tier");
   return evictBatch(src, chooseEvictTarget(src, rng), rng);
}

u64 BufferPool::promoteBatch(PageId trigger, Rng& rng) {
   checkPid(trigger);
   for (u32 attempt = 0; attempt < kPromoteSharedPatience; attempt++) {
      StateWord w = states_.load(trigger);
      LockKind k = StateLayout::lockOf(w).kind();
      TierId t = layout().tierOf(w);
      if (k == LockKind::Evicted || t.index == 0)
         return 0;
      if ((k == LockKind::Unlocked || k == LockKind::Marked) && states_.apply(trigger, w, Edge::lockExclusive())) {
         u64 moved = promoteLocked(trigger, t, rng);
         unlockExclusive(trigger, false);
         return moved;
      }
      std::this_thread::yield();
   }
   return 0;
}

std::optional<StateWord> BufferPool::lockForMaintenance(PageId pid) {
   Backoff backoff;
   while (true) {
      StateWord w = states_.load(pid);
      if (StateLayout::lockOf(w).kind() == LockKind::Evicted)
         return std::nullopt;
      if (auto nw = states_.apply(pid, w, Edge::lockExclusive()))
         return nw;
      backoff.pause();
   }
}

void BufferPool::flushAll() {
   for (u32 t = 0; t < memoryTiers(); t++) {
      for (PageId pid : tiers_[t]->resident.snapshot()) {
         if (!lockForMaintenance(pid))
            continue;
         if (dirty_[pid.slot].load()) {
            u64 t0 = nowNs();
            backend_.flushPage(pid);
            counters_->add(Counters::DiskWrites);
            counters_->add(Counters::TimeDisk, nowNs() - t0);
            dirty_[pid.slot].store(0);
         }
         unlockExclusive(pid, false);
      }
   }
}

void BufferPool::evictAllToDisk() {
   for (u32 t = 0; t < memoryTiers(); t++) {
      TierState& ts = *tiers_[t];
      std::lock_guard guard(ts.evictLatch);
      for (PageId pid : ts.resident.snapshot()) {
         auto w = lockForMaintenance(pid);
         if (!w)
            continue;
         if (layout().tierOf(*w) != TierId(t)) {
            unlockExclusive(pid, false);
            continue;
         }
         evictToDisk(pid, TierId(t));
         ts.committed.fetch_sub(1);
         counters_->add(Counters::EvictionsToDisk);
      }
   }
}

//---------------------------------------------------------------------------

PoolStats BufferPool::stats() const {
   const Counters& c = *counters_;
   PoolStats s;
   s.hits.resize(memoryTiers());
   for (u32 t = 0; t < memoryTiers(); t++)
      s.hits[t] = c.sum(Counters::kFixed + t);
   s.faults = c.sum(Counters::Faults);
   s.fixes = c.sum(Counters::Fixes);
   s.optimisticReads = c.sum(Counters::OptReads);
   s.optimisticRetries = c.sum(Counters::OptRetries);
   s.allocations = c.sum(Counters::Allocations);
   s.promotions = c.sum(Counters::Promotions);
   s.demotions = c.sum(Counters::Demotions);
   s.evictionsToDisk = c.sum(Counters::EvictionsToDisk);
   s.diskReads = c.sum(Counters::DiskReads);
   s.diskWrites = c.sum(Counters::DiskWrites);
   s.migrationCalls = c.sum(Counters::MigrationCalls);
   s.pagesMigrated = c.sum(Counters::PagesMigrated);
   s.shootdowns = c.sum(Counters::Shootdowns);
   s.thresholdEvictions = c.sum(Counters::ThresholdEvictions);
   s.timeDiskNs = c.sum(Counters::TimeDisk);
   s.timeMigrationNs = c.sum(Counters::TimeMigration);
   return s;
}

std::vector<std::string> BufferPool::checkCoherence() const {
   std::vector<std::string> errs;
   auto pidStr = [](PageId p) { return "page " + std::to_string(p.slot); };
   std::unordered_map<u64, u32> membership;

   for (u32 t = 0; t < memoryTiers(); t++) {
      const TierState& ts = *tiers_[t];
      auto members = ts.resident.snapshot();
      std::string tier = "tier " + std::to_string(t);
      if (members.size() != ts.resident.size())
         errs.push_back(tier + ": resident size counter " + std::to_string(ts.resident.size()) + " != " +
                        std::to_string(members.size()) + " entries");
      if (ts.committed.load() != members.size())
         errs.push_back(tier + ": committed frames " + std::to_string(ts.committed.load()) + " != resident " +
                        std::to_string(members.size()));
      if (backend_.occupancy(TierId(t)) != members.size())
         errs.push_back(tier + ": backend occupancy " + std::to_string(backend_.occupancy(TierId(t))) +
                        " != resident " + std::to_string(members.size()));
      if (members.size() > ts.capacity)
         errs.push_back(tier + ": over capacity");
      for (PageId pid : members) {
         if (membership.count(pid.slot))
            errs.push_back(pidStr(pid) + " is in two resident sets");
         membership[pid.slot] = t;
      }
   }

   for (u64 i = 0; i < pageCount(); i++) {
      PageId pid(i);
      StateWord w = states_.load(pid);
      LockKind k = StateLayout::lockOf(w).kind();
      Placement p = backend_.placementOf(pid);
      auto it = membership.find(i);
      if (k == LockKind::Locked || k == LockKind::Shared) {
         errs.push_back(pidStr(pid) + " is locked at a quiescent point");
         continue;
      }
      if (k == LockKind::Evicted) {
         if (!p.onDisk)
            errs.push_back(pidStr(pid) + " is evicted but holds a frame");
         if (it != membership.end())
            errs.push_back(pidStr(pid) + " is evicted but listed in tier " + std::to_string(it->second));
         continue;
      }
      if (it == membership.end()) {
         errs.push_back(pidStr(pid) + " is cached but in no resident set");
         continue;
      }
      TierId t = layout().tierOf(w);
      if (t.index != it->second)
         errs.push_back(pidStr(pid) + " tier bits " + std::to_string(t.index) + " but resident in tier " +
                        std::to_string(it->second));
      if (p.onDisk || p.tier != TierId(it->second))
         errs.push_back(pidStr(pid) + " placement disagrees with its resident set");
   }
   return errs;
}

} // namespace vmcachen
