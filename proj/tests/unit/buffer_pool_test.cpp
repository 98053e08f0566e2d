#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <thread>

#include "pool_fixtures.hpp"
#include "vmcachen/buffer_pool.hpp"

using namespace vmcachen;
using namespace vmcachen::testing;

namespace {

LockState lockOf(BufferPool& p, u64 pid) {
   return StateLayout::lockOf(p.stateOf(PageId(pid)));
}

u64 versionOf(BufferPool& p, u64 pid) {
   return p.layout().versionOf(p.stateOf(PageId(pid)));
}

void touch(BufferPool& p, u64 pid, Rng& rng) {
   PageHandle h = p.fix(PageId(pid), AccessMode::Shared, rng);
}

} // namespace

TEST(BufferPoolTest, FreshStatsAreZero) {
   BufferPool pool(smallConfig(8, 16, 64));
   PoolStats s = pool.stats();
   EXPECT_EQ(s.hits, std::vector<u64>({0, 0}));
   EXPECT_EQ(s.faults + s.fixes + s.promotions + s.demotions + s.evictionsToDisk + s.diskReads + s.diskWrites +
                s.migrationCalls + s.shootdowns + s.timeDiskNs + s.timeMigrationNs,
             0u);
   EXPECT_TRUE(pool.checkCoherence().empty());
}

TEST(BufferPoolTest, PolicyValidation) {
   auto c = smallConfig(8, 16, 64);
   c.policy.rr = 1.5;
   EXPECT_THROW(BufferPool{c}, ConfigError);
   c = smallConfig(8, 16, 64);
   c.policy.evictBatch = 0;
   EXPECT_THROW(BufferPool{c}, ConfigError);
}

TEST(BufferPoolTest, FaultReadsDiskBytesIntoDram) {
   BufferPool pool(smallConfig(8, 16, 64));
   Rng rng(1);
   {
      PageHandle h = pool.fixNew(PageId(5), rng);
      writeU64(h.mutableBytes(), 0xabcdef);
   }
   pool.evictAllToDisk();
   EXPECT_EQ(lockOf(pool, 5), LockState::evicted());
   EXPECT_EQ(readU64(pool.backend().diskBytes(PageId(5))), 0xabcdefu);

   PageHandle h = pool.fix(PageId(5), AccessMode::Exclusive, rng);
   EXPECT_EQ(lockOf(pool, 5), LockState::locked());
   EXPECT_EQ(pool.backend().placementOf(PageId(5)).tier, TierId(0));
   EXPECT_EQ(readU64(h.bytes()), 0xabcdefu);
   EXPECT_EQ(pool.stats().faults, 1u);
}

TEST(BufferPoolTest, SharedCountsAndUnfix) {
   BufferPool pool(smallConfig(8, 16, 64));
   Rng rng(1);
   touch(pool, 2, rng);
   PageHandle a = pool.fix(PageId(2), AccessMode::Shared, rng);
   EXPECT_EQ(lockOf(pool, 2), LockState::shared(1));
   PageHandle b = pool.fix(PageId(2), AccessMode::Shared, rng);
   EXPECT_EQ(lockOf(pool, 2), LockState::shared(2));
   pool.unfix(b);
   EXPECT_EQ(lockOf(pool, 2), LockState::shared(1));
   pool.unfix(a);
   EXPECT_EQ(lockOf(pool, 2), LockState::unlocked());
   EXPECT_THROW(pool.unfix(a), IllegalStateError);
}

TEST(BufferPoolTest, DirtyUnfixBumpsVersion) {
   BufferPool pool(smallConfig(8, 16, 64));
   Rng rng(1);
   touch(pool, 1, rng);
   u64 v0 = versionOf(pool, 1);
   {
      PageHandle h = pool.fix(PageId(1), AccessMode::Exclusive, rng);
   }
   EXPECT_EQ(versionOf(pool, 1), v0);
   {
      PageHandle h = pool.fix(PageId(1), AccessMode::Exclusive, rng);
      h.mutableBytes()[0] = std::byte{1};
   }
   EXPECT_EQ(versionOf(pool, 1), v0 + 1);
   EXPECT_TRUE(pool.isDirty(PageId(1)));
   PageHandle s = pool.fix(PageId(1), AccessMode::Shared, rng);
   EXPECT_THROW(s.mutableBytes(), IllegalStateError);
}

TEST(BufferPoolTest, ConcurrentFaultOfOnePageDoesOneRead) {
   for (int trial = 0; trial < 20; trial++) {
      BufferPool pool(smallConfig(8, 16, 64));
      std::vector<u64> seen(4);
      std::vector<std::thread> threads;
      for (int t = 0; t < 4; t++)
         threads.emplace_back([&, t] {
            Rng rng(t);
            PageHandle h = pool.fix(PageId(9), AccessMode::Shared, rng);
            seen[t] = readU64(h.bytes());
         });
      for (auto& th : threads)
         th.join();
      EXPECT_EQ(pool.stats().diskReads, 1u);
      EXPECT_EQ(pool.stats().faults, 1u);
      EXPECT_EQ(pool.stats().totalHits(), 3u);
      EXPECT_EQ(std::count(seen.begin(), seen.end(), seen[0]), 4);
   }
}

TEST(BufferPoolTest, DiskReadPlacementFollowsDr) {
   auto c = smallConfig(8, 64, 128);
   c.policy.dr = 0.0;
   c.policy.rr = 0.0;
   BufferPool pool(c);
   Rng rng(3);
   for (u64 i = 0; i < 10; i++)
      touch(pool, i, rng);
   EXPECT_EQ(pool.residentSet(TierId(1)).size(), 10u);
   EXPECT_EQ(pool.residentSet(TierId(0)).size(), 0u);
}

TEST(BufferPoolTest, PromotionExtremes) {
   for (double rr : {0.0, 1.0}) {
      auto c = smallConfig(16, 64, 128);
      c.policy.dr = 0.0;
      c.policy.rr = rr;
      BufferPool pool(c);
      Rng rng(4);
      for (u64 i = 0; i < 6; i++) {
         PageHandle h = pool.fix(PageId(i), AccessMode::Exclusive, rng);
      }
      PoolStats before = pool.stats();
      for (u64 i = 0; i < 6; i++)
         touch(pool, i, rng);
      PoolStats d = pool.stats() - before;
      if (rr == 0.0) {
         EXPECT_EQ(d.promotions, 0u);
         EXPECT_EQ(d.hits[1], 6u);
      } else {
         EXPECT_GT(d.promotions, 0u);
         EXPECT_EQ(d.hits[0], 6u);
         EXPECT_EQ(pool.residentSet(TierId(1)).size(), 0u);
      }
   }
}

TEST(BufferPoolTest, PromoteBatchBundlesNeighbours) {
   auto c = smallConfig(64, 64, 128);
   c.policy.dr = 0.0;
   c.policy.rr = 0.0;
   c.policy.promoteBatch = 8;
   BufferPool pool(c);
   Rng rng(5);
   for (u64 i = 0; i < 8; i++)
      touch(pool, i, rng);
   PoolStats before = pool.stats();
   EXPECT_EQ(pool.promoteBatch(PageId(3), rng), 8u);
   PoolStats d = pool.stats() - before;
   EXPECT_EQ(d.migrationCalls, 1u);
   EXPECT_EQ(d.promotions, 8u);
   EXPECT_EQ(pool.residentSet(TierId(0)).size(), 8u);
   EXPECT_TRUE(pool.checkCoherence().empty());
}

TEST(BufferPoolTest, ThresholdEvictionBringsOccupancyBelowLimit) {
   auto c = smallConfig(20, 64, 256);
   c.policy.utilizationThreshold = 1.0;  // fill to 100%
   BufferPool pool(c);
   EventLog log;
   pool.setObserver(&log);
   Rng rng(6);
   for (u64 i = 0; i < 20; i++)
      touch(pool, i, rng);
   EXPECT_EQ(pool.occupancy(TierId(0)), 20u);
   // a pool with the default threshold sees the same full tier
   auto c2 = smallConfig(20, 64, 256);
   BufferPool pool2(c2);
   pool2.setObserver(&log);
   for (u64 i = 0; i < 40; i++)
      touch(pool2, i, rng);
   u64 triggered = 0;
   for (const PoolEvent& e : log.take()) {
      if (e.kind == PoolEvent::Kind::EvictBatch && e.thresholdTriggered) {
         triggered++;
         EXPECT_TRUE(thresholdHolds(e));
         EXPECT_LT(static_cast<double>(e.occupancyBefore - e.moved), 0.95 * 20);
      }
   }
   EXPECT_GT(triggered, 0u);
   EXPECT_EQ(pool2.thresholdLimit(TierId(0)), 18u);
   EXPECT_TRUE(pool2.checkCoherence().empty());
}

TEST(BufferPoolTest, AllSharedPagesCannotBeEvicted) {
   BufferPool pool(smallConfig(8, 16, 64));
   Rng rng(7);
   std::vector<PageHandle> held;
   for (u64 i = 0; i < 6; i++)
      held.push_back(pool.fix(PageId(i), AccessMode::Shared, rng));
   EXPECT_EQ(pool.evictBatch(TierId(0), std::nullopt, rng), 0u);
   EXPECT_EQ(pool.evictBatch(TierId(0), TierId(1), rng), 0u);
   held.clear();
   EXPECT_TRUE(pool.checkCoherence().empty());
}

TEST(BufferPoolTest, BatchOf512IsOneMigrationCallAndOneShootdown) {
   auto c = smallConfig(600, 1200, 2000);
   c.policy.evictBatch = 512;
   c.policy.maxBatchedMigration = 1024;
   c.policy.utilizationThreshold = 1.0;
   BufferPool pool(c);
   Rng rng(8);
   for (u64 i = 0; i < 600; i++)
      touch(pool, i, rng);
   PoolStats before = pool.stats();
   EXPECT_EQ(pool.evictBatch(TierId(0), TierId(1), rng), 512u);
   PoolStats d = pool.stats() - before;
   EXPECT_EQ(d.migrationCalls, 1u);
   EXPECT_EQ(d.shootdowns, 1u);
   EXPECT_EQ(d.demotions, 512u);
   EXPECT_EQ(pool.occupancy(TierId(0)), 88u);
   EXPECT_EQ(pool.occupancy(TierId(1)), 512u);
   EXPECT_TRUE(pool.checkCoherence().empty());
}

TEST(BufferPoolTest, MbindEngineShootsDownPerPage) {
   auto c = smallConfig(64, 128, 256);
   c.engine = MigrationEngineKind::Mbind;
   c.policy.evictBatch = 32;
   c.policy.utilizationThreshold = 1.0;
   BufferPool pool(c);
   Rng rng(8);
   for (u64 i = 0; i < 64; i++)
      touch(pool, i, rng);
   PoolStats before = pool.stats();
   EXPECT_EQ(pool.evictBatch(TierId(0), TierId(1), rng), 32u);
   EXPECT_EQ((pool.stats() - before).shootdowns, 32u);
}

TEST(BufferPoolTest, EvictionToDiskWritesBackOnlyDirtyPages) {
   auto c = smallConfig(16, 16, 64);
   c.policy.evictBatch = 16;
   BufferPool pool(c);
   Rng rng(9);
   for (u64 i = 0; i < 8; i++) {
      PageHandle h = pool.fix(PageId(i), AccessMode::Exclusive, rng);
      if (i % 2)
         writeU64(h.mutableBytes(), 100 + i);
   }
   PoolStats before = pool.stats();
   EXPECT_EQ(pool.evictBatch(TierId(0), std::nullopt, rng), 8u);
   PoolStats d = pool.stats() - before;
   EXPECT_EQ(d.diskWrites, 4u);
   EXPECT_EQ(d.evictionsToDisk, 8u);
   for (u64 i = 1; i < 8; i += 2)
      EXPECT_EQ(readU64(pool.backend().diskBytes(PageId(i))), 100 + i);
   EXPECT_TRUE(pool.checkCoherence().empty());
}

TEST(BufferPoolTest, DwZeroPrefersCleanPagesFromRemoteTier) {
   auto c = smallConfig(16, 16, 64);
   c.policy.dr = 0.0;
   c.policy.rr = 0.0;
   c.policy.dw = 0.0;
   c.policy.evictBatch = 4;
   BufferPool pool(c);
   Rng rng(10);
   for (u64 i = 0; i < 8; i++) {
      PageHandle h = pool.fix(PageId(i), AccessMode::Exclusive, rng);
      if (i < 4)
         h.markDirty();
   }
   EXPECT_EQ(pool.evictBatch(TierId(1), std::nullopt, rng), 4u);
   for (u64 i = 0; i < 4; i++)
      EXPECT_NE(lockOf(pool, i), LockState::evicted()) << i;
   for (u64 i = 4; i < 8; i++)
      EXPECT_EQ(lockOf(pool, i), LockState::evicted()) << i;
   // only dirty pages left: forced after half the sweep budget
   EXPECT_EQ(pool.evictBatch(TierId(1), std::nullopt, rng), 4u);
   EXPECT_EQ(pool.stats().diskWrites, 4u);
}

TEST(BufferPoolTest, SharedFixClearsMark) {
   auto c = smallConfig(16, 16, 64);
   c.policy.dr = 0.0;
   c.policy.rr = 0.0;
   c.policy.dw = 0.0;
   c.policy.evictBatch = 3;
   BufferPool pool(c);
   Rng rng(11);
   for (u64 i = 0; i < 4; i++) {
      PageHandle h = pool.fix(PageId(i), AccessMode::Exclusive, rng);
      if (i == 0)
         h.markDirty();
   }
   // the scan marks all four pages and takes the three clean ones
   EXPECT_EQ(pool.evictBatch(TierId(1), std::nullopt, rng), 3u);
   ASSERT_EQ(lockOf(pool, 0), LockState::marked());
   u64 v = versionOf(pool, 0);
   touch(pool, 0, rng);
   EXPECT_EQ(lockOf(pool, 0), LockState::unlocked());
   EXPECT_EQ(versionOf(pool, 0), v);
   EXPECT_EQ(pool.stats().hits[1], 1u);
}

TEST(BufferPoolTest, OptimisticReadWithoutWriterTakesOneAttempt) {
   BufferPool pool(smallConfig(8, 16, 64));
   Rng rng(12);
   {
      PageHandle h = pool.fix(PageId(3), AccessMode::Exclusive, rng);
      writeU64(h.mutableBytes(), 42);
   }
   u64 v = pool.optimisticRead(PageId(3), [](std::span<const std::byte> b) { return readU64(b); }, rng);
   EXPECT_EQ(v, 42u);
   EXPECT_EQ(pool.stats().optimisticReads, 1u);
   EXPECT_EQ(pool.stats().optimisticRetries, 0u);
}

TEST(BufferPoolTest, OptimisticReadOfEvictedPageFallsBack) {
   BufferPool pool(smallConfig(8, 16, 64));
   Rng rng(12);
   u64 v = pool.optimisticRead(PageId(3), [](std::span<const std::byte> b) { return readU64(b); }, rng);
   EXPECT_EQ(v, 0u);
   EXPECT_EQ(pool.stats().faults, 1u);
   EXPECT_EQ(pool.stats().fixes, 1u);
   EXPECT_EQ(lockOf(pool, 3), LockState::unlocked());
}

TEST(BufferPoolTest, OptimisticReadRetriesWhenPageMovesMidRead) {
   auto c = smallConfig(8, 16, 64);
   c.policy.evictBatch = 8;
   c.policy.rr = 0.0;
   BufferPool pool(c);
   Rng rng(13);
   {
      PageHandle h = pool.fix(PageId(1), AccessMode::Exclusive, rng);
      writeU64(h.mutableBytes(), 777);
   }
   bool moved = false;
   u64 v = pool.optimisticRead(
      PageId(1),
      [&](std::span<const std::byte> b) {
         u64 x = readU64(b);
         if (!moved) {
            moved = true;
            Rng inner(1);
            while (pool.evictBatch(TierId(0), TierId(1), inner) == 0) {
            }
         }
         return x;
      },
      rng);
   EXPECT_EQ(v, 777u);
   EXPECT_EQ(pool.backend().placementOf(PageId(1)).tier, TierId(1));
   EXPECT_EQ(pool.stats().optimisticRetries, 1u);
}

TEST(BufferPoolTest, FlushAllThenReopenFileBackedDisk) {
   auto path = std::filesystem::temp_directory_path() / "vmcachen_pool_flush_test.bin";
   std::filesystem::remove(path);
   {
      auto c = smallConfig(8, 16, 64);
      c.diskPath = path.string();
      BufferPool pool(c);
      Rng rng(14);
      for (u64 i = 0; i < 20; i++) {
         PageHandle h = pool.fix(PageId(i), AccessMode::Exclusive, rng);
         writeU64(h.mutableBytes(), i * i + 1);
      }
      pool.flushAll();
      for (u64 t = 0; t < 2; t++)
         for (PageId p : pool.residentSet(TierId(static_cast<u32>(t))).snapshot())
            EXPECT_FALSE(pool.isDirty(p));
   }
   {
      auto c = smallConfig(8, 16, 64);
      c.diskPath = path.string();
      BufferPool pool(c);
      Rng rng(15);
      for (u64 i = 0; i < 20; i++) {
         PageHandle h = pool.fix(PageId(i), AccessMode::Shared, rng);
         EXPECT_EQ(readU64(h.bytes()), i * i + 1) << i;
      }
   }
   std::filesystem::remove(path);
}

TEST(BufferPoolTest, AccountingIdentityUnderRandomOps) {
   for (u64 seed = 0; seed < 10; seed++) {
      auto c = smallConfig(8, 16, 64);
      c.policy.dr = 0.5;
      c.policy.rr = 0.5;
      c.policy.rw = 0.5;
      BufferPool pool(c);
      Rng rng(seed);
      std::mt19937_64 gen(seed);
      for (int op = 0; op < 5000; op++) {
         PageId pid(gen() % 64);
         switch (gen() % 3) {
            case 0: {
               PageHandle h = pool.fix(pid, AccessMode::Shared, rng);
               break;
            }
            case 1: {
               PageHandle h = pool.fix(pid, AccessMode::Exclusive, rng);
               h.markDirty();
               break;
            }
            default:
               pool.optimisticRead(pid, [](std::span<const std::byte> b) { return readU64(b); }, rng);
         }
         PoolStats s = pool.stats();
         ASSERT_EQ(s.totalHits() + s.faults, s.accesses());
      }
      EXPECT_TRUE(pool.checkCoherence().empty());
   }
}

TEST(BufferPoolTest, NoLostUpdatesUnderForcedMigrations) {
   auto c = smallConfig(8, 16, 32);
   c.policy.rr = 0.5;
   c.policy.rw = 0.7;
   BufferPool pool(c);
   constexpr int kThreads = 4;
   constexpr int kIncrements = 2000;
   std::atomic<bool> stop{false};
   std::thread mover([&] {
      Rng rng(99);
      while (!stop) {
         pool.evictBatch(TierId(0), rng);
         pool.promoteBatch(PageId(rng.below(16)), rng);
         std::this_thread::yield();
      }
   });
   std::vector<std::thread> threads;
   for (int t = 0; t < kThreads; t++)
      threads.emplace_back([&, t] {
         Rng rng(t);
         for (int i = 0; i < kIncrements; i++) {
            PageHandle h = pool.fix(PageId(rng.below(16)), AccessMode::Exclusive, rng);
            auto b = h.mutableBytes();
            writeU64(b, readU64(b) + 1);
         }
      });
   for (auto& th : threads)
      th.join();
   stop = true;
   mover.join();
   u64 sum = 0;
   Rng rng(1);
   for (u64 i = 0; i < 16; i++)
      sum += pool.optimisticRead(PageId(i), [](std::span<const std::byte> b) { return readU64(b); }, rng);
   EXPECT_EQ(sum, u64(kThreads) * kIncrements);
   EXPECT_TRUE(pool.checkCoherence().empty());
}

// Sequential reference model replaying the pool's own decisions (reported
// through the observer): each residency event must be legal in the model, and
// afterwards the model's placements and page contents must equal the pool's.
TEST(BufferPoolTest, ModelBasedPlacementCheck) {
   constexpr u64 kSlots = 64;
   for (u64 seed = 0; seed < 6; seed++) {
      auto c = smallConfig(6, 12, kSlots);
      c.policy.dr = 0.7;
      c.policy.rw = 0.7;
      c.policy.rr = 0.5;
      c.policy.dw = 0.5;
      c.policy.evictBatch = 3;
      c.policy.promoteBatch = 4;
      BufferPool pool(c);
      EventLog log;
      pool.setObserver(&log);
      Rng rng(seed);
      std::mt19937_64 gen(seed * 7 + 1);

      std::vector<std::optional<u32>> placement(kSlots);  // nullopt = disk
      std::vector<u64> value(kSlots, 0);
      const u64 cap[2] = {6, 12};

      for (int op = 0; op < 20000; op++) {
         PageId pid(gen() % kSlots);
         std::optional<u64> observed;
         switch (gen() % 6) {
            case 0: {
               PageHandle h = pool.fix(pid, AccessMode::Shared, rng);
               observed = readU64(h.bytes());
               break;
            }
            case 1: {
               PageHandle h = pool.fix(pid, AccessMode::Exclusive, rng);
               value[pid.slot] = gen();
               writeU64(h.mutableBytes(), value[pid.slot]);
               break;
            }
            case 2:
               observed = pool.optimisticRead(pid, [](std::span<const std::byte> b) { return readU64(b); }, rng);
               break;
            case 3:
               pool.evictBatch(TierId(static_cast<u32>(gen() % 2)), rng);
               break;
            case 4:
               pool.promoteBatch(pid, rng);
               break;
            default:
               pool.evictBatch(TierId(0), TierId(1), rng);
         }
         if (observed)
            ASSERT_EQ(*observed, value[pid.slot]) << "seed " << seed << " op " << op;

         for (const PoolEvent& e : log.take()) {
            switch (e.kind) {
               case PoolEvent::Kind::Fault:
                  ASSERT_FALSE(placement[e.pid.slot]) << "fault of a cached page";
                  placement[e.pid.slot] = e.dst.index;
                  break;
               case PoolEvent::Kind::Migrated:
                  ASSERT_EQ(placement[e.pid.slot], std::optional<u32>(e.src.index));
                  placement[e.pid.slot] = e.dst.index;
                  break;
               case PoolEvent::Kind::Evicted:
                  ASSERT_EQ(placement[e.pid.slot], std::optional<u32>(e.src.index));
                  placement[e.pid.slot].reset();
                  break;
               case PoolEvent::Kind::EvictBatch:
                  ASSERT_TRUE(thresholdHolds(e));
                  break;
            }
         }

         u64 inTier[2] = {0, 0};
         for (u64 i = 0; i < kSlots; i++) {
            Placement p = pool.backend().placementOf(PageId(i));
            ASSERT_EQ(p.onDisk, !placement[i]) << "page " << i << " op " << op;
            if (placement[i]) {
               ASSERT_EQ(p.tier.index, *placement[i]);
               inTier[*placement[i]]++;
            }
         }
         ASSERT_LE(inTier[0], cap[0]);
         ASSERT_LE(inTier[1], cap[1]);
         if (op % 100 == 0)
            ASSERT_TRUE(pool.checkCoherence().empty());
      }
   }
}
