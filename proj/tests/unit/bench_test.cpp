#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "vmcachen/bench/runner.hpp"
#include "vmcachen/bench/workload.hpp"

using namespace vmcachen;
using namespace vmcachen::bench;

namespace {

BenchConfig small() {
   BenchConfig c;
   c.pageSize = 4096;
   c.localPages = 64;
   c.remotePages = 128;
   c.datasetPages = 512;
   c.ops = 3000;
   c.reportEveryOps = 1000;
   c.costModel = false;
   c.policy.evictBatch = 16;
   c.policy.promoteBatch = 8;
   c.policy.maxBatchedMigration = 32;
   return c;
}

} // namespace

TEST(BenchConfigTest, ParseSize) {
   EXPECT_EQ(parseSize("4096", 4096), 4096u);
   EXPECT_EQ(parseSize("64M", 4096), 16384u);
   EXPECT_EQ(parseSize("1G", 4096), 262144u);
   EXPECT_EQ(parseSize("512k", 4096), 128u);
   EXPECT_EQ(parseSize("1M", 1024), 1024u);
   EXPECT_EQ(parseSize("0", 4096), 0u);
   EXPECT_THROW(parseSize("", 4096), ConfigError);
   EXPECT_THROW(parseSize("12X", 4096), ConfigError);
   EXPECT_THROW(parseSize("-3", 4096), ConfigError);
   EXPECT_THROW(parseSize("1.5", 4096), ConfigError);
   EXPECT_THROW(parseSize("abc", 4096), ConfigError);
}

TEST(BenchConfigTest, ParseTiers) {
   BenchConfig c;
   parseTiers("64M:128M", c);
   EXPECT_EQ(c.localPages, 16384u);
   EXPECT_EQ(c.remotePages, 32768u);
   EXPECT_EQ(c.diskPages, 0u);
   parseTiers("10:0:5000", c);
   EXPECT_EQ(c.localPages, 10u);
   EXPECT_EQ(c.remotePages, 0u);
   EXPECT_EQ(c.diskPages, 5000u);
   EXPECT_THROW(parseTiers("64M", c), ConfigError);
   EXPECT_THROW(parseTiers("1:2:3:4", c), ConfigError);
}

TEST(BenchConfigTest, ValidationMessages) {
   auto expectError = [](BenchConfig c) { EXPECT_THROW(c.validate(), ConfigError); };
   BenchConfig ok = small();
   EXPECT_NO_THROW(ok.validate());
   auto c = ok;
   c.diskPages = 600;  // dataset 512 needs 768
   expectError(c);
   c = ok;
   c.threads = 0;
   expectError(c);
   c = ok;
   c.pageSize = 1000;
   expectError(c);
   c = ok;
   c.localPages = 0;
   expectError(c);
   c = ok;
   c.policy.rr = 1.5;
   expectError(c);
   c = ok;
   c.ops = 0;
   expectError(c);
   EXPECT_THROW(parseEngine("numa"), ConfigError);
   EXPECT_THROW(parseWorkload("tpcc"), ConfigError);
   EXPECT_EQ(parseEngine("MBIND"), MigrationEngineKind::Mbind);
   EXPECT_EQ(parseWorkload("MixedTxn"), WorkloadKind::MixedTxn);
   EXPECT_EQ(parseMode("synclight"), MigrationMode::SyncLight);
}

TEST(BenchWorkloadTest, KeysSortLikeNumbers) {
   std::mt19937_64 gen(1);
   for (int i = 0; i < 10000; i++) {
      u64 a = gen(), b = gen() >> (gen() % 64);
      EXPECT_EQ(decodeKey(encodeKey(a)), a);
      EXPECT_EQ(encodeKey(a) < encodeKey(b), a < b);
   }
   std::string v = makeValue(7, 41);
   EXPECT_EQ(v.size(), kValueSize);
   EXPECT_EQ(valueCounter(v), 41u);
}

// Empirical frequencies of the hottest ranks against 1/(i+1)^theta / zeta(n).
TEST(BenchWorkloadTest, ZipfMatchesReferenceMass) {
   for (double theta : {0.5, 0.8, 0.99}) {
      const u64 n = 1000;
      ZipfGenerator z(n, theta);
      double zetaN = 0;
      for (u64 i = 1; i <= n; i++)
         zetaN += std::pow(static_cast<double>(i), -theta);
      std::mt19937_64 gen(5);
      std::uniform_real_distribution<double> u(0, 1);
      const int draws = 400000;
      std::map<u64, int> freq;
      for (int i = 0; i < draws; i++) {
         u64 r = z.draw(u(gen));
         ASSERT_LT(r, n);
         freq[r]++;
      }
      for (u64 rank : {0, 1}) {
         double expect = std::pow(static_cast<double>(rank + 1), -theta) / zetaN;
         EXPECT_NEAR(z.probability(rank), expect, 1e-12);
         EXPECT_NEAR(freq[rank] / double(draws), expect, 0.01) << "theta=" << theta << " rank=" << rank;
      }
      // tail: the generator approximates ranks >= 2; check coarse decile mass
      int hot = 0;
      double hotExpect = 0;
      for (u64 i = 0; i < n / 10; i++) {
         hot += freq[i];
         hotExpect += std::pow(static_cast<double>(i + 1), -theta) / zetaN;
      }
      EXPECT_NEAR(hot / double(draws), hotExpect, 0.03) << "theta=" << theta;
   }
   ZipfGenerator z(50, 0.8);
   for (double u = 0; u < 1; u += 0.001)
      ASSERT_LT(z.scrambled(u), 50u);
}

TEST(BenchRunTest, FullyCachedRunNeverReadsDisk) {
   BenchConfig c = small();
   c.localPages = 2048;
   c.remotePages = 0;
   c.datasetPages = 256;
   c.warmupOps = 8000;
   c.ops = 4000;
   RunReport r = run(c);
   ASSERT_FALSE(r.rows.empty());
   for (const Row& row : r.rows) {
      EXPECT_EQ(row.diskReads, 0u);
      EXPECT_EQ(row.tier1Hits, 0u);
   }
   EXPECT_EQ(r.total.faults, 0u);
   EXPECT_EQ(r.totalOps, 4000u);
}

TEST(BenchRunTest, PercentagesSumToHundredAndAccountingHolds) {
   for (WorkloadKind w : {WorkloadKind::RandomRead, WorkloadKind::MixedTxn}) {
      BenchConfig c = small();
      c.workload = w;
      c.costModel = true;
      c.diskLatencyNs = 5000;
      c.remoteLatencyNs = 200;
      c.shootdownNs = 500;
      c.ops = 4000;
      RunReport r = run(c);
      ASSERT_EQ(r.rows.size(), 4u);
      u64 ops = 0;
      for (const Row& row : r.rows) {
         EXPECT_NEAR(row.timeDiskPct + row.timeMigrationPct + row.timeOtherPct, 100.0, 0.5);
         EXPECT_GE(row.timeDiskPct, 0);
         EXPECT_GE(row.timeMigrationPct, 0);
         EXPECT_GE(row.timeOtherPct, 0);
         EXPECT_EQ(row.delta.totalHits() + row.delta.faults, row.delta.accesses());
         EXPECT_EQ(row.tier0Hits + row.tier1Hits + row.delta.faults, row.delta.accesses());
         ops += row.ops;
      }
      EXPECT_EQ(ops, r.totalOps);
      EXPECT_GT(r.total.diskReads, 0u);
      EXPECT_NEAR(r.timeDiskPct + r.timeMigrationPct + r.timeOtherPct, 100.0, 0.5);
   }
}

TEST(BenchRunTest, SingleThreadRunsAreDeterministic) {
   for (WorkloadKind w : {WorkloadKind::RandomRead, WorkloadKind::MixedTxn}) {
      BenchConfig c = small();
      c.workload = w;
      c.seed = 99;
      RunReport a = run(c);
      RunReport b = run(c);
      ASSERT_EQ(a.rows.size(), b.rows.size());
      for (std::size_t i = 0; i < a.rows.size(); i++) {
         const Row& x = a.rows[i];
         const Row& y = b.rows[i];
         EXPECT_EQ(x.ops, y.ops);
         EXPECT_EQ(x.tier0Hits, y.tier0Hits);
         EXPECT_EQ(x.tier1Hits, y.tier1Hits);
         EXPECT_EQ(x.diskReads, y.diskReads);
         EXPECT_EQ(x.diskWrites, y.diskWrites);
         EXPECT_EQ(x.migrations, y.migrations);
         EXPECT_EQ(x.shootdowns, y.shootdowns);
      }
      c.seed = 100;
      RunReport other = run(c);
      EXPECT_TRUE(other.total.hits != a.total.hits || other.total.diskReads != a.total.diskReads);
   }
}

TEST(BenchRunTest, MultiThreadedRunCompletes) {
   BenchConfig c = small();
   c.threads = 3;
   c.workload = WorkloadKind::MixedTxn;
   c.ops = 3000;
   RunReport r = run(c);
   EXPECT_EQ(r.totalOps, 3000u);
   u64 ops = 0;
   for (const Row& row : r.rows)
      ops += row.ops;
   EXPECT_EQ(ops, 3000u);
   EXPECT_EQ(r.total.totalHits() + r.total.faults, r.total.accesses());
}

TEST(BenchRunTest, CsvHasHeaderAndOneLinePerRow) {
   BenchConfig c = small();
   RunReport r = run(c);
   std::ostringstream out;
   writeCsv(r, out);
   std::istringstream in(out.str());
   std::string line;
   std::getline(in, line);
   EXPECT_EQ(line, kCsvHeader);
   std::size_t n = 0;
   while (std::getline(in, line)) {
      EXPECT_EQ(std::count(line.begin(), line.end(), ','), 10);
      n++;
   }
   EXPECT_EQ(n, r.rows.size());
}

TEST(BenchCompareTest, RefusesMismatchedWorkloads) {
   BenchConfig a = small();
   BenchConfig b = small();
   b.workload = WorkloadKind::MixedTxn;
   EXPECT_THROW(compare(a, b), ConfigError);
   b = small();
   b.seed = a.seed + 1;
   EXPECT_THROW(compare(a, b), ConfigError);
   b = small();
   b.datasetPages = 600;
   EXPECT_THROW(compare(a, b), ConfigError);
}

TEST(BenchCompareTest, IdenticalConfigsGiveUnitRatios) {
   BenchConfig c = small();
   Comparison cmp = compare(c, c);
   for (const auto& row : cmp.rows) {
      if (row.metric == "ops_per_s") {
         EXPECT_GT(row.ratio, 0.5);
         EXPECT_LT(row.ratio, 2.0);
      } else if (row.metric.find("pct") == std::string::npos && row.b != 0) {
         EXPECT_DOUBLE_EQ(row.ratio, 1.0) << row.metric;
      }
   }
   std::ostringstream out;
   writeComparison(cmp, out);
   EXPECT_EQ(out.str().rfind("metric,a,b,ratio\n", 0), 0u);
}

// Demotion batches of 1024 pages: shootdowns per batch are ceil(1024 / cap).
TEST(BenchCompareTest, BatchCapSweepStrictlyReducesShootdowns) {
   std::vector<u64> shootdowns;
   for (u32 cap : {128u, 512u, 1024u}) {
      BenchConfig c = small();
      c.pageSize = 1024;
      c.localPages = 2048;
      c.remotePages = 4096;
      c.datasetPages = 8192;
      c.ops = 12000;
      c.reportEveryOps = 12000;
      c.policy.evictBatch = 1024;
      c.policy.promoteBatch = 8;
      c.policy.maxBatchedMigration = cap;
      RunReport r = run(c);
      EXPECT_GT(r.total.pagesMigrated, 0u);
      shootdowns.push_back(r.total.shootdowns);
   }
   EXPECT_GT(shootdowns[0], shootdowns[1]);
   EXPECT_GT(shootdowns[1], shootdowns[2]);
}

TEST(BenchCompareTest, RemoteTierAbsorbsDiskReads) {
   BenchConfig three = small();
   three.warmupOps = 3000;
   three.ops = 4000;
   BenchConfig two = three;
   two.remotePages = 0;
   Comparison cmp = compare(three, two);
   EXPECT_GT(cmp.a.total.hits.at(1), 0u);
   EXPECT_LT(cmp.a.total.diskReads, cmp.b.total.diskReads);
}
