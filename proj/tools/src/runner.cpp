#include "vmcachen/bench/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <thread>

#include "vmcachen/bench/workload.hpp"
#include "vmcachen/btree.hpp"

namespace vmcachen::bench {

const char* const kCsvHeader =
   "elapsed_s,ops,tier0_hits,tier1_hits,disk_reads,disk_writes,migrations,shootdowns,time_disk_pct,"
   "time_migration_pct,time_other_pct";

namespace {

struct Driver {
   const BenchConfig& cfg;
   BTree& tree;
   u64 keys;
   ZipfGenerator zipf;

   Driver(const BenchConfig& c, BTree& t, u64 n)
      : cfg(c), tree(t), keys(n), zipf(c.workload == WorkloadKind::MixedTxn ? n : 1, c.zipfTheta) {}

   void op(Rng& rng) {
      if (cfg.workload == WorkloadKind::RandomRead) {
         u64 k = rng.below(keys);
         if (!tree.lookup(encodeKey(k), rng))
            throw Error("key " + std::to_string(k) + " missing from the tree");
         return;
      }
      u64 k = zipf.scrambled(rng.uniform());
      std::string key = encodeKey(k);
      if (rng.chance(cfg.readFraction)) {
         tree.lookup(key, rng);
         return;
      }
      auto v = tree.lookup(key, rng);
      u64 counter = v ? valueCounter(*v) : 0;
      tree.insert(key, makeValue(k, counter + 1), rng);
   }
};

u64 workerSeed(u64 seed, u32 i) {
   return mix64(seed ^ mix64(i + 1));
}

Row makeRow(const PoolStats& d, u64 ops, double elapsedS, double intervalS, u32 threads) {
   Row r;
   r.elapsedS = elapsedS;
   r.ops = ops;
   r.tier0Hits = d.hits.size() > 0 ? d.hits[0] : 0;
   r.tier1Hits = d.hits.size() > 1 ? d.hits[1] : 0;
   r.diskReads = d.diskReads;
   r.diskWrites = d.diskWrites;
   r.migrations = d.pagesMigrated;
   r.shootdowns = d.shootdowns;
   auto busy = static_cast<u64>(intervalS * 1e9 * threads);
   breakdown(d.timeDiskNs, d.timeMigrationNs, busy, r.timeDiskPct, r.timeMigrationPct, r.timeOtherPct);
   r.delta = d;
   return r;
}

double secondsSince(std::chrono::steady_clock::time_point t0) {
   return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Runs `ops` operations (or until `seconds` elapse) and cuts a row each
/// interval when `rows` is non-null.
void phase(const BenchConfig& cfg, Driver& drv, BufferPool& pool, std::vector<Rng>& rngs, std::optional<u64> ops,
           double seconds, std::vector<Row>* rows, u64& totalOps, double& wallS) {
   using Clock = std::chrono::steady_clock;
   const auto t0 = Clock::now();
   PoolStats last = pool.stats();
   u64 lastOps = 0;
   double lastT = 0;
   auto cut = [&](u64 opsNow, double tNow) {
      if (!rows)
         return;
      PoolStats now = pool.stats();
      rows->push_back(makeRow(now - last, opsNow - lastOps, tNow, tNow - lastT, cfg.threads));
      last = now;
      lastOps = opsNow;
      lastT = tNow;
   };

   if (cfg.threads == 1) {
      Rng& rng = rngs[0];
      u64 done = 0;
      double nextCut = cfg.reportEveryS;
      while (true) {
         if (ops && done >= *ops)
            break;
         if (!ops && (done & 63) == 0 && secondsSince(t0) >= seconds)
            break;
         drv.op(rng);
         done++;
         if (cfg.reportEveryOps) {
            if (done % *cfg.reportEveryOps == 0)
               cut(done, secondsSince(t0));
         } else if ((done & 15) == 0) {
            double t = secondsSince(t0);
            if (t >= nextCut) {
               cut(done, t);
               while (nextCut <= t)
                  nextCut += cfg.reportEveryS;
            }
         }
      }
      wallS = secondsSince(t0);
      if (done != lastOps || (rows && rows->empty()))
         cut(done, wallS);
      totalOps = done;
      return;
   }

   std::vector<std::atomic<u64>> counts(cfg.threads);
   std::atomic<bool> stop{false};
   std::atomic<u32> running{cfg.threads};
   std::vector<std::exception_ptr> errors(cfg.threads);
   std::vector<std::thread> workers;
   for (u32 i = 0; i < cfg.threads; i++)
      workers.emplace_back([&, i] {
         try {
            u64 quota = ops ? *ops / cfg.threads + (i < *ops % cfg.threads ? 1 : 0) : ~0ull;
            for (u64 n = 0; n < quota && !stop.load(std::memory_order_relaxed); n++) {
               drv.op(rngs[i]);
               counts[i].store(n + 1, std::memory_order_relaxed);
            }
         } catch (...) {
            errors[i] = std::current_exception();
            stop = true;
         }
         running--;
      });
   auto total = [&] {
      u64 s = 0;
      for (auto& c : counts)
         s += c.load(std::memory_order_relaxed);
      return s;
   };
   double nextCut = cfg.reportEveryS;
   u64 nextOpsCut = cfg.reportEveryOps ? *cfg.reportEveryOps : 0;
   while (running.load() > 0) {
      double t = secondsSince(t0);
      if (!ops && t >= seconds) {
         stop = true;
         break;
      }
      if (cfg.reportEveryOps) {
         u64 n = total();
         if (n >= nextOpsCut) {
            cut(n, t);
            while (nextOpsCut <= n)
               nextOpsCut += *cfg.reportEveryOps;
         }
         std::this_thread::yield();
      } else if (t >= nextCut) {
         cut(total(), t);
         while (nextCut <= t)
            nextCut += cfg.reportEveryS;
      } else {
         double wait = std::min(nextCut - t, 0.01);
         std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      }
   }
   for (auto& w : workers)
      w.join();
   for (auto& e : errors)
      if (e)
         std::rethrow_exception(e);
   wallS = secondsSince(t0);
   totalOps = total();
   if (totalOps != lastOps || (rows && rows->empty()))
      cut(totalOps, wallS);
}

} // namespace

void breakdown(u64 diskNs, u64 migrationNs, u64 busyNs, double& diskPct, double& migPct, double& otherPct) {
   double disk = static_cast<double>(diskNs);
   double mig = static_cast<double>(migrationNs);
   double other = std::max(0.0, static_cast<double>(busyNs) - disk - mig);
   double sum = disk + mig + other;
   if (sum <= 0) {
      diskPct = migPct = 0;
      otherPct = 100;
      return;
   }
   diskPct = 100.0 * disk / sum;
   migPct = 100.0 * mig / sum;
   otherPct = 100.0 - diskPct - migPct;
}

RunReport run(const BenchConfig& cfg) {
   cfg.validate();
   RunReport report;
   report.config = cfg;

   PoolConfig pc = cfg.poolConfig();
   BufferPool pool(pc);
   pool.cost().setEnabled(false);
   Rng loadRng(cfg.seed);
   BTree tree(pool, loadRng);

   const auto loadStart = std::chrono::steady_clock::now();
   const u64 keys = cfg.keyCount();
   std::vector<u64> order(keys);
   std::iota(order.begin(), order.end(), 0);
   std::shuffle(order.begin(), order.end(), loadRng.engine());
   for (u64 k : order)
      tree.insert(encodeKey(k), makeValue(k, 0), loadRng);
   pool.evictAllToDisk();
   report.keys = keys;
   report.treePages = tree.pagesAllocated();
   report.loadS = secondsSince(loadStart);

   pool.cost().setEnabled(cfg.costModel);
   Driver drv(cfg, tree, keys);
   std::vector<Rng> rngs;
   for (u32 i = 0; i < cfg.threads; i++)
      rngs.emplace_back(workerSeed(cfg.seed, i));

   u64 ignoredOps = 0;
   double ignoredS = 0;
   if (cfg.warmupOps)
      phase(cfg, drv, pool, rngs, cfg.warmupOps, 0, nullptr, ignoredOps, ignoredS);
   else if (cfg.warmupS > 0)
      phase(cfg, drv, pool, rngs, std::nullopt, cfg.warmupS, nullptr, ignoredOps, ignoredS);

   PoolStats base = pool.stats();
   phase(cfg, drv, pool, rngs, cfg.ops, cfg.durationS, &report.rows, report.totalOps, report.wallS);
   report.total = pool.stats() - base;
   report.opsPerSec = report.wallS > 0 ? report.totalOps / report.wallS : 0;
   breakdown(report.total.timeDiskNs, report.total.timeMigrationNs,
             static_cast<u64>(report.wallS * 1e9 * cfg.threads), report.timeDiskPct, report.timeMigrationPct,
             report.timeOtherPct);
   if (auto bad = pool.checkCoherence(); !bad.empty())
      throw Error("pool incoherent after run: " + bad.front());
   return report;
}

void writeCsv(const RunReport& r, std::ostream& out) {
   out << kCsvHeader << '\n';
   out << std::fixed;
   for (const Row& row : r.rows) {
      out << std::setprecision(3) << row.elapsedS << ',' << row.ops << ',' << row.tier0Hits << ',' << row.tier1Hits
          << ',' << row.diskReads << ',' << row.diskWrites << ',' << row.migrations << ',' << row.shootdowns << ','
          << std::setprecision(2) << row.timeDiskPct << ',' << row.timeMigrationPct << ',' << row.timeOtherPct
          << '\n';
   }
}

void writeCsvFile(const RunReport& r) {
   if (!r.config.csvPath)
      return;
   std::ofstream f(*r.config.csvPath);
   if (!f)
      throw ConfigError("cannot open CSV file '" + *r.config.csvPath + "'");
   writeCsv(r, f);
}

void checkComparable(const BenchConfig& a, const BenchConfig& b) {
   if (a.workload != b.workload)
      throw ConfigError("refusing to compare different workloads (" + toString(a.workload) + " vs " +
                        toString(b.workload) + ")");
   if (a.seed != b.seed)
      throw ConfigError("refusing to compare runs with different seeds");
   if (a.datasetPages != b.datasetPages || a.pageSize != b.pageSize)
      throw ConfigError("refusing to compare runs over different datasets");
   if (a.workload == WorkloadKind::MixedTxn && (a.readFraction != b.readFraction || a.zipfTheta != b.zipfTheta))
      throw ConfigError("refusing to compare different transaction mixes");
}

Comparison compare(const BenchConfig& a, const BenchConfig& b) {
   checkComparable(a, b);
   Comparison c;
   c.a = run(a);
   c.b = run(b);
   auto add = [&](const std::string& name, double x, double y) {
      c.rows.push_back({name, x, y, y != 0 ? x / y : 0});
   };
   const PoolStats& sa = c.a.total;
   const PoolStats& sb = c.b.total;
   auto hit = [](const PoolStats& s, std::size_t t) { return t < s.hits.size() ? s.hits[t] : 0; };
   add("ops_per_s", c.a.opsPerSec, c.b.opsPerSec);
   add("ops", c.a.totalOps, c.b.totalOps);
   add("tier0_hits", hit(sa, 0), hit(sb, 0));
   add("tier1_hits", hit(sa, 1), hit(sb, 1));
   add("disk_reads", sa.diskReads, sb.diskReads);
   add("disk_writes", sa.diskWrites, sb.diskWrites);
   add("migrations", sa.pagesMigrated, sb.pagesMigrated);
   add("shootdowns", sa.shootdowns, sb.shootdowns);
   add("time_disk_pct", c.a.timeDiskPct, c.b.timeDiskPct);
   add("time_migration_pct", c.a.timeMigrationPct, c.b.timeMigrationPct);
   add("time_other_pct", c.a.timeOtherPct, c.b.timeOtherPct);
   return c;
}

void writeComparison(const Comparison& c, std::ostream& out) {
   out << "metric,a,b,ratio\n" << std::fixed << std::setprecision(4);
   for (const auto& r : c.rows)
      out << r.metric << ',' << r.a << ',' << r.b << ',' << r.ratio << '\n';
}

} // namespace vmcachen::bench
