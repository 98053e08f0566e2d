#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "vmcachen/bench/runner.hpp"

using namespace vmcachen;
using namespace vmcachen::bench;

namespace {

/// Raw flag values; only the ones given on the command line are applied.
struct Flags {
   std::optional<std::string> tiers, dataset, workload, engine, mode, costModel, csv;
   std::optional<u32> pageSize, threads, evictBatch, promoteBatch, batchCap;
   std::optional<double> duration, warmup, reportEvery, readFraction, zipfTheta;
   std::optional<double> dr, dw, rr, rw, threshold;
   std::optional<u64> ops, warmupOps, reportEveryOps, seed;
   std::optional<u64> diskLatency, remoteLatency, shootdown;
};

void addFlags(CLI::App& app, Flags& f) {
   app.add_option("--tiers", f.tiers, "LOCAL:REMOTE[:DISK] in pages or with K/M/G suffix (REMOTE=0: two tiers)");
   app.add_option("--dataset", f.dataset, "dataset size in pages or with K/M/G suffix");
   app.add_option("--page-size", f.pageSize, "page size in bytes");
   app.add_option("--workload", f.workload, "RandomRead | MixedTxn");
   app.add_option("--read-fraction", f.readFraction, "MixedTxn read-only share");
   app.add_option("--zipf", f.zipfTheta, "MixedTxn skew");
   app.add_option("--threads", f.threads, "worker threads");
   app.add_option("--duration", f.duration, "measured seconds");
   app.add_option("--ops", f.ops, "measured operations (overrides --duration)");
   app.add_option("--warmup", f.warmup, "warmup seconds");
   app.add_option("--warmup-ops", f.warmupOps, "warmup operations");
   app.add_option("--report-every", f.reportEvery, "seconds per CSV row");
   app.add_option("--report-every-ops", f.reportEveryOps, "operations per CSV row");
   app.add_option("--seed", f.seed, "RNG seed");
   app.add_option("--dr", f.dr, "disk read lands in DRAM with this probability");
   app.add_option("--dw", f.dw, "dirty remote page written back with this probability");
   app.add_option("--rr", f.rr, "remote read promotes with this probability");
   app.add_option("--rw", f.rw, "DRAM eviction demotes to remote with this probability");
   app.add_option("--threshold", f.threshold, "utilization threshold");
   app.add_option("--evict-batch", f.evictBatch, "pages per eviction batch");
   app.add_option("--promote-batch", f.promoteBatch, "pages per promotion batch");
   app.add_option("--batch-cap", f.batchCap, "pages per migration chunk");
   app.add_option("--mode", f.mode, "async | sync | synclight");
   app.add_option("--engine", f.engine, "mp2 | legacy | mbind");
   app.add_option("--cost-model", f.costModel, "on | off");
   app.add_option("--disk-latency-ns", f.diskLatency, "simulated disk latency");
   app.add_option("--remote-latency-ns", f.remoteLatency, "simulated remote memory latency");
   app.add_option("--shootdown-ns", f.shootdown, "simulated TLB shootdown cost");
   app.add_option("--csv", f.csv, "CSV output path");
}

void apply(const Flags& f, BenchConfig& c) {
   // page size first: size suffixes depend on it
   if (f.pageSize)
      c.pageSize = *f.pageSize;
   if (f.tiers)
      parseTiers(*f.tiers, c);
   if (f.dataset)
      c.datasetPages = parseSize(*f.dataset, c.pageSize);
   if (f.workload)
      c.workload = parseWorkload(*f.workload);
   if (f.readFraction)
      c.readFraction = *f.readFraction;
   if (f.zipfTheta)
      c.zipfTheta = *f.zipfTheta;
   if (f.threads)
      c.threads = *f.threads;
   if (f.duration)
      c.durationS = *f.duration;
   if (f.ops)
      c.ops = *f.ops;
   if (f.warmup)
      c.warmupS = *f.warmup;
   if (f.warmupOps)
      c.warmupOps = *f.warmupOps;
   if (f.reportEvery)
      c.reportEveryS = *f.reportEvery;
   if (f.reportEveryOps)
      c.reportEveryOps = *f.reportEveryOps;
   if (f.seed)
      c.seed = *f.seed;
   if (f.dr)
      c.policy.dr = *f.dr;
   if (f.dw)
      c.policy.dw = *f.dw;
   if (f.rr)
      c.policy.rr = *f.rr;
   if (f.rw)
      c.policy.rw = *f.rw;
   if (f.threshold)
      c.policy.utilizationThreshold = *f.threshold;
   if (f.evictBatch)
      c.policy.evictBatch = *f.evictBatch;
   if (f.promoteBatch)
      c.policy.promoteBatch = *f.promoteBatch;
   if (f.batchCap)
      c.policy.maxBatchedMigration = *f.batchCap;
   if (f.mode)
      c.mode = parseMode(*f.mode);
   if (f.engine)
      c.engine = parseEngine(*f.engine);
   if (f.costModel) {
      if (*f.costModel == "on")
         c.costModel = true;
      else if (*f.costModel == "off")
         c.costModel = false;
      else
         throw ConfigError("--cost-model expects on or off");
   }
   if (f.diskLatency)
      c.diskLatencyNs = *f.diskLatency;
   if (f.remoteLatency)
      c.remoteLatencyNs = *f.remoteLatency;
   if (f.shootdown)
      c.shootdownNs = *f.shootdown;
   if (f.csv)
      c.csvPath = *f.csv;
}

BenchConfig withOverrides(const BenchConfig& base, const std::string& overrides, const char* side) {
   BenchConfig c = base;
   if (overrides.empty())
      return c;
   CLI::App sub{std::string("overrides for side ") + side};
   Flags f;
   addFlags(sub, f);
   try {
      sub.parse(overrides, false);
   } catch (const CLI::ParseError& e) {
      throw ConfigError(std::string("--") + side + ": " + e.what());
   }
   apply(f, c);
   c.csvPath.reset();
   return c;
}

void printSummary(const RunReport& r, std::ostream& out) {
   out << std::fixed << std::setprecision(1) << "load_s=" << r.loadS << " tree_pages=" << r.treePages << " ops=" << r.totalOps << " wall_s=" << std::setprecision(3) << r.wallS
       << " ops_per_s=" << std::setprecision(1) << r.opsPerSec << " disk_reads=" << r.total.diskReads
       << " migrations=" << r.total.pagesMigrated << " shootdowns=" << r.total.shootdowns
       << " time_disk_pct=" << r.timeDiskPct << " time_migration_pct=" << r.timeMigrationPct
       << " time_other_pct=" << r.timeOtherPct << '\n';
}

} // namespace

int main(int argc, char** argv) {
   CLI::App app{"vmcachen-bench: tiered buffer pool benchmark harness"};
   app.require_subcommand(1);

   Flags runFlags;
   auto* runCmd = app.add_subcommand("run", "load the dataset and run one workload");
   addFlags(*runCmd, runFlags);

   Flags cmpFlags;
   std::string aOverrides, bOverrides;
   auto* cmpCmd = app.add_subcommand("compare", "run two configurations and print a ratio table (a / b)");
   addFlags(*cmpCmd, cmpFlags);
   cmpCmd->add_option("--a", aOverrides, "flags applied to side a, e.g. \"--engine mp2\"");
   cmpCmd->add_option("--b", bOverrides, "flags applied to side b");

   CLI11_PARSE(app, argc, argv);

   try {
      if (*runCmd) {
         BenchConfig cfg;
         apply(runFlags, cfg);
         RunReport r = run(cfg);
         writeCsv(r, std::cout);
         writeCsvFile(r);
         printSummary(r, std::cerr);
         return 0;
      }
      BenchConfig base;
      apply(cmpFlags, base);
      BenchConfig a = withOverrides(base, aOverrides, "a");
      BenchConfig b = withOverrides(base, bOverrides, "b");
      a.validate();
      b.validate();
      Comparison c = compare(a, b);
      writeComparison(c, std::cout);
      if (base.csvPath) {
         std::ofstream f(*base.csvPath);
         if (!f)
            throw ConfigError("cannot open CSV file '" + *base.csvPath + "'");
         writeComparison(c, f);
      }
      std::cerr << "a: ";
      printSummary(c.a, std::cerr);
      std::cerr << "b: ";
      printSummary(c.b, std::cerr);
      return 0;
   } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return 2;
   } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
   }
}
