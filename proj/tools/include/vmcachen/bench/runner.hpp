#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "vmcachen/bench/config.hpp"

namespace vmcachen::bench {

/// One reporting interval. Counters are deltas over the interval.
struct Row {
   double elapsedS = 0;  // end of the interval, since the measured phase began
   u64 ops = 0;
   u64 tier0Hits = 0;
   u64 tier1Hits = 0;
   u64 diskReads = 0;
   u64 diskWrites = 0;
   u64 migrations = 0;  // pages moved between memory tiers
   u64 shootdowns = 0;
   double timeDiskPct = 0;
   double timeMigrationPct = 0;
   double timeOtherPct = 0;
   PoolStats delta;  // full counter delta, not written to the CSV
};

struct RunReport {
   BenchConfig config;
   std::vector<Row> rows;
   u64 totalOps = 0;
   double wallS = 0;
   double opsPerSec = 0;
   PoolStats total;  // delta over the measured phase
   double timeDiskPct = 0;
   double timeMigrationPct = 0;
   double timeOtherPct = 0;
   u64 keys = 0;
   u64 treePages = 0;
   double loadS = 0;
};

/// Loads the dataset (cost model off), drops every page to disk, then runs
/// warmup and the measured phase with the cost model as configured.
RunReport run(const BenchConfig& cfg);

extern const char* const kCsvHeader;
void writeCsv(const RunReport& r, std::ostream& out);
/// Writes the CSV to cfg.csvPath when set.
void writeCsvFile(const RunReport& r);

struct ComparisonRow {
   std::string metric;
   double a = 0;
   double b = 0;
   double ratio = 0;  // a / b; 0 when b == 0
};

struct Comparison {
   RunReport a;
   RunReport b;
   std::vector<ComparisonRow> rows;
   double throughputRatio() const { return rows.empty() ? 0 : rows.front().ratio; }
};

/// Throws ConfigError when the two runs would not measure the same workload.
void checkComparable(const BenchConfig& a, const BenchConfig& b);
Comparison compare(const BenchConfig& a, const BenchConfig& b);
void writeComparison(const Comparison& c, std::ostream& out);

/// Splits an interval's time into disk / migration / other percentages.
void breakdown(u64 diskNs, u64 migrationNs, u64 busyNs, double& diskPct, double& migPct, double& otherPct);

} // namespace vmcachen::bench
