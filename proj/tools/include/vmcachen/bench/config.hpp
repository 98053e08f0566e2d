#pragma once

#include <optional>
#include <string>

#include "vmcachen/buffer_pool.hpp"

namespace vmcachen::bench {

enum class WorkloadKind { RandomRead, MixedTxn };

/// Core policy with rr lowered: each promotion drags promoteBatch-1 clock
/// neighbours along, so rr near 1 turns every remote read into a batch move.
inline MigrationPolicy defaultPolicy() {
   MigrationPolicy p;
   p.rr = 0.02;
   return p;
}

struct BenchConfig {
   // tiers, in pages; remotePages == 0 means a two-tier (DRAM + disk) pool
   u64 localPages = 4096;
   u64 remotePages = 8192;
   u64 diskPages = 0;  // 0: sized from the dataset
   u64 datasetPages = 16384;
   u32 pageSize = 4096;

   WorkloadKind workload = WorkloadKind::RandomRead;
   double readFraction = 0.7;  // MixedTxn
   double zipfTheta = 0.8;     // MixedTxn

   u32 threads = 1;
   double durationS = 10.0;
   std::optional<u64> ops;  // fixed op count instead of a duration
   double warmupS = 0.0;
   u64 warmupOps = 0;
   double reportEveryS = 1.0;
   std::optional<u64> reportEveryOps;
   u64 seed = 42;

   MigrationPolicy policy = defaultPolicy();
   MigrationEngineKind engine = MigrationEngineKind::MovePages2;
   MigrationMode mode = MigrationMode::Sync;

   bool costModel = true;
   u64 diskLatencyNs = 50'000;
   u64 remoteLatencyNs = 1'000;
   u64 localLatencyNs = 0;
   u64 shootdownNs = 4'000;
   double localCopyBytesPerNs = 10.0;
   double remoteCopyBytesPerNs = 10.0;

   std::optional<std::string> csvPath;

   /// Throws ConfigError with a readable message.
   void validate() const;
   /// Slot space actually used for the disk tier.
   u64 effectiveDiskPages() const;
   /// Number of keys loaded: dataset pages x leaf capacity x 0.69.
   u64 keyCount() const;
   PoolConfig poolConfig() const;
};

/// "4096" (pages), "64M", "1G", "512K" (bytes, converted to pages).
u64 parseSize(const std::string& text, u32 pageSize);
/// LOCAL:REMOTE:DISK with parseSize components; DISK may be empty.
void parseTiers(const std::string& text, BenchConfig& cfg);
WorkloadKind parseWorkload(const std::string& s);
MigrationEngineKind parseEngine(const std::string& s);
MigrationMode parseMode(const std::string& s);
std::string toString(WorkloadKind k);
std::string toString(MigrationEngineKind k);

} // namespace vmcachen::bench
