#include "vmcachen/bench/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "vmcachen/btree.hpp"

namespace vmcachen::bench {

namespace {

std::string lower(std::string s) {
   std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
   return s;
}

} // namespace

u64 parseSize(const std::string& text, u32 pageSize) {
   if (text.empty())
      throw ConfigError("empty size");
   std::size_t used = 0;
   double value;
   try {
      value = std::stod(text, &used);
   } catch (const std::exception&) {
      throw ConfigError("bad size '" + text + "'");
   }
   if (value < 0)
      throw ConfigError("negative size '" + text + "'");
   std::string suffix = lower(text.substr(used));
   if (suffix.empty() || suffix == "p") {
      if (value != std::floor(value))
         throw ConfigError("page count must be an integer: '" + text + "'");
      return static_cast<u64>(value);
   }
   double mult;
   if (suffix == "k" || suffix == "kb" || suffix == "kib")
      mult = 1024.0;
   else if (suffix == "m" || suffix == "mb" || suffix == "mib")
      mult = 1024.0 * 1024;
   else if (suffix == "g" || suffix == "gb" || suffix == "gib")
      mult = 1024.0 * 1024 * 1024;
   else if (suffix == "b")
      mult = 1.0;
   else
      throw ConfigError("unknown size suffix in '" + text + "'");
   return static_cast<u64>(value * mult / pageSize);
}

void parseTiers(const std::string& text, BenchConfig& cfg) {
   std::vector<std::string> parts;
   std::size_t start = 0;
   while (true) {
      std::size_t colon = text.find(':', start);
      parts.push_back(text.substr(start, colon == std::string::npos ? std::string::npos : colon - start));
      if (colon == std::string::npos)
         break;
      start = colon + 1;
   }
   if (parts.size() < 2 || parts.size() > 3)
      throw ConfigError("--tiers expects LOCAL:REMOTE[:DISK], got '" + text + "'");
   cfg.localPages = parseSize(parts[0], cfg.pageSize);
   cfg.remotePages = parseSize(parts[1], cfg.pageSize);
   cfg.diskPages = parts.size() == 3 && !parts[2].empty() ? parseSize(parts[2], cfg.pageSize) : 0;
}

WorkloadKind parseWorkload(const std::string& s) {
   std::string l = lower(s);
   if (l == "randomread" || l == "random-read" || l == "random_read")
      return WorkloadKind::RandomRead;
   if (l == "mixedtxn" || l == "mixed-txn" || l == "mixed_txn")
      return WorkloadKind::MixedTxn;
   throw ConfigError("unknown workload '" + s + "' (RandomRead|MixedTxn)");
}

MigrationEngineKind parseEngine(const std::string& s) {
   std::string l = lower(s);
   if (l == "mp2")
      return MigrationEngineKind::MovePages2;
   if (l == "legacy")
      return MigrationEngineKind::Legacy;
   if (l == "mbind")
      return MigrationEngineKind::Mbind;
   throw ConfigError("unknown engine '" + s + "' (mp2|legacy|mbind)");
}

MigrationMode parseMode(const std::string& s) {
   std::string l = lower(s);
   if (l == "async")
      return MigrationMode::Async;
   if (l == "sync")
      return MigrationMode::Sync;
   if (l == "synclight")
      return MigrationMode::SyncLight;
   throw ConfigError("unknown mode '" + s + "' (async|sync|synclight)");
}

std::string toString(WorkloadKind k) {
   return k == WorkloadKind::RandomRead ? "RandomRead" : "MixedTxn";
}

std::string toString(MigrationEngineKind k) {
   switch (k) {
      case MigrationEngineKind::MovePages2:
         return "mp2";
      case MigrationEngineKind::Legacy:
         return "legacy";
      case MigrationEngineKind::Mbind:
         return "mbind";
   }
   return "?";
}

u64 BenchConfig::keyCount() const {
   double keys = static_cast<double>(datasetPages) * BTree::leafCapacity(pageSize) * 0.69;
   return std::max<u64>(1, static_cast<u64>(keys));
}

u64 BenchConfig::effectiveDiskPages() const {
   return diskPages ? diskPages : datasetPages + datasetPages / 2 + 1024;
}

void BenchConfig::validate() const {
   if (pageSize < 1024 || (pageSize & (pageSize - 1)) != 0)
      throw ConfigError("--page-size must be a power of two >= 1024");
   if (localPages == 0)
      throw ConfigError("local tier must hold at least one page");
   if (datasetPages == 0)
      throw ConfigError("dataset must be at least one page");
   if (effectiveDiskPages() < datasetPages + datasetPages / 2)
      throw ConfigError("dataset of " + std::to_string(datasetPages) + " pages does not fit a disk tier of " +
                        std::to_string(effectiveDiskPages()) + " pages (needs 1.5x for tree slack)");
   if (threads == 0)
      throw ConfigError("--threads must be >= 1");
   if (!(readFraction >= 0.0 && readFraction <= 1.0))
      throw ConfigError("read fraction must lie in [0,1]");
   if (!(zipfTheta >= 0.0) || zipfTheta == 1.0)
      throw ConfigError("zipf theta must be >= 0 and != 1");
   if (!ops && !(durationS > 0))
      throw ConfigError("--duration must be > 0");
   if (ops && *ops == 0)
      throw ConfigError("--ops must be > 0");
   if (!reportEveryOps && !(reportEveryS > 0))
      throw ConfigError("report interval must be > 0");
   if (reportEveryOps && *reportEveryOps == 0)
      throw ConfigError("report interval must be > 0");
   policy.validate();
}

PoolConfig BenchConfig::poolConfig() const {
   PoolConfig c;
   c.topology.pageSize = pageSize;
   c.topology.memoryTiers.push_back(TierSpec{localPages, localLatencyNs, localLatencyNs});
   if (remotePages)
      c.topology.memoryTiers.push_back(TierSpec{remotePages, remoteLatencyNs, remoteLatencyNs});
   c.topology.disk = TierSpec{effectiveDiskPages(), diskLatencyNs, diskLatencyNs};
   c.policy = policy;
   c.engine = engine;
   c.mode = mode;
   c.cost.shootdownNs = shootdownNs;
   c.cost.copyBytesPerNs = {localCopyBytesPerNs, remoteCopyBytesPerNs};
   return c;
}

} // namespace vmcachen::bench
