#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <vector>

#include "vmcachen/types.hpp"

namespace vmcachen {

/// Simulated latency charging. When disabled every charge is free, which is
/// what unit tests want; benchmarks enable it to expose tier asymmetry.
class CostModel {
public:
   u64 shootdownNs = 4000;
   /// Copy bandwidth per memory tier in bytes/ns (== GB/s). Missing entries
   /// use defaultCopyBytesPerNs.
   std::vector<double> copyBytesPerNs;
   double defaultCopyBytesPerNs = 10.0;

   bool enabled() const { return enabled_.load(std::memory_order_relaxed); }
   void setEnabled(bool on) { enabled_.store(on, std::memory_order_relaxed); }

   double bandwidth(TierId t) const {
      return t.index < copyBytesPerNs.size() ? copyBytesPerNs[t.index] : defaultCopyBytesPerNs;
   }

   /// Modeled cost of copying one page between two memory tiers.
   u64 copyNs(TierId src, TierId dst, u32 pageSize) const {
      double bw = std::min(bandwidth(src), bandwidth(dst));
      return bw <= 0 ? 0 : static_cast<u64>(pageSize / bw);
   }

   /// Burns `ns` of wall time if enabled; returns the modeled cost either way.
   u64 charge(u64 ns) const {
      if (ns && enabled())
         spinFor(ns);
      return ns;
   }

   static void spinFor(u64 ns);

   CostModel() = default;
   CostModel(const CostModel& o)
      : shootdownNs(o.shootdownNs), copyBytesPerNs(o.copyBytesPerNs), defaultCopyBytesPerNs(o.defaultCopyBytesPerNs),
        enabled_(o.enabled()) {}
   CostModel& operator=(const CostModel& o) {
      shootdownNs = o.shootdownNs;
      copyBytesPerNs = o.copyBytesPerNs;
      defaultCopyBytesPerNs = o.defaultCopyBytesPerNs;
      setEnabled(o.enabled());
      return *this;
   }

private:
   std::atomic<bool> enabled_{false};
};

inline u64 nowNs() {
   return static_cast<u64>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                              std::chrono::steady_clock::now().time_since_epoch())
                              .count());
}

} // namespace vmcachen
