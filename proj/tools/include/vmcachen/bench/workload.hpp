#pragma once

#include <string>

#include "vmcachen/types.hpp"

namespace vmcachen::bench {

/// Zipfian draws over [0, n) (YCSB generator, Gray et al. rejection-free
/// form). Item 0 is the hottest; use scrambled() to spread hot items.
class ZipfGenerator {
public:
   ZipfGenerator(u64 n, double theta);

   /// u uniform in [0,1).
   u64 draw(double u) const;
   u64 scrambled(double u) const;

   u64 n() const { return n_; }
   double theta() const { return theta_; }
   /// Probability mass of rank i, for tests.
   double probability(u64 i) const;

private:
   u64 n_;
   double theta_;
   double zetaN_;
   double alpha_;
   double eta_;
   double half_;
};

/// Sum_{i=1..n} 1/i^theta.
double zeta(u64 n, double theta);
/// Stateless 64-bit mixer (splitmix64 finaliser).
u64 mix64(u64 x);

/// 8-byte big-endian key so byte order equals numeric order.
std::string encodeKey(u64 k);
u64 decodeKey(const std::string& s);

constexpr u32 kValueSize = 120;
/// Value whose first 8 bytes hold a counter; the rest is derived from the key.
std::string makeValue(u64 key, u64 counter);
u64 valueCounter(const std::string& v);

} // namespace vmcachen::bench
