#include "vmcachen/bench/workload.hpp"

#include <cmath>
#include <cstring>

namespace vmcachen::bench {

double zeta(u64 n, double theta) {
   double sum = 0;
   for (u64 i = 1; i <= n; i++)
      sum += 1.0 / std::pow(static_cast<double>(i), theta);
   return sum;
}

u64 mix64(u64 x) {
   x += 0x9e3779b97f4a7c15ull;
   x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
   x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
   return x ^ (x >> 31);
}

ZipfGenerator::ZipfGenerator(u64 n, double theta) : n_(n ? n : 1), theta_(theta) {
   zetaN_ = zeta(n_, theta_);
   double zeta2 = zeta(2, theta_);
   alpha_ = 1.0 / (1.0 - theta_);
   eta_ = (1.0 - std::pow(2.0 / n_, 1.0 - theta_)) / (1.0 - zeta2 / zetaN_);
   half_ = 1.0 + std::pow(0.5, theta_);
}

u64 ZipfGenerator::draw(double u) const {
   if (n_ == 1)
      return 0;
   double uz = u * zetaN_;
   if (uz < 1.0)
      return 0;
   if (uz < half_)
      return 1;
   auto r = static_cast<u64>(n_ * std::pow(eta_ * u - eta_ + 1.0, alpha_));
   return r >= n_ ? n_ - 1 : r;
}

u64 ZipfGenerator::scrambled(double u) const {
   return mix64(draw(u)) % n_;
}

double ZipfGenerator::probability(u64 i) const {
   return 1.0 / std::pow(static_cast<double>(i + 1), theta_) / zetaN_;
}

std::string encodeKey(u64 k) {
   std::string s(8, '\0');
   for (int i = 7; i >= 0; i--) {
      s[i] = static_cast<char>(k & 0xFF);
      k >>= 8;
   }
   return s;
}

u64 decodeKey(const std::string& s) {
   u64 k = 0;
   for (std::size_t i = 0; i < 8 && i < s.size(); i++)
      k = (k << 8) | static_cast<unsigned char>(s[i]);
   return k;
}

std::string makeValue(u64 key, u64 counter) {
   std::string v(kValueSize, '\0');
   std::memcpy(v.data(), &counter, 8);
   u64 fill = mix64(key);
   for (u32 i = 8; i < kValueSize; i++)
      v[i] = static_cast<char>('a' + (fill >> (i % 56)) % 26);
   return v;
}

u64 valueCounter(const std::string& v) {
   u64 c = 0;
   if (v.size() >= 8)
      std::memcpy(&c, v.data(), 8);
   return c;
}

} // namespace vmcachen::bench
