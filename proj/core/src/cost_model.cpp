#include "vmcachen/cost_model.hpp"

#include <thread>

namespace vmcachen {

// Yields while waiting so other workers can run on an oversubscribed host;
// with nothing else runnable this is a plain spin.
void CostModel::spinFor(u64 ns) {
   u64 deadline = nowNs() + ns;
   while (nowNs() < deadline)
      std::this_thread::yield();
}

} // namespace vmcachen
