#include "pmq/pcl.hpp"

namespace pmq::pcl {

namespace {
std::atomic<int64_t> g_zero_vector_warnings{0};
}

int64_t zero_vector_warnings() { return g_zero_vector_warnings.load(); }
void reset_zero_vector_warnings() { g_zero_vector_warnings.store(0); }
void bump_zero_vector_warnings() { ++g_zero_vector_warnings; }

}  // namespace pmq::pcl
