#include "distill/simd/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace distill::simd {
namespace {

const KernelOps& select_ops() {
  const char* forced = std::getenv("DISTILL_LAB_KERNELS");
  if (forced != nullptr) {
    if (std::strcmp(forced, "scalar") == 0) return scalar_ops();
    if (std::strcmp(forced, "avx2") == 0 && avx2_ops() != nullptr)
      return *avx2_ops();
  }
  if (const KernelOps* ops = avx2_ops()) return *ops;
  return scalar_ops();
}

}  // namespace

const KernelOps& active_ops() {
  static const KernelOps& ops = select_ops();
  return ops;
}

}  // namespace distill::simd
