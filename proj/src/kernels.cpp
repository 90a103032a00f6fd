// Runtime dispatch for the kernel variants.

#include "mrgr/kernels.hpp"

#include <cstdlib>

#include "mrgr/errors.hpp"

namespace mrgr::kern {
namespace {

const KernelOps* pick_auto() {
    if (const KernelOps* k = avx512_ops()) return k;
    if (const KernelOps* k = avx2_ops()) return k;
    if (const KernelOps* k = neon_ops()) return k;
    return scalar_ops();
}

const KernelOps* lookup(const std::string& name) {
    if (name == "auto") return pick_auto();
    if (name == "scalar") return scalar_ops();
    if (name == "avx2") return avx2_ops();
    if (name == "avx512") return avx512_ops();
    if (name == "neon") return neon_ops();
    throw UsageError("unknown kernel variant '" + name +
                     "' (expected auto, scalar, avx2, avx512, neon)");
}

const KernelOps* initial() {
    if (const char* env = std::getenv("MRGR_KERNELS")) {
        std::string name(env);
        if (!name.empty()) {
            const KernelOps* k = lookup(name);
            if (!k) throw UsageError("MRGR_KERNELS=" + name + " is not available on this machine");
            return k;
        }
    }
    return pick_auto();
}

const KernelOps*& slot() {
    static const KernelOps* current = initial();
    return current;
}

} // namespace

const KernelOps& active() { return *slot(); }

void select(const std::string& name) {
    const KernelOps* k = lookup(name);
    if (!k) throw UsageError("kernel variant '" + name + "' is not available on this machine");
    slot() = k;
}

std::vector<std::string> available() {
    std::vector<std::string> out;
    if (avx512_ops()) out.push_back("avx512");
    if (avx2_ops()) out.push_back("avx2");
    if (neon_ops()) out.push_back("neon");
    out.push_back("scalar");
    return out;
}

} // namespace mrgr::kern
