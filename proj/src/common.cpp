#include "cvgan/common.hpp"

#include <algorithm>
#include <thread>

namespace cvgan {

int worker_threads() {
    static const int cached = [] {
        int n = static_cast<int>(std::thread::hardware_concurrency());
        if (n < 1) n = 1;
        if (const char* env = std::getenv("CVGAN_THREADS")) {
            char* end = nullptr;
            long v = std::strtol(env, &end, 10);
            if (end != env && v >= 1) n = std::min<long>(v, 256);
        }
        return n;
    }();
    return cached;
}

}  // namespace cvgan
