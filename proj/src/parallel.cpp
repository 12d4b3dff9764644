#include "redforge/parallel.hpp"

#include <cstdlib>
#include <string>

namespace redforge {

int default_thread_count() {
    if (const char* env = std::getenv("RED_FORGE_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) return n;
        } catch (...) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace redforge
