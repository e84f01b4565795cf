#include "loomweave/common.hpp"
#include "loomweave/tensor.hpp"

#include <cstdlib>
#include <thread>

extern "C" void openblas_set_num_threads(int);

namespace loomweave {

void fail(const char* file, int line, const std::string& msg) {
    throw std::runtime_error(std::string(file) + ":" + std::to_string(line) + ": " + msg);
}

namespace {
int g_threads = 0;
}

void Threading::configure(int threads) {
    if (threads <= 0) {
        threads = static_cast<int>(std::thread::hardware_concurrency());
        if (threads <= 0) threads = 1;
        if (threads > 8) threads = 8;
    }
    g_threads = threads;
    openblas_set_num_threads(threads);
}

int Threading::threads() {
    if (g_threads == 0) configure(0);
    return g_threads;
}

bool Threading::deterministic_env() {
    const char* v = std::getenv("LOOMWEAVE_DETERMINISTIC");
    return v != nullptr && v[0] == '1';
}

Tensor randn(std::vector<int> shape, RandomStream& rng, double std_dev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.gaussian() * std_dev;
    return t;
}

Tensor rand_uniform(std::vector<int> shape, RandomStream& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace loomweave
