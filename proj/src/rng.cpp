#include "dmm/rng.hpp"

#include <sstream>
#include <vector>

#include "dmm/error.hpp"

namespace dmm {

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

Rng seed_from_words(const std::vector<std::uint64_t>& words) {
    std::vector<std::uint32_t> seq;
    seq.reserve(words.size() * 2);
    for (auto w : words) {
        seq.push_back(static_cast<std::uint32_t>(w & 0xffffffffull));
        seq.push_back(static_cast<std::uint32_t>(w >> 32));
    }
    std::seed_seq ss(seq.begin(), seq.end());
    return Rng(ss);
}

}  // namespace

Rng spawn_stream(std::uint64_t master_seed, std::string_view name) {
    return seed_from_words({master_seed, fnv1a(name)});
}

Rng spawn_stream(std::uint64_t master_seed, std::string_view name, std::uint64_t a,
                 std::uint64_t b) {
    return seed_from_words({master_seed, fnv1a(name), a, b});
}

std::string rng_state_to_string(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

Rng rng_state_from_string(const std::string& state) {
    Rng rng;
    std::istringstream is(state);
    is >> rng;
    if (is.fail()) throw SchemaError("rng_state_from_string: malformed engine state");
    return rng;
}

double draw_normal(Rng& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(rng);
}

double draw_uniform(Rng& rng) {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(rng);
}

std::uint64_t draw_u64(Rng& rng) { return rng(); }

}  // namespace dmm
