#include "deltamap/common.hpp"

#include <cmath>
#include <set>
#include <thread>
#include <vector>

#include "doctest.h"

using namespace deltamap;

TEST_CASE("splitmix64 output collides on none of the first 4096 states") {
    std::set<uint64_t> seen;
    for (uint64_t i = 0; i < 4096; ++i) {
        uint64_t state = i;
        seen.insert(splitmix64(state));
        CHECK(state != i);  // the generator advances its state
    }
    CHECK(seen.size() == 4096);
    uint64_t zero = 0;
    CHECK(splitmix64(zero) != 0);
}

TEST_CASE("hash_combine depends on order") {
    CHECK(hash_combine(1, 2) != hash_combine(2, 1));
    CHECK(hash_combine(hash_combine(1, 2), 3) !=
          hash_combine(1, hash_combine(2, 3)));
}

TEST_CASE("CounterRng streams are reproducible and seed-disjoint") {
    CounterRng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const uint64_t va = a.next_u64();
        CHECK(va == b.next_u64());
        CHECK(va != c.next_u64());
    }
}

TEST_CASE("CounterRng doubles lie in [0, 1)") {
    CounterRng rng(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double v = rng.next_double();
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0);
    CHECK(hi < 1.0);
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("CounterRng gaussian has roughly unit moments") {
    CounterRng rng(11);
    KahanSum sum, sq;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
        const double g = rng.next_gaussian();
        sum.add(g);
        sq.add(g * g);
    }
    const double mean = sum.value() / n;
    const double var = sq.value() / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("KahanSum survives magnitude cancellation that plain sums lose") {
    KahanSum k;
    double plain = 0.0;
    k.add(1e16);
    plain += 1e16;
    for (int i = 0; i < 10000; ++i) {
        k.add(1.0);
        plain += 1.0;
    }
    k.add(-1e16);
    plain += -1e16;
    CHECK(k.value() == doctest::Approx(10000.0).epsilon(1e-12));
    CHECK(plain != 10000.0);  // the baseline actually loses the ones
}

TEST_CASE("require throws invalid_argument with the given message") {
    CHECK_NOTHROW(require(true, "fine"));
    CHECK_THROWS_WITH_AS(require(false, "broken precondition"),
                         "broken precondition", std::invalid_argument);
}

TEST_CASE("max_threads override round-trips and zero restores hardware default") {
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    set_max_threads(3);
    CHECK(max_threads() == 3);
    set_max_threads(0);
    CHECK(max_threads() == (hw > 0 ? hw : 1));
}
