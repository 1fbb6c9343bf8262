#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedpoison/errors.hpp"
#include "fedpoison/random.hpp"
#include "fedpoison/stealth.hpp"

using namespace fedpoison;

namespace {

using Updates = std::vector<std::vector<double>>;

// Two-feature linear model whose logit c is x_c plus bias: class 0 wins when
// x0 + b0 > x1 + b1. A scalar bias shift moves the decision boundary.
struct ToyProblem {
    ModelSpec spec{{2, 2}};
    std::vector<std::vector<double>> xs;
    std::vector<LabeledSample> validation;
    ToyProblem() {
        for (int i = 0; i < 10; ++i) xs.push_back({0.1 * i, 0.45});
        for (int i = 0; i < 10; ++i) validation.push_back({xs[i], i >= 5 ? 0u : 1u});
    }
};

}  // namespace

TEST_CASE("accuracy gap compares the lone update against the other agents' aggregate") {
    ToyProblem p;
    const ParameterVector w{1, 0, 0, 1, 0, 0};
    CHECK(accuracy(p.spec, w, p.validation) == doctest::Approx(1.0));
    const std::vector<double> good(6, 0.0);
    const std::vector<double> bad{0, 0, 0, 0, -1.0, 1.0};  // everything becomes class 1
    std::vector<WeightedDelta> others{{0.5, good}, {0.5, good}};
    const auto check = accuracy_gap_check(p.spec, w, bad, others, p.validation, 10.0);
    CHECK(check.gap == doctest::Approx(50.0));
    CHECK(check.flagged);
    CHECK_FALSE(accuracy_gap_check(p.spec, w, bad, others, p.validation, 50.5).flagged);
    CHECK_FALSE(accuracy_gap_check(p.spec, w, bad, others, p.validation, 100.0).flagged);

    const auto self = accuracy_gap_check(p.spec, w, good, others, p.validation, 1e-9);
    CHECK(self.gap == 0.0);
    CHECK_FALSE(self.flagged);

    // others are weighted by alpha: 2 * 0.5 * bad equals bad itself.
    std::vector<WeightedDelta> bad_others{{0.5, bad}, {0.5, bad}};
    CHECK(accuracy_gap_check(p.spec, w, good, bad_others, p.validation, 10.0).gap ==
          doctest::Approx(-50.0));
    std::vector<LabeledSample> empty;
    CHECK_THROWS_AS(accuracy_gap_check(p.spec, w, good, others, empty, 10.0), InvalidArgument);
}

TEST_CASE("accuracy flag is monotone in gamma") {
    ToyProblem p;
    const ParameterVector w{1, 0, 0, 1, 0, 0};
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> mine(6), other(6);
        for (auto& v : mine) v = 0.3 * rng.normal();
        for (auto& v : other) v = 0.3 * rng.normal();
        std::vector<WeightedDelta> others{{1.0, other}};
        bool was_flagged = true;
        for (double gamma = -100.0; gamma <= 100.0; gamma += 5.0) {
            const bool now = accuracy_gap_check(p.spec, w, mine, others, p.validation, gamma).flagged;
            CHECK((was_flagged || !now));
            was_flagged = now;
        }
    }
}

TEST_CASE("distance ranges of three 1-D updates") {
    const Updates u{{0.0}, {1.0}, {5.0}};
    const auto r = distance_ranges(u);
    REQUIRE(r.size() == 3);
    CHECK(r[0].lower == 1.0);
    CHECK(r[0].upper == 5.0);
    CHECK(r[1].lower == 1.0);
    CHECK(r[1].upper == 4.0);
    CHECK(r[2].lower == 4.0);
    CHECK(r[2].upper == 5.0);

    const std::vector<std::size_t> labels{7, 3, 9};
    const auto labelled = distance_ranges(u, labels);
    CHECK(labelled[1].agent == 3);

    const Updates same(4, std::vector<double>{2.0, -1.0});
    for (const auto& x : distance_ranges(same)) {
        CHECK(x.lower == 0.0);
        CHECK(x.upper == 0.0);
    }
    const Updates two{{0.0}, {1.0}};
    CHECK_THROWS_AS(distance_ranges(two), InvalidArgument);
}

TEST_CASE("distance ranges permute with their agents") {
    Rng rng(15);
    Updates u(6, std::vector<double>(4));
    for (auto& v : u)
        for (auto& x : v) x = rng.normal();
    const auto base = distance_ranges(u);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    Updates shuffled;
    for (auto i : perm) shuffled.push_back(u[i]);
    const auto r = distance_ranges(shuffled);
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(r[k].lower == doctest::Approx(base[perm[k]].lower).epsilon(1e-15));
        CHECK(r[k].upper == doctest::Approx(base[perm[k]].upper).epsilon(1e-15));
    }
}

TEST_CASE("range deviation against benign ranges") {
    const std::vector<DistanceRange> benign{{1, 1.0, 2.0}, {2, 1.2, 1.8}, {3, 1.5, 2.0}};
    const DistanceRange mal{0, 10.0, 11.0};
    const auto check = range_check(benign, mal, 5.0);
    CHECK(check.deviation == doctest::Approx(10.0));
    CHECK(check.flagged);
    CHECK_FALSE(range_check(benign, mal, kNeverFlag).flagged);
    CHECK_FALSE(range_check(benign, mal, 10.5).flagged);

    const Updates same(5, std::vector<double>{1.0, 1.0});
    const auto zero = range_check(same, 0, 1e-12);
    CHECK(zero.deviation == 0.0);
    CHECK_FALSE(zero.flagged);
}

TEST_CASE("summarize_distances uses benign-only ranges for the reference band") {
    // m at position 1; benign updates at 0, 2, 3.
    const Updates u{{0.0}, {100.0}, {1.0}, {3.0}};
    const auto s = summarize_distances(u, 1);
    CHECK(s.benign_min == 1.0);
    CHECK(s.benign_max == 3.0);
    CHECK(s.malicious.lower == 97.0);
    CHECK(s.malicious.upper == 100.0);
    CHECK(s.deviation == doctest::Approx(std::max(std::abs(100.0 - 1.0), std::abs(97.0 - 3.0))));
    CHECK_THROWS_AS(summarize_distances(u, 4), InvalidArgument);
}

TEST_CASE("range deviation ignores benign relabeling and flags monotonically in kappa") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        Updates u(7, std::vector<double>(5));
        for (auto& v : u)
            for (auto& x : v) x = rng.normal();
        for (auto& x : u[2]) x *= 3.0;
        const double d = summarize_distances(u, 2).deviation;
        Updates swapped = u;
        std::swap(swapped[0], swapped[6]);
        std::swap(swapped[1], swapped[4]);
        CHECK(summarize_distances(swapped, 2).deviation == doctest::Approx(d).epsilon(1e-14));
        bool was = true;
        for (double kappa = 0.0; kappa < 20.0; kappa += 0.25) {
            const bool now = range_check(u, 2, kappa).flagged;
            CHECK((was || !now));
            was = now;
        }
    }
}

TEST_CASE("histogram conserves mass and bins a ramp evenly") {
    const std::vector<double> zero(101, 0.0);
    const auto h0 = update_histogram(zero, 10, -1.0, 1.0);
    REQUIRE(h0.size() == 12);
    CHECK(h0[6] == 101);  // bin [0, 0.2)

    std::vector<double> ramp(400);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = -1.0 + 2.0 * (i + 0.5) / 400.0;
    const auto h = update_histogram(ramp, 4, -1.0, 1.0);
    CHECK(h.front() == 0);
    CHECK(h.back() == 0);
    for (std::size_t b = 1; b <= 4; ++b) CHECK(std::abs(static_cast<long>(h[b]) - 100) <= 1);

    const std::vector<double> edges{-2.0, -1.0, 1.0, 1.5, std::nextafter(-1.0, -2.0)};
    const auto he = update_histogram(edges, 2, -1.0, 1.0);
    CHECK(he == std::vector<std::size_t>{2, 1, 1, 1});

    Rng rng(2);
    std::vector<double> noise(1000);
    for (auto& v : noise) v = 2.0 * rng.normal();
    const auto hn = update_histogram(noise, 7, -1.0, 1.0);
    CHECK(std::accumulate(hn.begin(), hn.end(), std::size_t{0}) == 1000);
    CHECK_THROWS_AS(update_histogram(noise, 0, -1.0, 1.0), InvalidArgument);
    CHECK_THROWS_AS(update_histogram(noise, 3, 1.0, 1.0), InvalidArgument);
}
