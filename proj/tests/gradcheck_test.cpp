// The registry itself is the oracle here (central differences against the
// tape), so these tests mostly assert that it covers what it claims to and
// that every check clears the tolerance on a fixed seed. The multi-seed
// sweep lives in the acceptance binary where its runtime budget is pinned.
#include <algorithm>
#include <set>

#include "doctest.h"
#include "issl/gradcheck.hpp"

using namespace issl;

TEST_SUITE_BEGIN("gradcheck");

TEST_CASE("every registered check passes at seed 0") {
  const auto reports = gradcheck::run_all(0);
  REQUIRE(reports.size() >= 25);
  for (const auto& r : reports) {
    CAPTURE(r.name);
    CHECK(r.result.checked > 0);
    CHECK(r.result.max_rel_err < 1e-4);
  }
}

TEST_CASE("registry names are unique and cover the core graph") {
  const auto reports = gradcheck::run_all(1);
  std::set<std::string> names;
  for (const auto& r : reports) names.insert(r.name);
  CHECK(names.size() == reports.size());
  for (const char* expected : {"conv2d-zero-s2", "bilinear-sample", "view-synthesis",
                               "ssim-map", "smoothness", "self-consistency-ratio",
                               "depth-inference", "training-objective"}) {
    CAPTURE(expected);
    CHECK(names.count(expected) == 1);
  }
}

TEST_CASE("clamp check exercises the skip path") {
  const auto reports = gradcheck::run_all(0);
  const auto it = std::find_if(reports.begin(), reports.end(),
                               [](const auto& r) { return r.name == "clamp"; });
  REQUIRE(it != reports.end());
  CHECK(it->result.checked + it->result.skipped == 64);
}

TEST_CASE("run_seeds aggregates counts and keeps the worst error") {
  const auto one = gradcheck::run_all(0);
  const auto two = gradcheck::run_seeds(2);
  REQUIRE(two.size() == one.size());
  for (size_t i = 0; i < two.size(); ++i) {
    CHECK(two[i].result.checked >= one[i].result.checked);
    CHECK(two[i].result.max_rel_err >= one[i].result.max_rel_err);
  }
  CHECK_THROWS_AS(gradcheck::run_seeds(0), ValidationError);
}

TEST_SUITE_END();
