#include <catch2/catch_amalgamated.hpp>

#include "support/gradcheck_suite.hpp"

// Property sweep: every primitive and both layer types against central finite
// differences, 100 random trials per primitive (fewer for the layer-level
// checks, which are much heavier per trial). The full-model checks live in the
// acceptance suite next to the model tests.

TEST_CASE("primitive gradients match finite differences") {
  auto results = gradsuite::check_primitives(100, /*seed=*/42);
  for (const auto& r : results) {
    INFO(r.name << " max rel err " << r.max_rel_error);
    CHECK(r.pass);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("layer gradients match finite differences") {
  auto results = gradsuite::check_layers(5, /*seed=*/43);
  for (const auto& r : results) {
    INFO(r.name << " max rel err " << r.max_rel_error);
    CHECK(r.pass);
    CHECK(r.max_rel_error < 1e-4);
  }
}
