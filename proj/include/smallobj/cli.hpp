#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "smallobj/metrics.hpp"

namespace smallobj {

// Entry point behind main(). Exit codes: 0 success, 1 validation error,
// 2 runtime/IO error.
int cli_main(int argc, const char* const* argv);

// The selftest's AP oracle check with an injectable implementation under
// test, so a deliberately broken implementation is caught by the fixture.
using ApFn = std::function<double(std::vector<ScoredLabel>, std::size_t)>;
bool selftest_ap_check(const ApFn& ap, int scenarios, std::uint64_t seed,
                       std::string* detail);

}  // namespace smallobj
