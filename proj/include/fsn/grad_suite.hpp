#ifndef FSN_GRAD_SUITE_HPP_
#define FSN_GRAD_SUITE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "fsn/gradcheck.hpp"

namespace fsn {

struct GradSuiteOptions {
  int seeds = 20;
  std::uint64_t base_seed = 0;
  // the first `full_seeds` seeds check every coordinate; later seeds check at most
  // `max_coords` per tensor of the larger cases
  int full_seeds = 1;
  std::size_t max_coords = 32;
};

/// Names of the checks run by run_grad_suite, in order.
const std::vector<std::string>& grad_case_names();

/// Runs one named check for one seed and folds the result into `report`.
/// `full` forces every coordinate to be checked.
void run_grad_case(const std::string& name, std::uint64_t seed, bool full,
                   const GradSuiteOptions& opt, GradReport& report);

GradReport run_grad_suite(const GradSuiteOptions& opt = {});

}  // namespace fsn

#endif  // FSN_GRAD_SUITE_HPP_
