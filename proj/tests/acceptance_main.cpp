// Prints one line per acceptance criterion. Exit code 0 iff every criterion
// passes. `--expect-fail N` (repeatable) marks criterion N as a known failure:
// its FAIL line is still printed, and the exit code then requires that it
// does fail and that all others pass.
#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "hqinf/harness/acceptance.hpp"

int main(int argc, char** argv) {
  std::vector<int> expected;
  unsigned threads = 1;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--expect-fail" && i + 1 < argc) {
      expected.push_back(std::atoi(argv[++i]));
    } else if (a == "--threads" && i + 1 < argc) {
      threads = static_cast<unsigned>(std::max(1, std::atoi(argv[++i])));
    } else {
      std::cerr << "usage: hqinf_acceptance [--threads K] [--expect-fail N]...\n";
      return 2;
    }
  }
  std::vector<hqinf::harness::CriterionResult> results;
  const bool all = hqinf::harness::run_acceptance(std::cout, threads, &results);
  if (expected.empty()) return all ? 0 : 1;
  bool ok = true;
  for (const auto& r : results) {
    const bool known = std::find(expected.begin(), expected.end(), r.id) != expected.end();
    if (known && r.pass) std::cout << "criterion " << r.id << " was expected to fail but passed\n";
    ok = ok && (known ? !r.pass : r.pass);
  }
  std::cout << (all ? "all criteria pass" : "not all criteria pass") << "; exit status "
            << (ok ? "0 (only known failures)" : "1") << '\n';
  return ok ? 0 : 1;
}
