// Acceptance runner for ctest: one PASS/FAIL/SKIP line per criterion, then a
// JSON report next to the work directory. Exit status 0 iff nothing failed.

#include <fstream>
#include <iostream>
#include <string>

#include "rica/acceptance.hpp"

int main(int argc, char** argv) {
  rica::bench::AcceptanceOptions opt;
  std::string out;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--suite") {
      opt.suite = rica::bench::parse_suite(argv[i + 1]);
    } else if (flag == "--work-dir") {
      opt.work_dir = argv[i + 1];
    } else if (flag == "--out") {
      out = argv[i + 1];
    } else {
      std::cerr << "usage: rica_acceptance [--suite fast|full] [--work-dir DIR] [--out report.json]\n";
      return 2;
    }
  }
  opt.log = &std::cerr;  // progress on stderr, verdicts on stdout

  const auto report = rica::bench::run_acceptance(opt);
  std::cout << "acceptance suite: " << rica::bench::suite_name(report.suite) << '\n';
  for (const auto& c : report.criteria) std::cout << rica::bench::summary_line(c) << '\n';
  std::cout << (report.all_passed() ? "ALL RUN CRITERIA PASSED" : "SOME CRITERIA FAILED") << std::endl;
  if (!out.empty()) std::ofstream(out) << rica::bench::report_to_json(report) << '\n';
  return report.all_passed() ? 0 : 1;
}
