// Writes the test trace fixtures as span files for the command-line tests.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fixtures.hpp"

int main(int argc, char** argv) {
  CLI::App app{"palette test fixture generator"};
  std::string kind, out;
  std::size_t n = 1;
  std::uint64_t seed = 7;
  app.add_option("kind", kind)->required()->check(CLI::IsMember({"example", "two-caller", "random"}));
  app.add_option("out", out)->required();
  app.add_option("--n", n, "Scale (example), traces per caller (two-caller) or trace count (random)");
  app.add_option("--seed", seed);
  CLI11_PARSE(app, argc, argv);

  using namespace palette::fixtures;
  std::vector<palette::Span> spans;
  if (kind == "example") {
    spans = example_spans(n, seed);
  } else if (kind == "two-caller") {
    spans = two_caller_spans(n, seed);
  } else {
    spans = random_system_spans(20, n, seed);
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) {
    std::cerr << "cannot write " << out << '\n';
    return 2;
  }
  palette::write_spans(f, spans);
  return 0;
}
