// Writes the synthetic corpus as train/val/test CoNLL files into a directory.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "../synthetic.h"

int main(int argc, char **argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: make_synthetic DIR [train val test seed]\n");
    return 2;
  }
  const std::string dir = argv[1];
  auto arg = [&](int i, unsigned long fallback) {
    return argc > i ? std::strtoul(argv[i], nullptr, 10) : fallback;
  };
  const auto s = nsd::synthetic::splits(arg(2, 400), arg(3, 120), arg(4, 120), arg(5, 1));
  std::filesystem::create_directories(dir);
  nsd::write_conll_file(dir + "/train.conll", s.train.utterances);
  nsd::write_conll_file(dir + "/val.conll", s.val.utterances);
  nsd::write_conll_file(dir + "/test.conll", s.test.utterances);
  return 0;
}
