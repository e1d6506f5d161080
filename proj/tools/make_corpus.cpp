// Writes the synthetic sample corpus: make_corpus OUT [BYTES] [SEED]

#include <cstdlib>
#include <iostream>

#include "entlab/corpus.hpp"
#include "entlab/errors.hpp"
#include "entlab/io_util.hpp"

int main(int argc, char** argv) {
  if (argc < 2 || argc > 4) {
    std::cerr << "usage: make_corpus OUT [BYTES] [SEED]\n";
    return 1;
  }
  const std::size_t bytes = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 1 << 20;
  const std::uint64_t seed = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 2024;
  try {
    entlab::write_file_atomic(argv[1], entlab::make_sample_corpus(bytes, seed));
  } catch (const entlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
