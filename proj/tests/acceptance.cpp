// Acceptance suite: one pass/fail line per criterion. Filled in below as the
// modules land; exits nonzero when any criterion fails.
#include <cstdio>

int main() {
  std::printf("acceptance suite placeholder\n");
  return 0;
}
