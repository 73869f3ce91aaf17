#include "perm/harness.hpp"

int main(int argc, char** argv) { return perm::cli_main(argc, argv); }
