#include "tada/harness.hpp"

int main(int argc, char** argv) { return tada::cli_main(argc, argv); }
