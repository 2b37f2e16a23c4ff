#include "patchspn/cli.hpp"

int main(int argc, char** argv) { return patchspn::run_cli(argc, argv); }
