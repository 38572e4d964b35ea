#include "tiltlab/harness.hpp"

int main(int argc, char** argv) { return tiltlab::harness::run_cli(argc, argv); }
