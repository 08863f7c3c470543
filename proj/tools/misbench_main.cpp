#include "misbench/cli.hpp"

int main(int argc, char** argv) { return misbench::cli(argc, argv); }
