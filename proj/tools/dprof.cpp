#include "dprof/cli.hpp"

int main(int argc, char** argv) { return dprof::cli::dispatch(argc, argv); }
