#include "thor/cli.hpp"

int main(int argc, char** argv) { return thor::cli::dispatch(argc, argv); }
