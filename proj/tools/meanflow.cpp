#include "meanflow/cli.hpp"

int main(int argc, char** argv) { return meanflow::cli::run(argc, argv); }
