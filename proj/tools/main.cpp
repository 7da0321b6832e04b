#include "cli.hpp"

int main(int argc, char** argv) { return busdensity::cli::run(argc, argv); }
