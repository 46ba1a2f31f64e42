#include "viewmatch/cli.hpp"

int main(int argc, char** argv) { return viewmatch::cli::run(argc, argv); }
