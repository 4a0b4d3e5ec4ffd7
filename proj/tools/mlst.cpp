#include "mlst/cli/run.hpp"

int main(int argc, char** argv) { return mlst::cli::run(argc, argv); }
