#include "cli_app.hpp"

int main(int argc, char** argv) { return tsgan::cli::run_cli(argc, argv); }
