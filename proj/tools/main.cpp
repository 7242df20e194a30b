#include "app/commands.hpp"

int main(int argc, char** argv) { return rlab::cli::run_cli(argc, argv); }
