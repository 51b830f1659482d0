#include <mcadot/cli.hpp>

int main(int argc, char** argv) { return mcadot::cli::run_cli(argc, argv); }
