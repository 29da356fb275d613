#include <discourse/cli.hpp>

int main(int argc, char** argv) { return discourse::run_cli(argc, argv); }
