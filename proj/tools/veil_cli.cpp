#include "commands.hpp"

int main(int argc, char** argv) { return veil::app::run_cli(argc, argv); }
