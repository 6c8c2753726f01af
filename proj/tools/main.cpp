#include "stochsol/cli.hpp"

int main(int argc, char** argv) { return stochsol::main_entry(argc, argv); }
