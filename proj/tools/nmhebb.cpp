#include "nmhebb/harness.hpp"

int main(int argc, char** argv) { return nmhebb::run_cli(argc, argv); }
