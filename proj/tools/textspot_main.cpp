#include "textspot/cli.hpp"

int main(int argc, char** argv) { return textspot::run(argc, argv); }
