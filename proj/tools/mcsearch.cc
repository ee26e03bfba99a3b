#include "mcsearch/cli.h"

int main(int argc, char** argv) { return mcsearch::run_cli(argc, argv); }
