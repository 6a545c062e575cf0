#include "stepfill/cli.hpp"

int main(int argc, char** argv) { return stepfill::run_cli(argc, argv); }
