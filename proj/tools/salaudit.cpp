#include "salaudit/pipeline.hpp"

int main(int argc, char** argv) { return salaudit::cli_run(argc, argv); }
