#include "lvmae/pipeline.hpp"

int main(int argc, char** argv) { return lvmae::cli_main(argc, argv); }
