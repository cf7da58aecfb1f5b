#include "molr/cli.hpp"

int main(int argc, char** argv) { return molr::dispatch(argc, argv); }
