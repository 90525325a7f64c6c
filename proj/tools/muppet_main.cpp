#include <muppet/cli.hpp>

int main(int argc, char** argv) { return muppet::cli::run(argc, argv); }
