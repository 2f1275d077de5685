#include <iostream>

#include "mets/cli.hpp"

int main(int argc, char** argv)
{
    return mets::run_cli(argc, argv, std::cout, std::cerr);
}
