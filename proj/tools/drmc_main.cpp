#include <drmc/cli.hpp>

#include <iostream>

int main(int argc, char **argv)
{
	return drmc::cli::dispatch(argc, argv, std::cout, std::cerr);
}
