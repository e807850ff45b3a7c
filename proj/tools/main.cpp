#include <csignal>
#include <iostream>
#include <vector>

#include "biseq/cli.hpp"

namespace {

void handle_sigint(int) { biseq::request_cancel(); }

} // namespace

int main(int argc, char** argv) {
    biseq::cancel_flag();
    std::signal(SIGINT, handle_sigint);
    std::vector<std::string> args(argv + 1, argv + argc);
    return biseq::run(std::move(args), std::cout, std::cerr);
}
