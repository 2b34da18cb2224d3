#include "qcpo/env.hpp"

#include <cstdio>

int main() {
    std::puts("qcpo: CLI not wired yet");
    return 1;
}
