// Protocol conformance stub. Speaks on stdin/stdout, or on a loopback TCP
// port with --tcp (serving one connection after another until a shutdown).

#include <unistd.h>

#include <cstdio>

#include <CLI11.hpp>

#include "lidattack/errors.hpp"
#include "lidattack/stub_server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Wire-protocol stub detector"};
  lidattack::StubOptions options;
  int port = -1;
  app.add_option("--name", options.name, "Detector name reported in the handshake");
  app.add_flag("--corrupt-ids", options.corrupt_ids, "Answer detect requests with the wrong id");
  app.add_flag("--silent", options.silent, "Never answer");
  app.add_option("--tcp", port, "Listen on this loopback port (0 picks one) instead of stdio");
  CLI11_PARSE(app, argc, argv);

  try {
    if (port < 0) {
      lidattack::wire::LineChannel channel(::dup(STDIN_FILENO), ::dup(STDOUT_FILENO));
      lidattack::serve_stub(channel, options);
      return 0;
    }
    lidattack::wire::TcpListener listener(static_cast<std::uint16_t>(port));
    std::printf("%u\n", listener.port());
    std::fflush(stdout);
    for (;;) {
      const int fd = listener.accept_fd();
      lidattack::wire::LineChannel channel(fd, fd);
      if (lidattack::serve_stub(channel, options).shutdown) return 0;
    }
  } catch (const lidattack::Error& e) {
    std::fprintf(stderr, "stub: %s\n", e.what());
    return 1;
  }
}
