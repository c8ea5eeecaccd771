#pragma once

// Command-line front end. Verbs: build-data, train, generate, eval,
// render-motion. Exit codes: 0 success, 2 usage error (bad flags, contract
// violations), 3 runtime failure (I/O, divergence, missing artifacts). The
// DUET_OUT environment variable supplies a default for the --out flags and is
// the only environment variable the tool reads.

namespace duet::cli {

int run(int argc, char** argv);

}  // namespace duet::cli
