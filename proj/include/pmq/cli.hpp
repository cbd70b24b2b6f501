#pragma once

namespace pmq::cli {

// Full command-line dispatcher; returns the process exit code.
int run(int argc, char** argv);

}  // namespace pmq::cli
