#pragma once

namespace latentmark {

// exit codes: 0 ok, 1 usage, 2 runtime error, 3 failed check
int cli_main(int argc, const char* const* argv);

}  // namespace latentmark
