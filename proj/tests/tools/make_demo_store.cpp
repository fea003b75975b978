// Regenerates the committed demo replay store. Run after changing prompt
// wording, fixtures, or the canned responses, then commit the result:
//   make_demo_store [output-path]

#include <iostream>

#include "../support/demo_config.hpp"
#include "../support/fixtures.hpp"

int main(int argc, char** argv) {
    std::string out = argc > 1 ? argv[1]
                               : testsupport::source_dir() + "/data/replay/demo_store.jsonl";
    try {
        testsupport::write_demo_store(testsupport::fixture_data_dir(), out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cout << "wrote " << out << "\n";
    return 0;
}
