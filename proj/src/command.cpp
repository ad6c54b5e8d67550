#include "whalesift/command.hpp"

#include <cstdlib>

#include <sys/wait.h>

namespace whalesift {

std::string shell_quote(const std::string& value) {
    std::string out = "'";
    for (char c : value) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    out += '\'';
    return out;
}

std::string expand_command(const std::string& tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const std::size_t open = tmpl.find('{', pos);
        if (open == std::string::npos) {
            out.append(tmpl, pos);
            break;
        }
        const std::size_t close = tmpl.find('}', open);
        if (close == std::string::npos) throw CommandError("unterminated placeholder in command template: " + tmpl);
        out.append(tmpl, pos, open - pos);
        const std::string name = tmpl.substr(open + 1, close - open - 1);
        const auto it = vars.find(name);
        if (it == vars.end()) throw CommandError("unknown placeholder {" + name + "} in command template");
        out += shell_quote(it->second);
        pos = close + 1;
    }
    return out;
}

int run_command(const std::string& command) {
    const int status = std::system(command.c_str());
    if (status == -1) throw CommandError("could not start shell for: " + command);
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
    return status;
}

}  // namespace whalesift
