#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace cltd {

/// Error carrying a short machine-readable code (e.g. "dimension_error").
/// The CLI maps codes to exit statuses; see is_numerical().
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& detail)
        : std::runtime_error(detail), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

    bool is_numerical() const noexcept {
        return code_ == "numerical_error" || code_ == "loss_error" ||
               code_ == "gradcheck_failed";
    }

private:
    std::string code_;
};

inline Error dimension_error(const std::string& what) { return {"dimension_error", what}; }
inline Error parameter_error(const std::string& what) { return {"parameter_error", what}; }
inline Error validation_error(const std::string& what) { return {"validation_error", what}; }
inline Error numerical_error(const std::string& what) { return {"numerical_error", what}; }
inline Error loss_error(const std::string& what) { return {"loss_error", what}; }
inline Error io_error(const std::string& what) { return {"io_error", what}; }

namespace log {

inline bool& quiet() {
    static bool q = false;
    return q;
}

inline void warn(const std::string& msg) {
    if (!quiet()) std::cerr << "[cltd] warn: " << msg << '\n';
}

inline void info(const std::string& msg) {
    if (!quiet()) std::cerr << "[cltd] " << msg << '\n';
}

}  // namespace log
}  // namespace cltd
