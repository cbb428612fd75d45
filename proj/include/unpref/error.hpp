#ifndef UNPREF_ERROR_HPP
#define UNPREF_ERROR_HPP

#include <stdexcept>
#include <string>
#include <utility>

namespace unpref {

/// Domain error carrying a stable machine-readable code.
///
/// The code is what the CLI prints on stderr (`error: <code>: <message>`);
/// the message is for humans.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

namespace errc {
inline constexpr const char* parse = "parse_error";
inline constexpr const char* invalid_argument = "invalid_argument";
inline constexpr const char* invalid_target = "invalid_target";
inline constexpr const char* empty_mesh = "empty_mesh";
inline constexpr const char* simplify_stalled = "simplify_stalled";
inline constexpr const char* capacity = "capacity_exceeded";
inline constexpr const char* degenerate_face = "degenerate_face";
inline constexpr const char* isolated_vertex = "isolated_vertex";
inline constexpr const char* invalid_bandwidth = "invalid_bandwidth";
inline constexpr const char* dimension_mismatch = "dimension_mismatch";
inline constexpr const char* non_finite = "non_finite";
inline constexpr const char* numeric_domain = "numeric_domain";
inline constexpr const char* not_spd = "not_spd";
inline constexpr const char* shape_mismatch = "shape_mismatch";
inline constexpr const char* stale_cache = "stale_cache";
inline constexpr const char* empty_population = "empty_population";
inline constexpr const char* io = "io_error";
} // namespace errc

} // namespace unpref

#endif // UNPREF_ERROR_HPP
