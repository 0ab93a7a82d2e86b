#ifndef STEERLAB_ERROR_HPP
#define STEERLAB_ERROR_HPP

#include <stdexcept>
#include <string>

namespace steerlab {

// Caller broke a precondition (bad dimensions, out-of-range index, invalid parameter).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Arithmetic produced a non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input document. Carries the offending field and line when known.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::string field = {}, long line = -1)
        : std::runtime_error(format(what, field, line)), field_(std::move(field)), line_(line) {}

    const std::string& field() const noexcept { return field_; }
    long line() const noexcept { return line_; }

private:
    static std::string format(const std::string& what, const std::string& field, long line) {
        std::string msg = what;
        if (!field.empty()) msg += " (field '" + field + "')";
        if (line >= 0) msg += " at line " + std::to_string(line);
        return msg;
    }

    std::string field_;
    long line_;
};

// A checked mathematical claim did not hold (alignment, exactness, soundness).
class VerificationFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define STEERLAB_REQUIRE(cond, msg)                                                 \
    do {                                                                            \
        if (!(cond)) throw ::steerlab::ContractViolation(std::string(msg));         \
    } while (0)

} // namespace steerlab

#endif // STEERLAB_ERROR_HPP
