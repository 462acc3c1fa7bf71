#pragma once

#include <stdexcept>
#include <string>

namespace ctmass {

// Base of all library errors. The CLI maps every subclass except
// NumericalError to the "data error" exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed file contents (bad header size, truncated payload, bad CSV).
class FormatError : public Error {
public:
    using Error::Error;
};

// Well-formed input that uses a feature outside the supported subset.
class UnsupportedError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

// Input that is valid in shape but carries no usable signal
// (no voxel above threshold, zero target variance, flat intensity range).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

// Non-finite gradients, solver non-convergence.
class NumericalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Call inside a catch block: rethrows the active exception as the same
// error category with `context` prefixed to its message.
[[noreturn]] inline void rethrow_with_context(const std::string& context)
{
    try {
        throw;
    } catch (const FormatError& e) {
        throw FormatError(context + e.what());
    } catch (const UnsupportedError& e) {
        throw UnsupportedError(context + e.what());
    } catch (const ArgumentError& e) {
        throw ArgumentError(context + e.what());
    } catch (const DegenerateInputError& e) {
        throw DegenerateInputError(context + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(context + e.what());
    } catch (const IoError& e) {
        throw IoError(context + e.what());
    } catch (const Error& e) {
        throw Error(context + e.what());
    }
}

} // namespace ctmass
