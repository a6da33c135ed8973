#pragma once

#include <stdexcept>
#include <string>

namespace gradcache {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// bad or inconsistent configuration (mismatched lengths, missing policy, ...)
struct ConfigError : Error {
    using Error::Error;
};

// incompatible tensor operands
struct ShapeError : Error {
    using Error::Error;
};

// scalar argument outside its documented range
struct DomainError : Error {
    using Error::Error;
};

// a callback or interceptor broke its contract (wrong shape, wrong step order)
struct ContractError : Error {
    using Error::Error;
};

// incomplete feature log / missing statistics for a requested step
struct StatsError : Error {
    using Error::Error;
};

// non-finite values entered the pipeline
struct NumericError : Error {
    using Error::Error;
};

enum class CacheFault {
    cold_cache,            // reuse requested before anything was stored
    reuse_limit,           // cached computation reused more often than allowed
    insufficient_history,  // gradient reuse needs two stored entries
    ordering,              // step indices must be strictly increasing
};

struct CacheError : Error {
    CacheFault fault;
    CacheError(CacheFault f, const std::string& msg) : Error(msg), fault(f) {}
};

}  // namespace gradcache
