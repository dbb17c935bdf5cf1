#pragma once

#include <stdexcept>
#include <string>

namespace mtgp {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed call: dimension mismatch, empty input, bad configuration value.
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Invalid hyperparameter: non-positive length scale, missing NN bias, ...
class ParameterError : public Error {
public:
    using Error::Error;
};

// Cross-covariance requested for a kernel pairing with no closed form.
class UnsupportedPairError : public Error {
public:
    using Error::Error;
};

// Factorization failed even at the maximum jitter level.
class IllConditionedError : public Error {
public:
    IllConditionedError(const std::string& msg, double final_jitter)
        : Error(msg), final_jitter_(final_jitter) {}
    double final_jitter() const { return final_jitter_; }

private:
    double final_jitter_;
};

// Metric evaluated outside its domain (e.g. NLP with non-positive variance).
class MetricError : public Error {
public:
    using Error::Error;
};

// File ingestion / serialization failure.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace mtgp
