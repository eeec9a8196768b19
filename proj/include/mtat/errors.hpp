// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mtat {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced or consumed by a numeric routine.
class NumericError : public Error {
public:
    using Error::Error;
};

/// API misuse (e.g. backward through an unrecorded value).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid model / run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace mtat
