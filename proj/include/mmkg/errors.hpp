#pragma once

#include <stdexcept>
#include <string>

namespace mmkg {

// Root of every error raised by the toolkit. Loaders and builders either
// return a fully valid object or throw one of these.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define MMKG_DEFINE_ERROR(Name)                     \
    class Name : public Error {                     \
    public:                                         \
        explicit Name(const std::string& what)      \
            : Error(std::string(#Name ": ") + what) \
        {                                           \
        }                                           \
    }

MMKG_DEFINE_ERROR(SchemaError);
MMKG_DEFINE_ERROR(ReferenceError);
MMKG_DEFINE_ERROR(DimensionError);
MMKG_DEFINE_ERROR(RatioError);
MMKG_DEFINE_ERROR(BatchTooSmall);
MMKG_DEFINE_ERROR(DivergenceError);
MMKG_DEFINE_ERROR(StepOutOfRange);
MMKG_DEFINE_ERROR(ShapeError);
MMKG_DEFINE_ERROR(LengthError);
MMKG_DEFINE_ERROR(UnknownTokenId);
MMKG_DEFINE_ERROR(EmptyMemory);
MMKG_DEFINE_ERROR(EmptyCorpus);
MMKG_DEFINE_ERROR(CorpusTooSmall);
MMKG_DEFINE_ERROR(AlignmentError);
MMKG_DEFINE_ERROR(ConfigError);

#undef MMKG_DEFINE_ERROR

} // namespace mmkg
