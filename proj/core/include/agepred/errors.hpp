#pragma once
// Error taxonomy shared by the library and the CLI. Every error carries a
// stable machine-parsable name (printed on stderr by the CLI) and maps to one
// of three exit-code classes: 2 input error, 3 empty result, 4 numerics.

#include <stdexcept>
#include <string>
#include <utility>

namespace agepred {

enum class ErrorClass : int {
    Input = 2,
    EmptyResult = 3,
    Numerics = 4,
};

class Error : public std::runtime_error {
public:
    Error(std::string name, ErrorClass cls, const std::string& what)
        : std::runtime_error(what), name_(std::move(name)), cls_(cls) {}

    const std::string& name() const { return name_; }
    ErrorClass error_class() const { return cls_; }
    int exit_code() const { return static_cast<int>(cls_); }

private:
    std::string name_;
    ErrorClass cls_;
};

#define AGEPRED_ERROR(NAME, CLASS)                              \
    struct NAME : Error {                                       \
        explicit NAME(const std::string& what)                  \
            : Error(#NAME, ErrorClass::CLASS, what) {}          \
    }

AGEPRED_ERROR(ParseError, Input);
AGEPRED_ERROR(ValueError, Input);
AGEPRED_ERROR(DuplicateIdError, Input);
AGEPRED_ERROR(MetadataMismatchError, Input);
AGEPRED_ERROR(EmptyGeneSetError, EmptyResult);
AGEPRED_ERROR(ZeroLibraryError, Input);
AGEPRED_ERROR(ShapeError, Input);
AGEPRED_ERROR(TapeError, Input);
AGEPRED_ERROR(EmptyBatchError, Input);
AGEPRED_ERROR(LabelError, Input);
AGEPRED_ERROR(InvariantError, Input);
AGEPRED_ERROR(ConfigError, Input);
AGEPRED_ERROR(BatchError, Input);
AGEPRED_ERROR(DataLeakError, Input);
AGEPRED_ERROR(StratifyError, Input);
AGEPRED_ERROR(IoError, Input);
AGEPRED_ERROR(NumericsError, Numerics);
AGEPRED_ERROR(DegenerateCvError, Numerics);

#undef AGEPRED_ERROR

}  // namespace agepred
