#pragma once

#include <stdexcept>
#include <string>

namespace defront {

// Base for every library error so callers can catch the whole family.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DegenerateInput : public Error { using Error::Error; };
class MissingLandmark : public Error { using Error::Error; };
class InvalidState : public Error { using Error::Error; };
class ShapeMismatch : public Error { using Error::Error; };
class UnknownTap : public Error { using Error::Error; };
class LabelOutOfRange : public Error { using Error::Error; };

class ParseError : public Error {
public:
    ParseError(const std::string& msg, int line)
        : Error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
    int line() const { return line_; }
private:
    int line_;
};

class MissingFile : public Error {
public:
    explicit MissingFile(const std::string& path)
        : Error("missing file: " + path), path_(path) {}
    const std::string& path() const { return path_; }
private:
    std::string path_;
};

class IOFailure : public Error { using Error::Error; };

// Detector client failures carry a retriable flag; timeouts and server
// errors can be retried, an auth failure cannot.
class DetectorError : public Error {
public:
    DetectorError(const std::string& msg, bool retriable)
        : Error(msg), retriable_(retriable) {}
    bool retriable() const { return retriable_; }
private:
    bool retriable_;
};
class Timeout : public DetectorError {
public:
    explicit Timeout(const std::string& msg) : DetectorError(msg, true) {}
};
class AuthFailure : public DetectorError {
public:
    explicit AuthFailure(const std::string& msg) : DetectorError(msg, false) {}
};
class DetectorMiss : public DetectorError {
public:
    explicit DetectorMiss(const std::string& msg) : DetectorError(msg, false) {}
};

class EmptyInput : public Error { using Error::Error; };
class InfeasibleTarget : public Error { using Error::Error; };
class ModelNotLoaded : public Error { using Error::Error; };
class PolicyUncalibrated : public Error { using Error::Error; };

class DataEmpty : public Error { using Error::Error; };
class NonFiniteLoss : public Error { using Error::Error; };
class CheckpointIOFailure : public Error { using Error::Error; };

class EmbeddingFailure : public Error { using Error::Error; };
class DuplicateGalleryIdentity : public Error { using Error::Error; };
class InvalidPoseLabel : public Error { using Error::Error; };
class MissingAnnotation : public Error { using Error::Error; };
class PipelineLoadFailure : public Error { using Error::Error; };

class ConfigInvalid : public Error { using Error::Error; };
class InputMissing : public Error { using Error::Error; };

}  // namespace defront
