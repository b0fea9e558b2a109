#pragma once

#include <stdexcept>
#include <string>

namespace degdit {

enum class ErrorKind {
    EmptyLabel,
    FrameCountMismatch,
    ShapeMismatch,
    EmptyCorpus,
    EmptyDataset,
    NonFiniteLoss,
    MissingCandidate,
    ConfigError,
    IoError,
    ParseError,
    InvalidTimeline,
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::EmptyLabel: return "EmptyLabel";
        case ErrorKind::FrameCountMismatch: return "FrameCountMismatch";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::EmptyCorpus: return "EmptyCorpus";
        case ErrorKind::EmptyDataset: return "EmptyDataset";
        case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorKind::MissingCandidate: return "MissingCandidate";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::InvalidTimeline: return "InvalidTimeline";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + what),
          kind_(kind) {}

    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

}  // namespace degdit
