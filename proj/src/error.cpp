#include "xaits/error.hpp"

namespace xaits {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kFormat: return "format_error";
    case ErrorKind::kParse: return "parse_error";
    case ErrorKind::kEmptyDataset: return "empty_dataset";
    case ErrorKind::kArgument: return "argument_error";
    case ErrorKind::kConfig: return "config_error";
    case ErrorKind::kShape: return "shape_error";
    case ErrorKind::kCapability: return "capability_error";
    case ErrorKind::kDivergence: return "divergence_error";
    case ErrorKind::kAlignment: return "alignment_error";
    case ErrorKind::kValidation: return "validation_error";
    case ErrorKind::kTimeout: return "timeout";
    case ErrorKind::kTransport: return "transport_error";
    case ErrorKind::kProtocol: return "protocol_error";
    case ErrorKind::kMalformedFrame: return "malformed_frame";
    case ErrorKind::kVersionMismatch: return "version_mismatch";
    case ErrorKind::kIncompleteRun: return "incomplete_run";
    case ErrorKind::kIo: return "io_error";
  }
  return "unknown_error";
}

}  // namespace xaits
