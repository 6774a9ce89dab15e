#include "docmamba/params.hpp"

namespace docmamba {

std::string_view family_name(ParamFamily family) {
  switch (family) {
    case ParamFamily::a_log: return "a_log";
    case ParamFamily::skip: return "skip";
    case ParamFamily::conv: return "conv";
    case ParamFamily::projection: return "projection";
    case ParamFamily::bias: return "bias";
    case ParamFamily::table: return "table";
    case ParamFamily::norm: return "norm";
    case ParamFamily::head: return "head";
  }
  return "unknown";
}

}  // namespace docmamba
