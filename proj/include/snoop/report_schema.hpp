#pragma once

#include <string>
#include <string_view>

#include <rapidjson/document.h>
#include <rapidjson/error/en.h>
#include <rapidjson/schema.h>
#include <rapidjson/stringbuffer.h>

#include "snoop/experiment.hpp"
#include "snoop/report_schema_text.hpp"

namespace snoop {

// Empty string when the document conforms; otherwise a one-line reason.
inline std::string report_schema_errors(std::string_view json_text) {
  rapidjson::Document schema_doc;
  schema_doc.Parse(kReportSchemaText);
  if (schema_doc.HasParseError()) return "embedded schema does not parse";
  rapidjson::SchemaDocument schema(schema_doc);

  rapidjson::Document doc;
  doc.Parse(json_text.data(), json_text.size());
  if (doc.HasParseError())
    return std::string("parse error at offset ") + std::to_string(doc.GetErrorOffset()) + ": " +
           rapidjson::GetParseError_En(doc.GetParseError());
  rapidjson::SchemaValidator validator(schema);
  if (doc.Accept(validator)) return {};
  rapidjson::StringBuffer where, rule;
  validator.GetInvalidDocumentPointer().StringifyUriFragment(where);
  validator.GetInvalidSchemaPointer().StringifyUriFragment(rule);
  return std::string("document ") + where.GetString() + " violates " + rule.GetString() + " (" +
         validator.GetInvalidSchemaKeyword() + ")";
}

// Schema conformance plus the recomputation and reference checks.
inline ComparisonReport validate_report(std::string_view json_text) {
  if (auto why = report_schema_errors(json_text); !why.empty()) throw error(errc::format, "report schema: " + why);
  return report_from_json(nlohmann::json::parse(json_text));
}

}  // namespace snoop
