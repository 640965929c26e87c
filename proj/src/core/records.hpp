#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace backlink {

inline constexpr int kRecordSchemaVersion = 1;

enum class FieldKind { String, UInt, Number, Fraction, Bool, NumberArray, FractionArray, UIntArray, Phase };

struct FieldSpec {
  std::string name;
  FieldKind kind;
};

// Fields of each record type beyond the common ones
// (record, schema_version, config_hash).
const std::vector<std::pair<std::string, std::vector<FieldSpec>>>& record_schemas();

// Throws VerificationError naming the first violation.
void validate_record(const nlohmann::json& record);

// Starts a record with the common fields.
nlohmann::json make_record(const std::string& type, const std::string& config_hash);

// Line-delimited records; every record is validated before it is written.
class RecordWriter {
 public:
  explicit RecordWriter(const std::string& path);
  void write(const nlohmann::json& record);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

class CsvWriter {
 public:
  CsvWriter(const std::string& path, std::vector<std::string> columns);
  void row(const std::vector<std::string>& cells);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::size_t columns_;
};

// Shortest text that reads back to the same double.
std::string format_number(double v);

}  // namespace backlink
