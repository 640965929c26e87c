#include "records.hpp"

#include <charconv>

#include "error.hpp"

namespace backlink {

using nlohmann::json;

const std::vector<std::pair<std::string, std::vector<FieldSpec>>>& record_schemas() {
  using K = FieldKind;
  static const std::vector<std::pair<std::string, std::vector<FieldSpec>>> schemas{
      {"run_header",
       {{"command", K::String}, {"seed", K::UInt}, {"mode", K::String}, {"precision", K::String},
        {"network", K::String}, {"modules", K::UInt}, {"length", K::UInt}, {"alpha", K::Fraction},
        {"classifier", K::String}, {"staleness", K::UInt}}},
      {"epoch",
       {{"seed", K::UInt}, {"epoch", K::UInt}, {"lr", K::Number}, {"module_loss", K::NumberArray},
        {"module_accuracy", K::FractionArray}, {"test_accuracy", K::Fraction}}},
      {"run_summary", {{"seed", K::UInt}, {"epochs", K::UInt}, {"final_test_accuracy", K::Fraction}}},
      {"aggregate",
       {{"seeds", K::UIntArray}, {"per_seed", K::FractionArray}, {"final_test_accuracy_mean", K::Fraction},
        {"final_test_accuracy_std", K::Number}}},
      {"check",
       {{"name", K::String}, {"max_error", K::Number}, {"tolerance", K::Number}, {"passed", K::Bool},
        {"detail", K::String}}},
      {"gradcheck_summary", {{"passed", K::Bool}, {"checks", K::UInt}, {"failed", K::UInt}}},
      {"cost_row",
       {{"K", K::UInt}, {"l", K::UInt}, {"mode", K::String}, {"peak_memory", K::Number},
        {"backbone_peak", K::Number}, {"relative_memory", K::Number}, {"critical_path", K::Number},
        {"relative_runtime", K::Number}, {"speedup", K::Number}, {"steady_state_speedup", K::Number}}},
      {"trace_event",
       {{"worker", K::UInt}, {"batch", K::UInt}, {"phase", K::Phase}, {"start", K::Number}, {"end", K::Number},
        {"deps", K::UIntArray}}},
      {"pipesim_summary",
       {{"staleness", K::UInt}, {"batches", K::UInt}, {"critical_path", K::Number}, {"bp_path", K::Number},
        {"speedup", K::Number}, {"steady_state_speedup", K::Number}, {"sync_messages", K::UIntArray},
        {"sync_message_elements", K::UIntArray}, {"duplicate_divergence", K::Number},
        {"queue_conservation", K::Bool}, {"equivalence_checked", K::Bool}, {"equivalence_max_diff", K::Number},
        {"equivalence_passed", K::Bool}}},
  };
  return schemas;
}

namespace {

bool is_fraction(const json& v) { return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0; }

bool kind_ok(const json& v, FieldKind kind) {
  auto all = [&](auto pred) {
    if (!v.is_array()) return false;
    for (const auto& e : v)
      if (!pred(e)) return false;
    return true;
  };
  switch (kind) {
    case FieldKind::String: return v.is_string();
    case FieldKind::UInt: return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    case FieldKind::Number: return v.is_number();
    case FieldKind::Fraction: return is_fraction(v);
    case FieldKind::Bool: return v.is_boolean();
    case FieldKind::NumberArray: return all([](const json& e) { return e.is_number(); });
    case FieldKind::FractionArray: return all(is_fraction);
    case FieldKind::UIntArray: return all([](const json& e) { return e.is_number_unsigned(); });
    case FieldKind::Phase: {
      if (!v.is_string()) return false;
      const auto s = v.get<std::string>();
      return s == "fwd" || s == "bwd_local" || s == "bwd_global" || s == "sync" || s == "step";
    }
  }
  return false;
}

}  // namespace

void validate_record(const json& r) {
  if (!r.is_object()) throw VerificationError("record is not an object");
  if (!r.contains("record") || !r["record"].is_string()) throw VerificationError("record lacks a 'record' type");
  const std::string type = r["record"];
  if (!r.contains("schema_version") || r["schema_version"] != kRecordSchemaVersion)
    throw VerificationError(type + " record has a missing or unsupported schema_version");
  if (!r.contains("config_hash") || !r["config_hash"].is_string() || r["config_hash"].get<std::string>().size() != 16)
    throw VerificationError(type + " record lacks a 16-digit config_hash");
  for (const auto& [name, fields] : record_schemas()) {
    if (name != type) continue;
    for (const auto& f : fields) {
      if (!r.contains(f.name)) throw VerificationError(type + " record lacks field '" + f.name + "'");
      if (!kind_ok(r[f.name], f.kind)) throw VerificationError(type + " record field '" + f.name + "' has a bad value");
    }
    if (r.size() != fields.size() + 3) {
      for (auto it = r.begin(); it != r.end(); ++it) {
        const auto& k = it.key();
        bool known = k == "record" || k == "schema_version" || k == "config_hash";
        for (const auto& f : fields) known = known || f.name == k;
        if (!known) throw VerificationError(type + " record has unexpected field '" + k + "'");
      }
    }
    return;
  }
  throw VerificationError("unknown record type '" + type + "'");
}

json make_record(const std::string& type, const std::string& config_hash) {
  return json{{"record", type}, {"schema_version", kRecordSchemaVersion}, {"config_hash", config_hash}};
}

RecordWriter::RecordWriter(const std::string& path) : path_(path), out_(path) {
  if (!out_) throw IoError("cannot write '" + path + "'");
}

void RecordWriter::write(const json& record) {
  validate_record(record);
  out_ << record.dump() << '\n';
  out_.flush();
  if (!out_) throw IoError("write to '" + path_ + "' failed");
}

CsvWriter::CsvWriter(const std::string& path, std::vector<std::string> columns)
    : path_(path), out_(path), columns_(columns.size()) {
  if (!out_) throw IoError("cannot write '" + path + "'");
  row(columns);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) throw VerificationError("csv row width does not match the header");
  for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
  out_ << '\n';
  out_.flush();
  if (!out_) throw IoError("write to '" + path_ + "' failed");
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace backlink
