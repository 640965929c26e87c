#include "backlink/backlink.h"

#include <fstream>
#include <sstream>
#include <string>

#include "config.hpp"
#include "experiments.hpp"

using nlohmann::json;

struct bl_experiment {
  // Overrides edit the document; it is parsed afresh for every run so that
  // mode-dependent defaults resolve the same way as in a file.
  json doc;
  std::string warnings;
  std::string summary = "{}";
  std::string out_dir;
};

namespace {

thread_local std::string last_error;

bl_status status_of(const backlink::Error& e) {
  switch (e.kind()) {
    case backlink::ErrorKind::Io:
      return BL_ERR_IO;
    case backlink::ErrorKind::Verification:
    case backlink::ErrorKind::Scheduling:
      return BL_ERR_VERIFICATION;
    default:
      return BL_ERR_VALIDATION;
  }
}

template <typename F>
bl_status guarded(F&& f) {
  last_error.clear();
  try {
    return f();
  } catch (const backlink::Error& e) {
    last_error = e.what();
    return status_of(e);
  } catch (const json::exception& e) {
    last_error = std::string("config: ") + e.what();
    return BL_ERR_VALIDATION;
  } catch (const std::exception& e) {
    last_error = e.what();
    return BL_ERR_VALIDATION;
  }
}

bl_status null_handle() {
  last_error = "null experiment handle";
  return BL_ERR_VALIDATION;
}

bl_status create(json doc, bl_experiment** out) {
  if (!out) {
    last_error = "null output pointer";
    return BL_ERR_VALIDATION;
  }
  *out = nullptr;
  backlink::parse_config(doc);  // fail early on a malformed config
  *out = new bl_experiment;
  (*out)->doc = std::move(doc);
  return BL_OK;
}

json& section(json& doc, const char* key) {
  if (!doc.contains(key)) doc[key] = json::object();
  return doc[key];
}

using Command = backlink::CommandResult (*)(backlink::ExperimentConfig);

bl_status run(bl_experiment* exp, Command cmd, bool pipeline) {
  if (!exp) return null_handle();
  return guarded([&] {
    json doc = exp->doc;
    if (pipeline) section(doc, "execution")["mode"] = "pipeline";
    backlink::ExperimentConfig c = backlink::parse_config(doc);
    exp->out_dir = backlink::resolve_out_dir(c);
    exp->warnings.clear();
    exp->summary = "{}";
    const auto r = cmd(std::move(c));
    for (const auto& w : r.warnings) exp->warnings += w + "\n";
    exp->summary = r.summary.dump();
    if (r.status != 0) last_error = "verification failed; see " + exp->out_dir;
    return static_cast<bl_status>(r.status);
  });
}

}  // namespace

extern "C" {

const char* bl_version(void) { return "0.1.0"; }

const char* bl_last_error(void) { return last_error.c_str(); }

bl_status bl_experiment_from_file(const char* path, bl_experiment** out) {
  return guarded([&] {
    if (!path) throw backlink::ConfigError("null config path");
    std::ifstream in(path);
    if (!in) throw backlink::IoError(std::string("cannot open config '") + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    json doc;
    try {
      doc = json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw backlink::ConfigError(std::string("config '") + path + "' is not valid JSON: " + e.what());
    }
    return create(std::move(doc), out);
  });
}

bl_status bl_experiment_from_string(const char* text, bl_experiment** out) {
  return guarded([&] {
    if (!text) throw backlink::ConfigError("null config text");
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw backlink::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return create(std::move(doc), out);
  });
}

void bl_experiment_destroy(bl_experiment* exp) { delete exp; }

bl_status bl_set_seed(bl_experiment* exp, uint64_t seed) {
  if (!exp) return null_handle();
  exp->doc["seed"] = seed;
  return BL_OK;
}

bl_status bl_set_seeds(bl_experiment* exp, size_t seeds) {
  if (!exp) return null_handle();
  if (seeds == 0) {
    last_error = "seeds must be at least 1";
    return BL_ERR_VALIDATION;
  }
  exp->doc["seeds"] = seeds;
  return BL_OK;
}

bl_status bl_set_out_dir(bl_experiment* exp, const char* dir) {
  if (!exp) return null_handle();
  if (!dir || !*dir) {
    last_error = "output directory must not be empty";
    return BL_ERR_VALIDATION;
  }
  section(exp->doc, "output")["dir"] = dir;
  return BL_OK;
}

bl_status bl_set_mode(bl_experiment* exp, const char* mode) {
  if (!exp) return null_handle();
  return guarded([&] {
    backlink::exec_mode_from_name(mode ? mode : "");
    section(exp->doc, "execution")["mode"] = mode;
    return BL_OK;
  });
}

bl_status bl_set_staleness(bl_experiment* exp, size_t staleness) {
  if (!exp) return null_handle();
  if (staleness > 1) {
    last_error = "staleness must be 0 or 1";
    return BL_ERR_VALIDATION;
  }
  section(exp->doc, "execution")["staleness"] = staleness;
  return BL_OK;
}

bl_status bl_set_precision(bl_experiment* exp, const char* precision) {
  if (!exp) return null_handle();
  return guarded([&] {
    backlink::precision_from_name(precision ? precision : "");
    exp->doc["precision"] = precision;
    return BL_OK;
  });
}

const char* bl_warnings(const bl_experiment* exp) { return exp ? exp->warnings.c_str() : ""; }
const char* bl_summary(const bl_experiment* exp) { return exp ? exp->summary.c_str() : "{}"; }
const char* bl_out_dir(const bl_experiment* exp) { return exp ? exp->out_dir.c_str() : ""; }

bl_status bl_run_train(bl_experiment* exp) { return run(exp, backlink::cmd_train, false); }
bl_status bl_run_gradcheck(bl_experiment* exp) { return run(exp, backlink::cmd_gradcheck, false); }
bl_status bl_run_costmodel(bl_experiment* exp) { return run(exp, backlink::cmd_costmodel, false); }
bl_status bl_run_pipesim(bl_experiment* exp) { return run(exp, backlink::cmd_pipesim, true); }

}  // extern "C"
