#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace schemaflow::cli {

// Tasks of the default transfer suite: three domains, two tasks each.
inline const std::vector<std::string> kTransferTasks = {
    "book_doctor_appointment", "followup_doctor_appointment", "hotel_reserve",
    "hotel_service_request",   "ride_book",                   "ride_status",
};

struct ModelOptions {
  int dim = 256;
  int window = 5;
  double temperature = 1.0;
  bool no_schema = false;
  bool freeze_nodes = false;
  std::uint32_t buckets = 1u << 18;
  double lr = 0.01;
  int epochs = 5;
  int batch = 32;
  double l2 = 0.0;
  bool mask_train = false;
  bool no_mask_test = false;
};

struct Options {
  std::string data_dir;
  std::string config_file;
  unsigned jobs = 1;

  std::vector<std::string> schema_files;

  std::string kb_table;
  std::vector<std::string> where;
  std::string constraints_json;
  std::uint64_t kb_seed = 0;

  std::string chat_schema;
  std::vector<std::string> chat_multi;
  std::uint64_t chat_seed = 0;
  std::string transcript;

  std::int64_t n = 0;
  std::uint64_t seed = 0;
  double happy_ratio = 2688.0 / 4152.0;
  double multi_ratio = 0.0;
  int max_tasks = 3;
  double revisit_ratio = 0.3;
  int max_perturbations = 2;
  std::vector<std::string> tasks;
  std::vector<std::string> kinds;
  std::string out;

  std::string corpus;
  std::string stage = "unhappy";
  std::string model_path;
  double val_frac = 0.0;
  ModelOptions model;

  bool overwrite = false;

  std::vector<int> windows = {1, 2, 3, 5, 8};
  std::int64_t probe_n = 600;
  std::int64_t transfer_n = 2000;
  int distance = 1;
  int per_dialog = 3;
  std::string transfer_kind = "task";
  int seeds = 1;
  bool no_generation = false;

  std::string report;
};

// Builds the command tree bound to `opts`.
std::unique_ptr<CLI::App> build_app(Options& opts);

// Runs one invocation; `args` excludes the program name. Returns the exit
// code: 0 success, 1 validation failure, 2 configuration error.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace schemaflow::cli
