#include "schemaflow/json_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "schemaflow/error.hpp"

namespace schemaflow {

namespace {

struct Frame {
  bool is_object = false;
  std::set<std::string> keys;
  std::string last_key;
};

}  // namespace

Json parse_json(std::string_view text, std::vector<std::string>* duplicates) {
  std::vector<Frame> stack;
  auto callback = [&](int /*depth*/, Json::parse_event_t event, Json& parsed) {
    switch (event) {
      case Json::parse_event_t::object_start:
        stack.push_back(Frame{true, {}, {}});
        break;
      case Json::parse_event_t::array_start:
        stack.push_back(Frame{false, {}, {}});
        break;
      case Json::parse_event_t::object_end:
      case Json::parse_event_t::array_end:
        if (!stack.empty()) stack.pop_back();
        break;
      case Json::parse_event_t::key: {
        if (stack.empty()) break;
        auto& top = stack.back();
        auto key = parsed.get<std::string>();
        if (!top.keys.insert(key).second && duplicates != nullptr) {
          std::string parent = stack.size() >= 2 ? stack[stack.size() - 2].last_key : std::string{};
          duplicates->push_back(parent.empty() ? key : parent + "." + key);
        }
        top.last_key = key;
        break;
      }
      case Json::parse_event_t::value:
        break;
    }
    return true;
  };
  try {
    return Json::parse(text.begin(), text.end(), callback);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, "document", e.what());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, path.string(), "cannot open for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, path.string(), "cannot open for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::vector<std::filesystem::path> list_json_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::Io, dir.string(), "not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace schemaflow
