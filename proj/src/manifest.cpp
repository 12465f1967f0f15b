#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "ufcn/data.hpp"

namespace ufcn {

namespace {

using nlohmann::json;

constexpr int kManifestVersion = 1;

ManifestRecord parse_record(const json& j, std::size_t index) {
  const std::string where = "manifest record " + std::to_string(index);
  if (!j.is_object()) throw LoadError(where + " is not an object");
  static const std::set<std::string> known{"id", "split", "current", "prior", "label", "mask", "lesion_kind"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw LoadError(where + ": unknown field '" + key + "'");
  }
  for (const char* req : {"id", "split", "current", "prior", "label"}) {
    if (!j.contains(req)) throw LoadError(where + ": missing field '" + std::string(req) + "'");
  }
  ManifestRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.split = split_from_string(j.at("split").get<std::string>());
    r.current_path = j.at("current").get<std::string>();
    r.prior_path = j.at("prior").get<std::string>();
    r.label = j.at("label").get<int>();
    if (j.contains("mask") && !j.at("mask").is_null()) r.mask_path = j.at("mask").get<std::string>();
    if (j.contains("lesion_kind")) r.lesion_kind = lesion_kind_from_string(j.at("lesion_kind").get<std::string>());
  } catch (const json::exception& e) {
    throw LoadError(where + ": " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(where + ": " + e.what());
  }
  if (r.id.empty()) throw LoadError(where + ": empty id");
  if (r.label != 0 && r.label != 1) throw LoadError(where + " ('" + r.id + "'): label must be 0 or 1");
  if (r.label == 0 && r.lesion_kind != LesionKind::None) {
    throw LoadError(where + " ('" + r.id + "'): normal record with a lesion kind");
  }
  return r;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw LoadError("malformed manifest '" + path + "': " + e.what());
  }
  if (!doc.is_object() || !doc.contains("records") || !doc["records"].is_array()) {
    throw LoadError("manifest '" + path + "' must be an object with a 'records' array");
  }
  if (doc.value("version", kManifestVersion) != kManifestVersion) {
    throw LoadError("manifest '" + path + "' has unsupported version");
  }

  DatasetManifest m;
  m.root = fs::path(path).parent_path();
  std::set<std::string> ids;
  const auto& recs = doc["records"];
  for (std::size_t i = 0; i < recs.size(); ++i) {
    ManifestRecord r = parse_record(recs[i], i);
    if (!ids.insert(r.id).second) throw LoadError("duplicate id '" + r.id + "' in manifest");
    for (const std::string* p : {&r.current_path, &r.prior_path}) {
      if (!fs::exists(m.root / *p)) throw LoadError("record '" + r.id + "': missing file '" + (m.root / *p).string() + "'");
    }
    if (r.mask_path && !fs::exists(m.root / *r.mask_path)) {
      throw LoadError("record '" + r.id + "': missing mask '" + (m.root / *r.mask_path).string() + "'");
    }
    if (r.label == 1 && !r.mask_path && r.split != Split::Train) {
      m.warnings.push_back("record '" + r.id + "' is cancer in the " + to_string(r.split) +
                           " split but has no mask; it cannot be scored");
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  json recs = json::array();
  for (const auto& r : manifest.records) {
    json j{{"id", r.id},
           {"split", to_string(r.split)},
           {"current", r.current_path},
           {"prior", r.prior_path},
           {"label", r.label},
           {"lesion_kind", to_string(r.lesion_kind)}};
    j["mask"] = r.mask_path ? json(*r.mask_path) : json(nullptr);
    recs.push_back(std::move(j));
  }
  json doc{{"version", kManifestVersion}, {"records", std::move(recs)}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest '" + path + "'");
  out << doc.dump(2) << '\n';
}

}  // namespace ufcn
