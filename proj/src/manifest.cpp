#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "jmfuse/errors.hpp"
#include "jmfuse/volume.hpp"

namespace jmfuse {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) fields.push_back(cur);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

} // namespace

std::vector<SubjectRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();

    std::string line;
    if (!std::getline(in, line)) throw FormatError("manifest " + path + " is empty");
    if (strip_cr(line) != "subject_id,label,smri,field") {
        throw FormatError("manifest " + path + ": header must be `subject_id,label,smri,field`, got `" +
                          strip_cr(line) + "`");
    }

    std::vector<SubjectRecord> records;
    std::unordered_set<std::string> seen;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 4) {
            throw FormatError("manifest " + path + " line " + std::to_string(lineno) + ": expected 4 fields, got " +
                              std::to_string(f.size()));
        }
        SubjectRecord r;
        r.subject_id = f[0];
        if (r.subject_id.empty()) {
            throw ValidationError("manifest " + path + " line " + std::to_string(lineno) + ": empty subject_id");
        }
        if (!seen.insert(r.subject_id).second) {
            throw ValidationError("manifest " + path + ": duplicate subject_id `" + r.subject_id + "`");
        }
        if (f[1] == "0") {
            r.label = 0;
        } else if (f[1] == "1") {
            r.label = 1;
        } else {
            throw ValidationError("manifest " + path + " line " + std::to_string(lineno) + ": label `" + f[1] +
                                  "` outside {0,1}");
        }
        r.smri_path = (base / f[2]).string();
        r.field_path = (base / f[3]).string();
        records.push_back(std::move(r));
    }
    return records;
}

} // namespace jmfuse
