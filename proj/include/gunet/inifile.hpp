// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` config files with [section] headers, `#`/`;` comments.
// Order-preserving so emitted files diff cleanly.

#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gunet/core.hpp"

namespace gunet {

class IniDoc {
public:
    struct Section {
        std::string name;
        std::vector<std::pair<std::string, std::string>> entries;
    };

    static IniDoc parse(std::istream& in, const std::string& origin = "<stream>") {
        IniDoc doc;
        std::string line;
        int lineno = 0;
        Section* cur = nullptr;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = trim(line);
            if (s.empty() || s[0] == '#' || s[0] == ';') continue;
            if (s.front() == '[') {
                if (s.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) +
                                      ": malformed section header");
                cur = &doc.section(trim(s.substr(1, s.size() - 2)));
                continue;
            }
            const auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value'");
            if (!cur) cur = &doc.section("");
            cur->entries.emplace_back(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
        }
        return doc;
    }

    static IniDoc parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file '" + path + "'");
        return parse(in, path);
    }

    Section& section(const std::string& name) {
        for (auto& s : sections_)
            if (s.name == name) return s;
        sections_.push_back({name, {}});
        return sections_.back();
    }
    const Section* find_section(const std::string& name) const {
        for (const auto& s : sections_)
            if (s.name == name) return &s;
        return nullptr;
    }

    const std::string* find(const std::string& section, const std::string& key) const {
        const Section* s = find_section(section);
        if (!s) return nullptr;
        for (const auto& [k, v] : s->entries)
            if (k == key) return &v;
        return nullptr;
    }

    void set(const std::string& sec, const std::string& key, const std::string& value) {
        auto& s = section(sec);
        for (auto& [k, v] : s.entries)
            if (k == key) {
                v = value;
                return;
            }
        s.entries.emplace_back(key, value);
    }

    std::string emit() const {
        std::ostringstream out;
        bool first = true;
        for (const auto& s : sections_) {
            if (!first) out << "\n";
            first = false;
            if (!s.name.empty()) out << "[" << s.name << "]\n";
            for (const auto& [k, v] : s.entries) out << k << " = " << v << "\n";
        }
        return out.str();
    }

    const std::vector<Section>& sections() const { return sections_; }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        std::size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? "" : s.substr(a, b - a + 1);
    }

    std::vector<Section> sections_;
};

}  // namespace gunet
