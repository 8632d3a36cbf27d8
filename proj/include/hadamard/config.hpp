#pragma once

#include "hadamard/core.hpp"

#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace hadamard::config {

// Plain-text run configuration.
//
//   file    := line*
//   line    := blank | comment | section | entry
//   comment := '#' text
//   section := '[' name ']'
//   entry   := key '=' value          (inside a section; key is [A-Za-z0-9_]+)
//   list    := value (',' value)*
//
// Keys are addressed as "section.key". Surrounding whitespace is ignored when parsing. The canonical form
// (no indentation, "key = value", lists as "a, b, c") round-trips byte-identically through serialize().

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    // shortest representation that round-trips
    for (int p = 1; p <= 17; ++p) {
        std::ostringstream t;
        t.precision(p);
        t << v;
        if (std::stod(t.str()) == v) return t.str();
    }
    return os.str();
}

class Config {
public:
    struct Line {
        enum Kind { Blank, Comment, Section, Entry } kind = Blank;
        std::string text;  // comment text or section name
        std::string key, value;
    };

    static Config parse(const std::string& text, const std::string& source = "<string>") {
        Config c;
        c.source_ = source;
        std::istringstream in(text);
        std::string raw, section;
        int lineno = 0;
        while (std::getline(in, raw)) {
            ++lineno;
            const std::string t = trim(raw);
            const std::string where = source + ":" + std::to_string(lineno);
            Line l;
            if (t.empty()) {
                l.kind = Line::Blank;
            } else if (t[0] == '#') {
                l.kind = Line::Comment;
                l.text = t;
            } else if (t.front() == '[') {
                if (t.back() != ']') fail(ErrorCode::ConfigError, where + ": unterminated section header");
                section = trim(t.substr(1, t.size() - 2));
                if (!valid_name(section)) fail(ErrorCode::ConfigError, where + ": bad section name '" + section + "'");
                if (c.sections_.count(section)) fail(ErrorCode::ConfigError, where + ": duplicate section [" + section + "]");
                c.sections_.insert(section);
                l.kind = Line::Section;
                l.text = section;
            } else {
                const auto eq = t.find('=');
                if (eq == std::string::npos) fail(ErrorCode::ConfigError, where + ": expected 'key = value'");
                if (section.empty()) fail(ErrorCode::ConfigError, where + ": entry outside a section");
                l.kind = Line::Entry;
                l.key = trim(t.substr(0, eq));
                l.value = trim(t.substr(eq + 1));
                if (!valid_name(l.key)) fail(ErrorCode::ConfigError, where + ": bad key '" + l.key + "'");
                const std::string full = section + "." + l.key;
                if (c.index_.count(full)) fail(ErrorCode::ConfigError, where + ": duplicate key '" + full + "'");
                c.index_[full] = c.lines_.size();
            }
            c.lines_.push_back(l);
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path);
        if (!f) fail(ErrorCode::ConfigError, "cannot read config file '" + path + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str(), path);
    }

    std::string serialize() const {
        std::string out;
        for (const auto& l : lines_) {
            switch (l.kind) {
                case Line::Blank: break;
                case Line::Comment: out += l.text; break;
                case Line::Section: out += "[" + l.text + "]"; break;
                case Line::Entry: out += l.key + " = " + l.value; break;
            }
            out += "\n";
        }
        return out;
    }

    const std::string& source() const { return source_; }
    bool has(const std::string& key) const { return index_.count(key) > 0; }
    bool has_section(const std::string& s) const { return sections_.count(s) > 0; }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (const auto& [k, i] : index_) out.push_back(k);
        return out;
    }

    /// Sets an entry, appending the section or key when absent.
    void set(const std::string& key, const std::string& value) {
        auto it = index_.find(key);
        if (it != index_.end()) {
            lines_[it->second].value = value;
            return;
        }
        const auto dot = key.find('.');
        if (dot == std::string::npos) fail(ErrorCode::ConfigError, "key '" + key + "' needs a section");
        const std::string sec = key.substr(0, dot), k = key.substr(dot + 1);
        if (!valid_name(sec) || !valid_name(k)) fail(ErrorCode::ConfigError, "bad key '" + key + "'");
        Line l;
        l.kind = Line::Entry;
        l.key = k;
        l.value = value;
        if (!sections_.count(sec)) {
            if (!lines_.empty() && lines_.back().kind != Line::Blank) lines_.push_back({});
            lines_.push_back({Line::Section, sec, "", ""});
            sections_.insert(sec);
            index_[key] = lines_.size();
            lines_.push_back(l);
            return;
        }
        // after the last entry of the section
        std::size_t pos = 0;
        bool in = false;
        for (std::size_t i = 0; i < lines_.size(); ++i) {
            if (lines_[i].kind == Line::Section) in = lines_[i].text == sec;
            if (in && (lines_[i].kind == Line::Entry || lines_[i].kind == Line::Section)) pos = i + 1;
        }
        lines_.insert(lines_.begin() + static_cast<std::ptrdiff_t>(pos), l);
        for (auto& [kk, i] : index_)
            if (i >= pos) ++i;
        index_[key] = pos;
    }

    // ---- typed access; every getter marks the key as used ----

    const std::string& raw(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) fail(ErrorCode::ConfigError, "missing key '" + key + "' in " + source_);
        used_.insert(key);
        return lines_[it->second].value;
    }

    std::string get_string(const std::string& key) const {
        const std::string& v = raw(key);
        if (v.empty()) fail(ErrorCode::ConfigError, "key '" + key + "' is empty");
        return v;
    }

    std::string get_choice(const std::string& key, const std::vector<std::string>& allowed) const {
        std::string v = get_string(key);
        if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
            std::string list;
            for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
            fail(ErrorCode::ConfigError, "key '" + key + "' = '" + v + "' is not one of: " + list);
        }
        return v;
    }

    double get_double(const std::string& key, double lo = -std::numeric_limits<double>::infinity(),
                      double hi = std::numeric_limits<double>::infinity()) const {
        return check_range(key, to_double(key, raw(key)), lo, hi);
    }

    long long get_int(const std::string& key, long long lo = std::numeric_limits<long long>::min(),
                      long long hi = std::numeric_limits<long long>::max()) const {
        const std::string& v = raw(key);
        std::size_t pos = 0;
        long long x = 0;
        try {
            x = std::stoll(v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != v.size()) fail(ErrorCode::ConfigError, "key '" + key + "' = '" + v + "' is not an integer");
        if (x < lo || x > hi)
            fail(ErrorCode::ConfigError, "key '" + key + "' = " + v + " outside [" + std::to_string(lo) + ", " +
                                             std::to_string(hi) + "]");
        return x;
    }

    std::uint64_t get_u64(const std::string& key) const {
        const std::string& v = raw(key);
        std::size_t pos = 0;
        std::uint64_t x = 0;
        try {
            if (!v.empty() && v[0] != '-') x = std::stoull(v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != v.size())
            fail(ErrorCode::ConfigError, "key '" + key + "' = '" + v + "' is not an unsigned integer");
        return x;
    }

    bool get_bool(const std::string& key) const {
        const std::string v = get_choice(key, {"true", "false"});
        return v == "true";
    }

    std::vector<double> get_doubles(const std::string& key, std::size_t min_count = 1,
                                     std::size_t max_count = std::numeric_limits<std::size_t>::max(),
                                     double lo = -std::numeric_limits<double>::infinity(),
                                     double hi = std::numeric_limits<double>::infinity()) const {
        const std::string& v = raw(key);
        std::vector<double> out;
        if (!trim(v).empty())
            for (const auto& item : split_list(v)) out.push_back(check_range(key, to_double(key, item), lo, hi));
        if (out.size() < min_count || out.size() > max_count)
            fail(ErrorCode::ConfigError, "key '" + key + "' has " + std::to_string(out.size()) + " entries, expected " +
                                             std::to_string(min_count) +
                                             (max_count == min_count ? "" : " or more"));
        return out;
    }

    std::vector<std::string> get_strings(const std::string& key) const {
        std::vector<std::string> out;
        for (auto& s : split_list(raw(key)))
            if (!s.empty()) out.push_back(s);
        return out;
    }

    /// Every key that no getter has read is an error: misspelled or unsupported options are never ignored.
    void require_all_used() const {
        for (const auto& [k, i] : index_)
            if (!used_.count(k)) fail(ErrorCode::ConfigError, "unknown key '" + k + "' in " + source_);
    }

    /// Marks every key of a section as used (for blocks that the current command does not consume).
    void mark_section_used(const std::string& sec) const {
        for (const auto& [k, i] : index_)
            if (k.rfind(sec + ".", 0) == 0) used_.insert(k);
    }

private:
    static double to_double(const std::string& key, const std::string& v) {
        std::size_t pos = 0;
        double x = 0.0;
        try {
            x = std::stod(v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != v.size() || !std::isfinite(x))
            fail(ErrorCode::ConfigError, "key '" + key + "' = '" + v + "' is not a finite number");
        return x;
    }
    static double check_range(const std::string& key, double x, double lo, double hi) {
        if (x < lo || x > hi)
            fail(ErrorCode::ConfigError, "key '" + key + "' = " + format_double(x) + " outside [" + format_double(lo) +
                                             ", " + format_double(hi) + "]");
        return x;
    }

    std::string source_;
    std::vector<Line> lines_;
    std::map<std::string, std::size_t> index_;
    std::set<std::string> sections_;
    mutable std::set<std::string> used_;
};

}  // namespace hadamard::config
