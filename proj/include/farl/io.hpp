#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "farl/dataset.hpp"
#include "farl/image.hpp"
#include "farl/tensor.hpp"

namespace farl::io {

namespace fs = std::filesystem;

/// File missing, unreadable, or inconsistent with what the caller expects.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file content; `offset` is the byte position where parsing stopped.
class ParseError : public IoError {
public:
    ParseError(const std::string& what, std::size_t offset)
        : IoError(what + " at byte " + std::to_string(offset)), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------- netpbm

inline std::uint8_t to_byte(double v) {
    if (!(v > 0.0)) return 0;  // also maps NaN to 0
    if (v >= 1.0) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

/// Serializes P6 (3 channels) or P5 (1 channel). Values are clamped to [0, 1] and
/// rounded to the nearest of 256 levels.
inline std::string encode_netpbm(const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw IoError("netpbm needs 1 or 3 channels, got " + std::to_string(img.channels));
    std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                      std::to_string(img.height) + "\n255\n";
    const std::size_t header = out.size();
    out.resize(header + img.height * img.width * img.channels);
    std::size_t k = header;
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < img.channels; ++c) out[k++] = static_cast<char>(to_byte(img.at(c, y, x)));
    return out;
}

namespace detail {

struct HeaderReader {
    const std::string& bytes;
    std::size_t pos = 0;

    void skip_space() {
        while (pos < bytes.size()) {
            const char ch = bytes[pos];
            if (ch == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(ch))) {
                ++pos;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space();
        const std::size_t start = pos;
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > 1'000'000) throw ParseError(std::string(what) + " too large", start);
            ++pos;
        }
        if (pos == start) throw ParseError(std::string("expected ") + what, start);
        return v;
    }
};

}  // namespace detail

/// Parses binary P6 or P5 with maxval 255. `expected_channels` of 0 accepts either.
inline Image decode_netpbm(const std::string& bytes, std::size_t expected_channels = 0) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5'))
        throw ParseError("bad magic, expected P6 or P5", 0);
    const std::size_t channels = bytes[1] == '6' ? 3 : 1;
    if (expected_channels && channels != expected_channels)
        throw ParseError(std::string("expected ") + (expected_channels == 3 ? "P6" : "P5") + " but found P" +
                             bytes[1],
                         0);
    detail::HeaderReader r{bytes, 2};
    const std::size_t width_at = r.pos;
    const std::size_t width = r.number("width");
    const std::size_t height = r.number("height");
    if (width == 0 || height == 0) throw ParseError("zero image dimension", width_at);
    const std::size_t maxval_at = r.pos;
    const std::size_t maxval = r.number("maxval");
    if (maxval != 255) throw ParseError("unsupported maxval " + std::to_string(maxval) + " (only 255)", maxval_at);
    if (r.pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos])))
        throw ParseError("expected single whitespace after maxval", r.pos);
    const std::size_t payload = r.pos + 1;
    const std::size_t need = width * height * channels;
    if (bytes.size() - payload < need)
        throw ParseError("truncated payload: need " + std::to_string(need) + " bytes, have " +
                             std::to_string(bytes.size() - payload),
                         bytes.size());
    if (bytes.size() - payload > need) throw ParseError("trailing bytes after payload", payload + need);
    Image img(height, width, channels);
    std::size_t k = payload;
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t c = 0; c < channels; ++c)
                img.at(c, y, x) = static_cast<double>(static_cast<unsigned char>(bytes[k++])) / 255.0;
    return img;
}

inline Image read_ppm(const fs::path& path) { return decode_netpbm(read_file(path), 3); }
inline Image read_pgm(const fs::path& path) { return decode_netpbm(read_file(path), 1); }

inline void write_ppm(const fs::path& path, const Image& img) {
    if (img.channels != 3) throw IoError("write_ppm needs 3 channels");
    write_file(path, encode_netpbm(img));
}

inline void write_pgm(const fs::path& path, const Image& img) {
    if (img.channels != 1) throw IoError("write_pgm needs 1 channel");
    write_file(path, encode_netpbm(img));
}

// ---------------------------------------------------------------- checkpoints

/// Binary checkpoint: "FARLCKPT", u32 version, text metadata, then named tensors.
/// Integers are little-endian; tensor data is raw IEEE-754 doubles.
struct Checkpoint {
    static constexpr char kMagic[8] = {'F', 'A', 'R', 'L', 'C', 'K', 'P', 'T'};
    static constexpr std::uint32_t kVersion = 1;

    std::map<std::string, std::string> meta;
    std::map<std::string, Tensor> tensors;

    template <class Module>
    void add_module(const Module& m, const std::string& prefix) {
        Module::visit(m, prefix, [&](const std::string& name, const Parameter& p) { tensors[name] = p.value; });
    }

    /// Copies stored tensors into a module; every module parameter must be present with its shape.
    template <class Module>
    void load_module(Module& m, const std::string& prefix) const {
        Module::visit(m, prefix, [&](const std::string& name, Parameter& p) {
            auto it = tensors.find(name);
            if (it == tensors.end()) throw IoError("checkpoint lacks tensor '" + name + "'");
            if (it->second.size() != p.value.size())
                throw IoError("checkpoint tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                              ", model expects " + shape_string(p.value.shape()));
            p.value = it->second.reshaped(p.value.shape());
            p.zero_grad();
        });
    }

    const std::string& require(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) throw IoError("checkpoint lacks metadata '" + key + "'");
        return it->second;
    }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_string(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

struct Cursor {
    const std::string& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) {
        if (bytes.size() - pos < n) throw ParseError("truncated checkpoint", bytes.size());
    }
    std::uint64_t uint(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= std::uint64_t{static_cast<unsigned char>(bytes[pos++])} << (8 * i);
        return v;
    }
    std::string string() {
        const auto n = static_cast<std::size_t>(uint(4));
        need(n);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    static_assert(sizeof(double) == 8);
    std::string out(Checkpoint::kMagic, 8);
    detail::put_u32(out, Checkpoint::kVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(ck.meta.size()));
    for (const auto& [k, v] : ck.meta) {
        detail::put_string(out, k);
        detail::put_string(out, v);
    }
    detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        detail::put_string(out, name);
        detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) detail::put_u64(out, d);
        for (double v : t.data()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            detail::put_u64(out, bits);
        }
    }
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 8 || bytes.compare(0, 8, Checkpoint::kMagic, 8) != 0)
        throw ParseError("not a FARL checkpoint", 0);
    detail::Cursor c{bytes, 8};
    const auto version = c.uint(4);
    if (version != Checkpoint::kVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version), 8);
    Checkpoint ck;
    const auto n_meta = c.uint(4);
    for (std::uint64_t i = 0; i < n_meta; ++i) {
        std::string k = c.string();
        ck.meta[k] = c.string();
    }
    const auto n_tensors = c.uint(4);
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        const std::size_t at = c.pos;
        std::string name = c.string();
        const auto rank = c.uint(4);
        if (rank > 2) throw ParseError("tensor '" + name + "' has rank " + std::to_string(rank), at);
        Shape shape;
        for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::size_t>(c.uint(8)));
        for (auto d : shape)
            if (d == 0 || d > (1u << 24)) throw ParseError("tensor '" + name + "' has invalid dims", at);
        std::vector<double> data(shape_numel(shape));
        c.need(data.size() * 8);
        for (double& v : data) {
            const std::uint64_t bits = c.uint(8);
            std::memcpy(&v, &bits, 8);
        }
        ck.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    if (c.pos != bytes.size()) throw ParseError("trailing bytes in checkpoint", c.pos);
    return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) { write_file(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("missing checkpoint '" + path.string() + "'");
    return decode_checkpoint(read_file(path));
}

// ---------------------------------------------------------------- config

/// Flat key=value settings. Blank lines and lines starting with '#' are ignored.
class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "<config>") {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw IoError(origin + ":" + std::to_string(lineno) + ": expected key=value");
            const std::string key = trim(t.substr(0, eq));
            if (key.empty()) throw IoError(origin + ":" + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = trim(t.substr(eq + 1));
        }
        return cfg;
    }

    static Config load(const fs::path& path) { return parse(read_file(path), path.string()); }

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    const std::map<std::string, std::string>& values() const { return values_; }

    /// Rejects keys outside `known`, naming the first offender.
    void check_keys(const std::vector<std::string>& known) const {
        for (const auto& [k, v] : values_)
            if (std::find(known.begin(), known.end(), k) == known.end()) throw IoError("unknown config key '" + k + "'");
    }

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw IoError("config key '" + key + "': '" + it->second + "' is not a number");
        }
    }

    std::uint64_t get(const std::string& key, std::uint64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& s = it->second;
        if (s.empty() || !std::all_of(s.begin(), s.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); }))
            throw IoError("config key '" + key + "': '" + s + "' is not a non-negative integer");
        return std::stoull(s);
    }

    bool get(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "1" || it->second == "true") return true;
        if (it->second == "0" || it->second == "false") return false;
        throw IoError("config key '" + key + "': '" + it->second + "' is not a boolean");
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

/// Fixed-precision decimal for CSV output; identical inputs give identical text.
inline std::string fixed(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

/// Shortest text that reads back to the same double.
inline std::string exact(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

// ---------------------------------------------------------------- dataset directory

inline constexpr const char* kManifestName = "manifest.txt";

/// Writes images as PPM files plus a manifest with one line per sample:
/// path class_id class_name style split dx dy rotation scale.
inline void save_dataset(const fs::path& dir, const data::Dataset& ds) {
    fs::create_directories(dir / "images");
    std::ostringstream manifest;
    manifest << "# path class_id class_name style split dx dy rotation scale\n";
    manifest << "# base";
    for (int c : ds.split.base_classes) manifest << ' ' << c;
    manifest << "\n# novel";
    for (int c : ds.split.novel_classes) manifest << ' ' << c;
    manifest << "\n# train_styles";
    for (auto s : ds.split.train_styles) manifest << ' ' << data::style_name(s);
    manifest << "\n# shifted_styles";
    for (auto s : ds.split.shifted_styles) manifest << ' ' << data::style_name(s);
    manifest << '\n';
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        std::ostringstream name;
        name << "images/" << std::setw(5) << std::setfill('0') << i << ".ppm";
        write_ppm(dir / name.str(), s.image);
        manifest << name.str() << ' ' << s.class_id << ' ' << data::kClassNames[static_cast<std::size_t>(s.class_id)]
                 << ' ' << data::style_name(s.style) << ' ' << data::role_name(s.role) << ' ' << exact(s.pose.dx)
                 << ' ' << exact(s.pose.dy) << ' ' << exact(s.pose.rotation) << ' ' << exact(s.pose.scale) << '\n';
    }
    write_file(dir / kManifestName, manifest.str());
}

inline data::Dataset load_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / kManifestName;
    if (!fs::exists(manifest_path)) throw IoError("missing dataset manifest '" + manifest_path.string() + "'");
    std::istringstream in(read_file(manifest_path));
    data::Dataset ds;
    ds.split.base_classes.clear();
    ds.split.novel_classes.clear();
    ds.split.train_styles.clear();
    ds.split.shifted_styles.clear();
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        const std::string where = manifest_path.string() + ":" + std::to_string(lineno);
        if (line[0] == '#') {
            std::string hash, key, tok;
            ls >> hash >> key;
            while (ls >> tok) {
                if (key == "base") ds.split.base_classes.push_back(std::stoi(tok));
                else if (key == "novel") ds.split.novel_classes.push_back(std::stoi(tok));
                else if (key == "train_styles") ds.split.train_styles.push_back(data::parse_style(tok));
                else if (key == "shifted_styles") ds.split.shifted_styles.push_back(data::parse_style(tok));
            }
            continue;
        }
        std::string path, class_name, style, role;
        int class_id = -1;
        data::Sample s;
        if (!(ls >> path >> class_id >> class_name >> style >> role >> s.pose.dx >> s.pose.dy >> s.pose.rotation >>
              s.pose.scale))
            throw IoError(where + ": malformed manifest line");
        if (class_id < 0 || class_id >= static_cast<int>(data::kClassNames.size()) ||
            data::kClassNames[static_cast<std::size_t>(class_id)] != class_name)
            throw IoError(where + ": class id and name disagree");
        s.class_id = class_id;
        s.style = data::parse_style(style);
        s.role = data::parse_role(role);
        s.image = read_ppm(dir / path);
        ds.samples.push_back(std::move(s));
    }
    ds.split.validate();
    return ds;
}

}  // namespace farl::io
