#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gcae/common.hpp"

// Minimal reader/writer for the serialized-array format (magic "\x93NUMPY",
// version 1.0, little-endian payloads) and the zip-of-arrays container it
// usually ships in. Reading supports stored and deflate entries; writing
// emits stored entries only.

namespace gcae::npy {

struct Array {
    std::string dtype;  // e.g. "|u1", "<f8", "<i8", "<f4"
    std::vector<int64_t> shape;
    bool fortran_order = false;
    std::vector<uint8_t> raw;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }

    size_t itemsize() const {
        if (dtype.size() < 2 || dtype.back() < '1' || dtype.back() > '9')
            throw IoError("unsupported dtype: " + dtype);
        return static_cast<size_t>(dtype.back() - '0');
    }
};

namespace detail {

inline uint16_t rd16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
inline uint32_t rd32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline void wr16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(static_cast<uint8_t>(x & 0xff));
    v.push_back(static_cast<uint8_t>(x >> 8));
}
inline void wr32(std::vector<uint8_t>& v, uint32_t x) {
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<uint8_t>((x >> (8 * i)) & 0xff));
}

// Extracts 'value' for `key` from the header dict text.
inline std::string dict_field(const std::string& header, const std::string& key, size_t offset_hint,
                              const std::string& name) {
    const std::string quoted = "'" + key + "':";
    size_t pos = header.find(quoted, offset_hint);
    if (pos == std::string::npos) throw IoError(name + ": header missing key " + key);
    pos += quoted.size();
    while (pos < header.size() && header[pos] == ' ') ++pos;
    size_t end = pos;
    if (header[pos] == '\'') {
        end = header.find('\'', pos + 1);
        if (end == std::string::npos) throw IoError(name + ": unterminated string in header");
        return header.substr(pos + 1, end - pos - 1);
    }
    if (header[pos] == '(') {
        end = header.find(')', pos);
        if (end == std::string::npos) throw IoError(name + ": unterminated tuple in header");
        return header.substr(pos, end - pos + 1);
    }
    while (end < header.size() && header[end] != ',' && header[end] != '}') ++end;
    return header.substr(pos, end - pos);
}

}  // namespace detail

inline Array parse_npy(const uint8_t* data, size_t size, const std::string& name) {
    static const uint8_t magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
    if (size < 10 || std::memcmp(data, magic, 6) != 0)
        throw IoError(name + ": bad magic at offset 0 (not a serialized array)");
    if (data[6] != 1 || data[7] != 0)
        throw IoError(name + ": unsupported format version " + std::to_string(data[6]) + "." +
                      std::to_string(data[7]) + " at offset 6");
    const uint16_t hlen = detail::rd16(data + 8);
    if (10 + static_cast<size_t>(hlen) > size)
        throw IoError(name + ": truncated header (declared " + std::to_string(hlen) + " bytes)");
    const std::string header(reinterpret_cast<const char*>(data + 10), hlen);

    Array a;
    a.dtype = detail::dict_field(header, "descr", 0, name);
    const std::string fo = detail::dict_field(header, "fortran_order", 0, name);
    a.fortran_order = fo.find("True") != std::string::npos;
    const std::string shape = detail::dict_field(header, "shape", 0, name);
    int64_t cur = -1;
    for (char c : shape) {
        if (c >= '0' && c <= '9') {
            cur = (cur < 0 ? 0 : cur) * 10 + (c - '0');
        } else if (cur >= 0) {
            a.shape.push_back(cur);
            cur = -1;
        }
    }
    if (cur >= 0) a.shape.push_back(cur);

    const size_t payload = static_cast<size_t>(a.numel()) * a.itemsize();
    const size_t start = 10 + static_cast<size_t>(hlen);
    if (start + payload > size)
        throw IoError(name + ": payload truncated at offset " + std::to_string(start) +
                      " (need " + std::to_string(payload) + " bytes)");
    a.raw.assign(data + start, data + start + payload);
    return a;
}

inline std::vector<uint8_t> serialize_npy(const Array& a) {
    std::string dict = "{'descr': '" + a.dtype + "', 'fortran_order': " +
                       (a.fortran_order ? "True" : "False") + ", 'shape': (";
    for (size_t i = 0; i < a.shape.size(); ++i) {
        dict += std::to_string(a.shape[i]);
        if (a.shape.size() == 1 || i + 1 < a.shape.size()) dict += ",";
        if (i + 1 < a.shape.size()) dict += " ";
    }
    dict += "), }";
    // pad with spaces so the full preamble is a multiple of 64, then newline
    size_t total = 10 + dict.size() + 1;
    const size_t pad = (64 - total % 64) % 64;
    dict.append(pad, ' ');
    dict.push_back('\n');

    std::vector<uint8_t> out;
    out.reserve(10 + dict.size() + a.raw.size());
    const uint8_t magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
    out.insert(out.end(), magic, magic + 8);
    detail::wr16(out, static_cast<uint16_t>(dict.size()));
    out.insert(out.end(), dict.begin(), dict.end());
    out.insert(out.end(), a.raw.begin(), a.raw.end());
    return out;
}

struct ZipEntry {
    std::string name;
    std::vector<uint8_t> data;
};

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff len = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(len));
    in.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!in) throw IoError("short read on " + path);
    return bytes;
}

inline std::vector<ZipEntry> read_zip(const std::string& path) {
    const std::vector<uint8_t> b = read_file_bytes(path);
    if (b.size() < 22) throw IoError(path + ": too small to be a zip container");

    // end-of-central-directory: scan backwards over a possible comment
    size_t eocd = std::string::npos;
    const size_t lo = b.size() > (1 << 16) + 22 ? b.size() - (1 << 16) - 22 : 0;
    for (size_t i = b.size() - 22 + 1; i-- > lo;) {
        if (b[i] == 0x50 && b[i + 1] == 0x4b && b[i + 2] == 0x05 && b[i + 3] == 0x06) {
            eocd = i;
            break;
        }
    }
    if (eocd == std::string::npos) throw IoError(path + ": end-of-central-directory not found");
    const uint16_t count = detail::rd16(b.data() + eocd + 10);
    size_t cd = detail::rd32(b.data() + eocd + 16);

    std::vector<ZipEntry> entries;
    for (uint16_t e = 0; e < count; ++e) {
        if (cd + 46 > b.size() || detail::rd32(b.data() + cd) != 0x02014b50)
            throw IoError(path + ": bad central directory record at offset " + std::to_string(cd));
        const uint16_t method = detail::rd16(b.data() + cd + 10);
        const uint32_t csize = detail::rd32(b.data() + cd + 20);
        const uint32_t usize = detail::rd32(b.data() + cd + 24);
        const uint16_t nlen = detail::rd16(b.data() + cd + 28);
        const uint16_t xlen = detail::rd16(b.data() + cd + 30);
        const uint16_t clen = detail::rd16(b.data() + cd + 32);
        const uint32_t lho = detail::rd32(b.data() + cd + 42);
        std::string name(reinterpret_cast<const char*>(b.data() + cd + 46), nlen);
        cd += 46u + nlen + xlen + clen;

        if (lho + 30 > b.size() || detail::rd32(b.data() + lho) != 0x04034b50)
            throw IoError(path + ": bad local header for " + name + " at offset " +
                          std::to_string(lho));
        const uint16_t lnlen = detail::rd16(b.data() + lho + 26);
        const uint16_t lxlen = detail::rd16(b.data() + lho + 28);
        const size_t start = lho + 30u + lnlen + lxlen;
        if (start + csize > b.size()) throw IoError(path + ": truncated entry " + name);

        ZipEntry entry;
        entry.name = std::move(name);
        if (method == 0) {
            entry.data.assign(b.begin() + static_cast<std::ptrdiff_t>(start),
                              b.begin() + static_cast<std::ptrdiff_t>(start + csize));
        } else if (method == 8) {
            entry.data.resize(usize);
            z_stream zs{};
            if (inflateInit2(&zs, -15) != Z_OK) throw IoError("inflate init failed");
            zs.next_in = const_cast<uint8_t*>(b.data() + start);
            zs.avail_in = csize;
            zs.next_out = entry.data.data();
            zs.avail_out = usize;
            const int rc = inflate(&zs, Z_FINISH);
            inflateEnd(&zs);
            if (rc != Z_STREAM_END)
                throw IoError(path + ": inflate failed for " + entry.name + " (rc " +
                              std::to_string(rc) + ")");
        } else {
            throw IoError(path + ": unsupported compression method " + std::to_string(method) +
                          " for " + entry.name);
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

// Stored (method 0) zip writer; enough for array containers under 4 GiB.
inline void write_zip_stored(const std::string& path, const std::vector<ZipEntry>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path);

    struct Central {
        std::string name;
        uint32_t crc, size, offset;
    };
    std::vector<Central> centrals;
    uint64_t offset = 0;
    for (const auto& e : entries) {
        const uint32_t crc = static_cast<uint32_t>(
            crc32(crc32(0L, Z_NULL, 0), e.data.data(), static_cast<uInt>(e.data.size())));
        std::vector<uint8_t> h;
        detail::wr32(h, 0x04034b50);
        detail::wr16(h, 20);  // version needed
        detail::wr16(h, 0);   // flags
        detail::wr16(h, 0);   // method: stored
        detail::wr16(h, 0);   // mod time
        detail::wr16(h, 0);   // mod date
        detail::wr32(h, crc);
        detail::wr32(h, static_cast<uint32_t>(e.data.size()));
        detail::wr32(h, static_cast<uint32_t>(e.data.size()));
        detail::wr16(h, static_cast<uint16_t>(e.name.size()));
        detail::wr16(h, 0);
        out.write(reinterpret_cast<const char*>(h.data()), static_cast<std::streamsize>(h.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(e.data.size()));
        centrals.push_back({e.name, crc, static_cast<uint32_t>(e.data.size()),
                            static_cast<uint32_t>(offset)});
        offset += 30 + e.name.size() + e.data.size();
    }
    const uint64_t cd_start = offset;
    uint64_t cd_size = 0;
    for (const auto& cen : centrals) {
        std::vector<uint8_t> h;
        detail::wr32(h, 0x02014b50);
        detail::wr16(h, 20);
        detail::wr16(h, 20);
        detail::wr16(h, 0);
        detail::wr16(h, 0);
        detail::wr16(h, 0);
        detail::wr16(h, 0);
        detail::wr32(h, cen.crc);
        detail::wr32(h, cen.size);
        detail::wr32(h, cen.size);
        detail::wr16(h, static_cast<uint16_t>(cen.name.size()));
        detail::wr16(h, 0);
        detail::wr16(h, 0);
        detail::wr16(h, 0);
        detail::wr16(h, 0);
        detail::wr32(h, 0);
        detail::wr32(h, cen.offset);
        out.write(reinterpret_cast<const char*>(h.data()), static_cast<std::streamsize>(h.size()));
        out.write(cen.name.data(), static_cast<std::streamsize>(cen.name.size()));
        cd_size += 46 + cen.name.size();
    }
    std::vector<uint8_t> e;
    detail::wr32(e, 0x06054b50);
    detail::wr16(e, 0);
    detail::wr16(e, 0);
    detail::wr16(e, static_cast<uint16_t>(centrals.size()));
    detail::wr16(e, static_cast<uint16_t>(centrals.size()));
    detail::wr32(e, static_cast<uint32_t>(cd_size));
    detail::wr32(e, static_cast<uint32_t>(cd_start));
    detail::wr16(e, 0);
    out.write(reinterpret_cast<const char*>(e.data()), static_cast<std::streamsize>(e.size()));
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace gcae::npy
