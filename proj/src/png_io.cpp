#include "smallobj/png_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace smallobj {

namespace {

const unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>(v & 0xff));
}

std::uint32_t read_u32_be(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) |
           (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const std::vector<unsigned char>& data) {
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + type_at, static_cast<uInt>(4 + data.size()));
    put_u32_be(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a);
    const int pb = std::abs(p - b);
    const int pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png_rgb8(const std::string& path, const ImageBytes& image) {
    if (image.width <= 0 || image.height <= 0)
        throw std::invalid_argument("png: image dimensions must be positive");
    const std::size_t expected =
        static_cast<std::size_t>(3) * image.width * image.height;
    if (image.rgb.size() != expected)
        throw std::invalid_argument("png: pixel buffer has wrong length");

    // scanlines, each prefixed with filter byte 0
    const std::size_t row = static_cast<std::size_t>(3) * image.width;
    std::vector<unsigned char> raw((row + 1) * image.height);
    for (int y = 0; y < image.height; ++y) {
        raw[y * (row + 1)] = 0;
        std::copy_n(image.rgb.data() + y * row, row, raw.data() + y * (row + 1) + 1);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(),
                  static_cast<uLong>(raw.size()), Z_DEFAULT_COMPRESSION) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    compressed.resize(bound);

    std::vector<unsigned char> ihdr;
    put_u32_be(ihdr, static_cast<std::uint32_t>(image.width));
    put_u32_be(ihdr, static_cast<std::uint32_t>(image.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace

    std::vector<unsigned char> file(kSignature, kSignature + 8);
    append_chunk(file, "IHDR", ihdr);
    append_chunk(file, "IDAT", compressed);
    append_chunk(file, "IEND", {});

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(file.data()),
              static_cast<std::streamsize>(file.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

ImageBytes read_png_rgb8(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image: " + path);
    std::vector<unsigned char> file((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (file.size() < 8 || !std::equal(kSignature, kSignature + 8, file.data()))
        throw std::runtime_error("not a png file: " + path);

    int width = 0, height = 0, depth = 0, color = 0, interlace = 0;
    bool saw_ihdr = false;
    std::vector<unsigned char> idat;
    std::size_t pos = 8;
    while (pos + 8 <= file.size()) {
        const std::uint32_t len = read_u32_be(file.data() + pos);
        if (pos + 12 + len > file.size())
            throw std::runtime_error("png: truncated chunk: " + path);
        const std::string type(reinterpret_cast<const char*>(file.data() + pos + 4), 4);
        const unsigned char* data = file.data() + pos + 8;
        uLong crc = crc32(0L, Z_NULL, 0);
        crc = crc32(crc, file.data() + pos + 4, 4 + len);
        if (static_cast<std::uint32_t>(crc) != read_u32_be(data + len))
            throw std::runtime_error("png: bad chunk crc: " + path);
        if (type == "IHDR") {
            if (len != 13) throw std::runtime_error("png: malformed IHDR: " + path);
            width = static_cast<int>(read_u32_be(data));
            height = static_cast<int>(read_u32_be(data + 4));
            depth = data[8];
            color = data[9];
            interlace = data[12];
            saw_ihdr = true;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || width <= 0 || height <= 0)
        throw std::runtime_error("png: missing image header: " + path);
    if (depth != 8 || (color != 0 && color != 2) || interlace != 0)
        throw std::runtime_error("png: unsupported format (need 8-bit gray or rgb): " + path);
    if (idat.empty()) throw std::runtime_error("png: no image data: " + path);

    const int bpp = color == 2 ? 3 : 1;
    const std::size_t row = static_cast<std::size_t>(bpp) * width;
    std::vector<unsigned char> raw((row + 1) * height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("png: inflate failed: " + path);

    // undo per-scanline filters in place
    std::vector<unsigned char> prior(row, 0);
    std::vector<unsigned char> line(row);
    ImageBytes out;
    out.width = width;
    out.height = height;
    out.rgb.resize(static_cast<std::size_t>(3) * width * height);
    for (int y = 0; y < height; ++y) {
        const unsigned char filter = raw[y * (row + 1)];
        const unsigned char* src = raw.data() + y * (row + 1) + 1;
        for (std::size_t i = 0; i < row; ++i) {
            const int x = src[i];
            const int a = i >= static_cast<std::size_t>(bpp) ? line[i - bpp] : 0;
            const int b = prior[i];
            const int c = i >= static_cast<std::size_t>(bpp) ? prior[i - bpp] : 0;
            int v = 0;
            switch (filter) {
                case 0: v = x; break;
                case 1: v = x + a; break;
                case 2: v = x + b; break;
                case 3: v = x + (a + b) / 2; break;
                case 4: v = x + paeth(a, b, c); break;
                default: throw std::runtime_error("png: unknown scanline filter: " + path);
            }
            line[i] = static_cast<unsigned char>(v & 0xff);
        }
        for (int x = 0; x < width; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                out.rgb[(static_cast<std::size_t>(y) * width + x) * 3 + ch] =
                    line[static_cast<std::size_t>(x) * bpp + (bpp == 3 ? ch : 0)];
            }
        }
        prior = line;
    }
    return out;
}

Tensor image_to_tensor(const ImageBytes& image) {
    Tensor t(3, image.height, image.width);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(c, y, x) =
                    image.rgb[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] / 255.0;
    return t;
}

ImageBytes tensor_to_image(const Tensor& t) {
    if (t.channels() != 3)
        throw std::invalid_argument("image: tensor must have 3 channels");
    ImageBytes out;
    out.width = t.width();
    out.height = t.height();
    out.rgb.resize(static_cast<std::size_t>(3) * t.width() * t.height());
    for (int y = 0; y < t.height(); ++y) {
        for (int x = 0; x < t.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(t.at(c, y, x), 0.0, 1.0);
                out.rgb[(static_cast<std::size_t>(y) * t.width() + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    return out;
}

namespace {

constexpr char kTensorMagic[8] = {'S', 'O', 'T', 'E', 'N', '0', '0', '1'};

void put_u32_le(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

bool get_u32_le(std::istream& in, std::uint32_t& v) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return true;
}

}  // namespace

void save_tensor_raw(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(kTensorMagic, 8);
    put_u32_le(out, static_cast<std::uint32_t>(t.channels()));
    put_u32_le(out, static_cast<std::uint32_t>(t.height()));
    put_u32_le(out, static_cast<std::uint32_t>(t.width()));
    for (double v : t.data()) {
        const auto f = static_cast<float>(v);
        std::uint32_t u;
        static_assert(sizeof(u) == sizeof(f));
        std::memcpy(&u, &f, 4);
        put_u32_le(out, u);
    }
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor load_tensor_raw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open tensor file: " + path);
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kTensorMagic))
        throw std::runtime_error("not a tensor file: " + path);
    std::uint32_t c = 0, h = 0, w = 0;
    if (!get_u32_le(in, c) || !get_u32_le(in, h) || !get_u32_le(in, w))
        throw std::runtime_error("tensor file truncated: " + path);
    if (c == 0 || h == 0 || w == 0 || c > 1u << 16 || h > 1u << 16 || w > 1u << 16)
        throw std::runtime_error("tensor file has implausible dimensions: " + path);
    Tensor t(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    for (double& v : t.data()) {
        std::uint32_t u = 0;
        if (!get_u32_le(in, u)) throw std::runtime_error("tensor file truncated: " + path);
        float f;
        std::memcpy(&f, &u, 4);
        v = static_cast<double>(f);
    }
    return t;
}

}  // namespace smallobj
