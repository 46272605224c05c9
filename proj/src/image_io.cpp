#include "vc/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace vc {

namespace {

void be32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back((v >> 24) & 0xff);
    out.push_back((v >> 16) & 0xff);
    out.push_back((v >> 8) & 0xff);
    out.push_back(v & 0xff);
}

uint32_t rd32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void push_chunk(std::vector<unsigned char>& out, const char type[4], const std::vector<unsigned char>& payload) {
    be32(out, (uint32_t)payload.size());
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = crc32(0, out.data() + start, (uInt)(out.size() - start));
    be32(out, crc);
}

std::vector<unsigned char> read_file(const std::string& path, const char* what) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(std::string(what) + ": cannot open " + path);
    f.seekg(0, std::ios::end);
    std::vector<unsigned char> buf((size_t)f.tellg());
    f.seekg(0);
    f.read(reinterpret_cast<char*>(buf.data()), (std::streamsize)buf.size());
    return buf;
}

void write_file(const std::string& path, const void* data, size_t size, const char* what) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(std::string(what) + ": cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(data), (std::streamsize)size);
    if (!f) throw std::runtime_error(std::string(what) + ": write failed for " + path);
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace

void write_png(const std::string& path, const Image8& img) {
    if (img.height < 1 || img.width < 1 || img.rgb.size() != (size_t)img.height * img.width * 3)
        throw std::runtime_error("png: image buffer does not match " + std::to_string(img.height) + "x" +
                                 std::to_string(img.width));
    // filter byte 0 in front of every scanline
    size_t stride = (size_t)img.width * 3;
    std::vector<unsigned char> raw((stride + 1) * img.height);
    for (int y = 0; y < img.height; y++) {
        raw[y * (stride + 1)] = 0;
        std::memcpy(raw.data() + y * (stride + 1) + 1, img.rgb.data() + y * stride, stride);
    }
    uLongf bound = compressBound((uLong)raw.size());
    std::vector<unsigned char> comp(bound);
    if (compress2(comp.data(), &bound, raw.data(), (uLong)raw.size(), 6) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    comp.resize(bound);

    std::vector<unsigned char> out;
    const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);
    std::vector<unsigned char> ihdr;
    be32(ihdr, (uint32_t)img.width);
    be32(ihdr, (uint32_t)img.height);
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    push_chunk(out, "IHDR", ihdr);
    push_chunk(out, "IDAT", comp);
    push_chunk(out, "IEND", {});
    write_file(path, out.data(), out.size(), "png");
}

Image8 read_png(const std::string& path) {
    std::vector<unsigned char> buf = read_file(path, "png");
    const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
        throw std::runtime_error("png: " + path + " is not a png file");
    size_t pos = 8;
    uint32_t w = 0, h = 0;
    int color = -1, depth = 0, interlace = 0;
    std::vector<unsigned char> idat;
    while (pos + 8 <= buf.size()) {
        uint32_t len = rd32(buf.data() + pos);
        std::string type(reinterpret_cast<const char*>(buf.data() + pos + 4), 4);
        if (pos + 12 + len > buf.size()) throw std::runtime_error("png: truncated chunk in " + path);
        const unsigned char* payload = buf.data() + pos + 8;
        if (type == "IHDR") {
            w = rd32(payload);
            h = rd32(payload + 4);
            depth = payload[8];
            color = payload[9];
            interlace = payload[12];
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (depth != 8) throw std::runtime_error("png: " + path + " has bit depth " + std::to_string(depth) + ", need 8");
    if (color != 2 && color != 6 && color != 0)
        throw std::runtime_error("png: " + path + " has unsupported color type " + std::to_string(color));
    if (interlace != 0) throw std::runtime_error("png: " + path + " is interlaced");
    int nch = color == 2 ? 3 : color == 6 ? 4 : 1;

    size_t stride = (size_t)w * nch;
    uLongf rawlen = (uLongf)((stride + 1) * h);
    std::vector<unsigned char> raw(rawlen);
    if (uncompress(raw.data(), &rawlen, idat.data(), (uLong)idat.size()) != Z_OK || rawlen != (stride + 1) * h)
        throw std::runtime_error("png: inflate failed for " + path);

    // undo per-scanline filters in place
    std::vector<unsigned char> prev(stride, 0);
    Image8 img;
    img.height = (int)h;
    img.width = (int)w;
    img.rgb.resize((size_t)h * w * 3);
    std::vector<unsigned char> line(stride);
    for (uint32_t y = 0; y < h; y++) {
        const unsigned char* src = raw.data() + y * (stride + 1);
        int filter = src[0];
        const unsigned char* s = src + 1;
        for (size_t i = 0; i < stride; i++) {
            int a = i >= (size_t)nch ? line[i - nch] : 0;
            int b = prev[i];
            int c = i >= (size_t)nch ? prev[i - nch] : 0;
            int x = s[i];
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: x += paeth(a, b, c); break;
                default: throw std::runtime_error("png: unknown filter " + std::to_string(filter) + " in " + path);
            }
            line[i] = (unsigned char)(x & 0xff);
        }
        for (uint32_t xpx = 0; xpx < w; xpx++) {
            unsigned char r, g, bch;
            if (nch == 1) {
                r = g = bch = line[xpx];
            } else {
                r = line[(size_t)xpx * nch];
                g = line[(size_t)xpx * nch + 1];
                bch = line[(size_t)xpx * nch + 2];
            }
            size_t o = ((size_t)y * w + xpx) * 3;
            img.rgb[o] = r;
            img.rgb[o + 1] = g;
            img.rgb[o + 2] = bch;
        }
        prev = line;
    }
    return img;
}

Image8 quantize_frame(const VideoClip& clip, int frame) {
    Image8 img;
    img.height = clip.height;
    img.width = clip.width;
    img.rgb.resize((size_t)clip.height * clip.width * 3);
    const float* src = clip.frame(frame);
    for (size_t i = 0; i < img.rgb.size(); i++) {
        float v = src[i];
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        img.rgb[i] = (unsigned char)std::lround(v * 255.0f);
    }
    return img;
}

void store_frame(VideoClip& clip, int frame, const Image8& img) {
    if (img.height != clip.height || img.width != clip.width)
        throw std::runtime_error("clip: frame size " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                 " does not match clip " + std::to_string(clip.height) + "x" +
                                 std::to_string(clip.width));
    float* dst = clip.frame(frame);
    for (size_t i = 0; i < img.rgb.size(); i++) dst[i] = (float)img.rgb[i] / 255.0f;
}

namespace {
void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    out.insert(out.end(), reinterpret_cast<unsigned char*>(&v), reinterpret_cast<unsigned char*>(&v) + 4);
}
uint32_t take_u32(const unsigned char*& p) {
    uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    return v;
}
} // namespace

void write_flow_file(const std::string& path, const std::vector<FlowField>& fields) {
    if (fields.empty()) throw std::runtime_error("flow: nothing to write");
    int h = fields[0].height, w = fields[0].width;
    std::vector<unsigned char> out;
    out.insert(out.end(), {'V', 'C', 'M', 'F'});
    put_u32(out, (uint32_t)fields.size());
    put_u32(out, (uint32_t)h);
    put_u32(out, (uint32_t)w);
    for (const auto& f : fields) {
        if (f.height != h || f.width != w) throw std::runtime_error("flow: mixed field sizes");
        // components interleaved per pixel: dx, dy, dx, dy, ...
        for (size_t i = 0; i < f.dx.size(); i++) {
            const auto* dx = reinterpret_cast<const unsigned char*>(&f.dx[i]);
            const auto* dy = reinterpret_cast<const unsigned char*>(&f.dy[i]);
            out.insert(out.end(), dx, dx + 4);
            out.insert(out.end(), dy, dy + 4);
        }
    }
    write_file(path, out.data(), out.size(), "flow");
}

std::vector<FlowField> read_flow_file(const std::string& path) {
    std::vector<unsigned char> buf = read_file(path, "flow");
    if (buf.size() < 16 || std::memcmp(buf.data(), "VCMF", 4) != 0)
        throw std::runtime_error("flow: " + path + " is not a flow file");
    const unsigned char* p = buf.data() + 4;
    uint32_t n = take_u32(p), h = take_u32(p), w = take_u32(p);
    size_t need = 16 + (size_t)n * h * w * 8;
    if (buf.size() != need) throw std::runtime_error("flow: " + path + " truncated");
    std::vector<FlowField> fields(n);
    for (uint32_t i = 0; i < n; i++) {
        fields[i] = FlowField::zero((int)h, (int)w);
        for (size_t j = 0; j < (size_t)h * w; j++) {
            std::memcpy(&fields[i].dx[j], p, 4);
            std::memcpy(&fields[i].dy[j], p + 4, 4);
            p += 8;
        }
    }
    return fields;
}

void write_scalar_map(const std::string& path, int height, int width, const std::vector<float>& data) {
    if (data.size() != (size_t)height * width)
        throw std::runtime_error("map: buffer does not match " + std::to_string(height) + "x" + std::to_string(width));
    std::vector<unsigned char> out;
    out.insert(out.end(), {'V', 'C', 'S', 'C'});
    put_u32(out, (uint32_t)height);
    put_u32(out, (uint32_t)width);
    const auto* d = reinterpret_cast<const unsigned char*>(data.data());
    out.insert(out.end(), d, d + data.size() * 4);
    write_file(path, out.data(), out.size(), "map");
}

std::vector<float> read_scalar_map(const std::string& path, int& height, int& width) {
    std::vector<unsigned char> buf = read_file(path, "map");
    if (buf.size() < 12 || std::memcmp(buf.data(), "VCSC", 4) != 0)
        throw std::runtime_error("map: " + path + " is not a scalar map file");
    const unsigned char* p = buf.data() + 4;
    height = (int)take_u32(p);
    width = (int)take_u32(p);
    if (buf.size() != 12 + (size_t)height * width * 4) throw std::runtime_error("map: " + path + " truncated");
    std::vector<float> data((size_t)height * width);
    std::memcpy(data.data(), p, data.size() * 4);
    return data;
}

void write_clip_dir(const std::string& dir, const VideoClip& clip, const ClipMeta& meta) {
    fs::create_directories(fs::path(dir) / "frames");
    char name[32];
    for (int f = 0; f < clip.frames; f++) {
        std::snprintf(name, sizeof name, "%03d.png", f);
        write_png((fs::path(dir) / "frames" / name).string(), quantize_frame(clip, f));
    }
    json j;
    j["frames"] = clip.frames;
    j["height"] = clip.height;
    j["width"] = clip.width;
    j["fps"] = clip.fps;
    j["caption"] = meta.caption;
    j["seed"] = meta.seed;
    std::string s = j.dump(2);
    s.push_back('\n');
    write_file((fs::path(dir) / "manifest.json").string(), s.data(), s.size(), "clip");
}

VideoClip read_clip_dir(const std::string& dir, ClipMeta* meta_out) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("clip: missing manifest.json in " + dir);
    json j = json::parse(mf);
    ClipMeta meta;
    meta.frames = j.at("frames").get<int>();
    meta.height = j.at("height").get<int>();
    meta.width = j.at("width").get<int>();
    meta.fps = j.value("fps", 4.0);
    meta.caption = j.value("caption", std::string());
    meta.seed = j.value("seed", (uint64_t)0);
    VideoClip clip = VideoClip::blank(meta.frames, meta.height, meta.width);
    clip.fps = meta.fps;
    char name[32];
    for (int f = 0; f < meta.frames; f++) {
        std::snprintf(name, sizeof name, "%03d.png", f);
        Image8 img = read_png((fs::path(dir) / "frames" / name).string());
        store_frame(clip, f, img);
    }
    if (meta_out) *meta_out = meta;
    return clip;
}

} // namespace vc
