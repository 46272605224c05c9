#ifndef VC_CODEC_HPP
#define VC_CODEC_HPP

#include "vc/tensor.hpp"
#include "vc/video.hpp"

namespace vc {

// Space-to-depth repack between pixel clips and model latents. Pure data
// movement: a factor-f encode folds every f x f pixel tile into 3*f*f
// channels, so decode(encode(x)) is bit-exact by construction. Latent
// channel (dy*f + dx)*3 + c holds pixel channel c at tile offset (dy, dx).

inline int latent_channels(int factor) { return 3 * factor * factor; }

template <class T>
Tensor<T> encode_video(const VideoClip& v, int factor) {
    if (factor < 1) throw std::invalid_argument("codec: factor must be >= 1");
    if (v.frames < 1) throw std::invalid_argument("codec: empty clip");
    if (v.height % factor != 0)
        throw std::invalid_argument("codec: height " + std::to_string(v.height) + " not divisible by factor " +
                                    std::to_string(factor));
    if (v.width % factor != 0)
        throw std::invalid_argument("codec: width " + std::to_string(v.width) + " not divisible by factor " +
                                    std::to_string(factor));
    int h = v.height / factor, w = v.width / factor, C = latent_channels(factor);
    Tensor<T> z = Tensor<T>::zeros({v.frames, C, h, w});
    T* pz = z.data();
    for (int f = 0; f < v.frames; f++)
        for (int dy = 0; dy < factor; dy++)
            for (int dx = 0; dx < factor; dx++)
                for (int c = 0; c < 3; c++) {
                    int q = (dy * factor + dx) * 3 + c;
                    T* plane = pz + (((int64_t)f * C + q) * h) * w;
                    for (int y = 0; y < h; y++)
                        for (int x = 0; x < w; x++)
                            plane[(int64_t)y * w + x] = (T)v.at(f, y * factor + dy, x * factor + dx, c);
                }
    return z;
}

template <class T>
VideoClip decode_video(const Tensor<T>& z, int factor, double fps = 4.0) {
    if (factor < 1) throw std::invalid_argument("codec: factor must be >= 1");
    if (z.rank() != 4) throw std::invalid_argument("codec: latent must be rank-4, got " + shape_str(z.shape()));
    int C = z.dim(1);
    if (C != latent_channels(factor))
        throw std::invalid_argument("codec: latent has " + std::to_string(C) + " channels, factor " +
                                    std::to_string(factor) + " requires " + std::to_string(latent_channels(factor)));
    int F = z.dim(0), h = z.dim(2), w = z.dim(3);
    VideoClip v = VideoClip::blank(F, h * factor, w * factor);
    v.fps = fps;
    const T* pz = z.data();
    for (int f = 0; f < F; f++)
        for (int dy = 0; dy < factor; dy++)
            for (int dx = 0; dx < factor; dx++)
                for (int c = 0; c < 3; c++) {
                    int q = (dy * factor + dx) * 3 + c;
                    const T* plane = pz + (((int64_t)f * C + q) * h) * w;
                    for (int y = 0; y < h; y++)
                        for (int x = 0; x < w; x++)
                            v.at(f, y * factor + dy, x * factor + dx, c) = (float)plane[(int64_t)y * w + x];
                }
    return v;
}

} // namespace vc

#endif
