#include "cvgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <limits>
#include <ostream>

#include "cvgan/common.hpp"

namespace cvgan {

double psnr(const Image& a, const Image& b, double peak) {
    if (a.h != b.h || a.w != b.w) throw ShapeError("psnr: image extents differ");
    if (!(peak > 0.0)) throw ContractError("psnr: peak must be > 0");
    double mse = 0.0;
    for (size_t i = 0; i < a.pix.size(); ++i) {
        double d = a.pix[i] - b.pix[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.pix.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

// ---------------------------------------------------------------------------
// UCIQE
// ---------------------------------------------------------------------------

namespace {

// sRGB [0,1] -> CIELab. White normalization uses the matrix row sums so a
// gray input lands exactly on the a=b=0 axis.
void rgb_to_lab(double r, double g, double b, double& L, double& A, double& B) {
    auto lin = [](double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); };
    double rl = lin(r), gl = lin(g), bl = lin(b);
    double x = (0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl) / (0.4124564 + 0.3575761 + 0.1804375);
    double y = (0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl) / (0.2126729 + 0.7151522 + 0.0721750);
    double z = (0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl) / (0.0193339 + 0.1191920 + 0.9503041);
    auto f = [](double t) {
        return t > 0.008856 ? std::cbrt(t) : (7.787 * t + 16.0 / 116.0);
    };
    double fx = f(x), fy = f(y), fz = f(z);
    L = 116.0 * fy - 16.0;
    A = 500.0 * (fx - fy);
    B = 200.0 * (fy - fz);
}

}  // namespace

double uciqe(const Image& img, const UciqeWeights& w) {
    const size_t n = img.pixels();
    if (n == 0) return 0.0;
    std::vector<double> lum(n), chroma(n);
    double sat_sum = 0.0;
    for (size_t p = 0; p < n; ++p) {
        double L, A, B;
        rgb_to_lab(img.pix[p * 3], img.pix[p * 3 + 1], img.pix[p * 3 + 2], L, A, B);
        lum[p] = L;
        chroma[p] = std::sqrt(A * A + B * B);
        double denom = std::sqrt(chroma[p] * chroma[p] + L * L);
        sat_sum += denom > 1e-12 ? chroma[p] / denom : 0.0;
    }
    double cmean = 0.0;
    for (double c : chroma) cmean += c;
    cmean /= static_cast<double>(n);
    double cvar = 0.0;
    for (double c : chroma) cvar += (c - cmean) * (c - cmean);
    double sigma_c = std::sqrt(cvar / static_cast<double>(n));

    // luminance contrast: top-1% mean minus bottom-1% mean
    std::vector<double> sorted = lum;
    std::sort(sorted.begin(), sorted.end());
    size_t k = std::max<size_t>(1, n / 100);
    double top = 0.0, bot = 0.0;
    for (size_t i = 0; i < k; ++i) {
        bot += sorted[i];
        top += sorted[n - 1 - i];
    }
    double con_l = (top - bot) / static_cast<double>(k);

    return w.chroma_std * sigma_c + w.luma_contrast * con_l + w.saturation * (sat_sum / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// UIQM family
// ---------------------------------------------------------------------------

namespace {

// mean with the lowest and highest 10% of samples dropped
double trimmed_mean(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t trim = v.size() / 10;
    double acc = 0.0;
    size_t count = 0;
    for (size_t i = trim; i < v.size() - trim; ++i) {
        acc += v[i];
        ++count;
    }
    return count ? acc / static_cast<double>(count) : 0.0;
}

double variance_about(const std::vector<double>& v, double mu) {
    double acc = 0.0;
    for (double x : v) acc += (x - mu) * (x - mu);
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double sobel_at(const std::vector<double>& ch, int h, int w, int y, int x) {
    auto px = [&](int yy, int xx) {
        yy = std::clamp(yy, 0, h - 1);
        xx = std::clamp(xx, 0, w - 1);
        return ch[static_cast<size_t>(yy) * w + xx];
    };
    double gx = px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1) -
                (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
    double gy = px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1) -
                (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
    return std::sqrt(gx * gx + gy * gy);
}

// iterate full blocks; images smaller than the block size count as one block
template <typename F>
void for_blocks(int h, int w, int block, F&& f) {
    int bh = std::min(block, h), bw = std::min(block, w);
    int ny = h / bh, nx = w / bw;
    for (int by = 0; by < ny; ++by)
        for (int bx = 0; bx < nx; ++bx) f(by * bh, bx * bw, bh, bw);
}

}  // namespace

double uicm(const Image& img) {
    const size_t n = img.pixels();
    std::vector<double> rg(n), yb(n);
    for (size_t p = 0; p < n; ++p) {
        double r = img.pix[p * 3], g = img.pix[p * 3 + 1], b = img.pix[p * 3 + 2];
        rg[p] = r - g;
        yb[p] = 0.5 * (r + g) - b;
    }
    double mu_rg = trimmed_mean(rg), mu_yb = trimmed_mean(yb);
    double var_rg = variance_about(rg, mu_rg), var_yb = variance_about(yb, mu_yb);
    return -0.0268 * std::sqrt(mu_rg * mu_rg + mu_yb * mu_yb) +
           0.1586 * std::sqrt(var_rg + var_yb);
}

double uism(const Image& img, int block) {
    const double lambda[3] = {0.299, 0.587, 0.114};
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> ch(img.pixels());
        for (size_t p = 0; p < ch.size(); ++p) ch[p] = img.pix[p * 3 + static_cast<size_t>(c)];
        // Sobel-weighted channel: edge magnitude times intensity
        std::vector<double> g(ch.size());
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                g[static_cast<size_t>(y) * img.w + x] =
                    sobel_at(ch, img.h, img.w, y, x) * ch[static_cast<size_t>(y) * img.w + x];
        double eme = 0.0;
        int blocks = 0;
        for_blocks(img.h, img.w, block, [&](int y0, int x0, int bh, int bw) {
            double mx = 0.0, mn = std::numeric_limits<double>::max();
            for (int y = y0; y < y0 + bh; ++y)
                for (int x = x0; x < x0 + bw; ++x) {
                    double v = g[static_cast<size_t>(y) * img.w + x];
                    mx = std::max(mx, v);
                    mn = std::min(mn, v);
                }
            ++blocks;
            if (mn > 1e-12 && mx > mn) eme += std::log(mx / mn);
        });
        if (blocks) total += lambda[c] * (2.0 / blocks) * eme;
    }
    return total;
}

double uiconm(const Image& img, int block) {
    std::vector<double> gray(img.pixels());
    for (size_t p = 0; p < gray.size(); ++p)
        gray[p] = (img.pix[p * 3] + img.pix[p * 3 + 1] + img.pix[p * 3 + 2]) / 3.0;
    double acc = 0.0;
    int blocks = 0;
    for_blocks(img.h, img.w, block, [&](int y0, int x0, int bh, int bw) {
        double mx = -std::numeric_limits<double>::max(), mn = std::numeric_limits<double>::max();
        for (int y = y0; y < y0 + bh; ++y)
            for (int x = x0; x < x0 + bw; ++x) {
                double v = gray[static_cast<size_t>(y) * img.w + x];
                mx = std::max(mx, v);
                mn = std::min(mn, v);
            }
        ++blocks;
        double denom = mx + mn;
        if (denom > 1e-12) {
            double c = (mx - mn) / denom;
            if (c > 1e-12) acc += c * std::log(c);
        }
    });
    return blocks ? -acc / blocks : 0.0;
}

double uiqm(const Image& img, const UiqmCoeffs& c) {
    double m1 = uicm(img), m2 = uism(img), m3 = uiconm(img);
    if (c.product_mode) return (c.c1 * m1) * (c.c2 * m2) * (c.c3 * m3);
    return c.c1 * m1 + c.c2 * m2 + c.c3 * m3;
}

// ---------------------------------------------------------------------------
// inception score
// ---------------------------------------------------------------------------

std::pair<double, double> inception_score(const std::vector<std::vector<double>>& class_probs,
                                          int splits) {
    if (splits < 1) throw ContractError("inception_score: splits must be >= 1");
    const size_t n = class_probs.size();
    if (n == 0 || n < static_cast<size_t>(splits))
        throw ContractError("inception_score: need at least one sample per split");
    const size_t k = class_probs[0].size();
    for (const auto& p : class_probs) {
        if (p.size() != k) throw ContractError("inception_score: inconsistent class counts");
        double sum = 0.0;
        for (double v : p) {
            if (v < -1e-12) throw ContractError("inception_score: negative probability");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6) throw ContractError("inception_score: probabilities must sum to 1");
    }
    std::vector<double> scores;
    for (int s = 0; s < splits; ++s) {
        size_t lo = n * static_cast<size_t>(s) / static_cast<size_t>(splits);
        size_t hi = n * static_cast<size_t>(s + 1) / static_cast<size_t>(splits);
        std::vector<double> marginal(k, 0.0);
        for (size_t i = lo; i < hi; ++i)
            for (size_t j = 0; j < k; ++j) marginal[j] += class_probs[i][j];
        for (double& m : marginal) m /= static_cast<double>(hi - lo);
        double kl_mean = 0.0;
        for (size_t i = lo; i < hi; ++i) {
            double kl = 0.0;
            for (size_t j = 0; j < k; ++j) {
                double p = class_probs[i][j];
                if (p > 1e-300 && marginal[j] > 1e-300) kl += p * std::log(p / marginal[j]);
            }
            kl_mean += kl;
        }
        kl_mean /= static_cast<double>(hi - lo);
        scores.push_back(std::exp(kl_mean));
    }
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(scores.size());
    return {mean, std::sqrt(var)};
}

// ---------------------------------------------------------------------------
// canny + edge distance
// ---------------------------------------------------------------------------

size_t EdgeMap::count() const {
    size_t n = 0;
    for (uint8_t v : mask) n += v;
    return n;
}

EdgeMap canny(const Image& img, double low, double high, double sigma) {
    if (!(low >= 0.0) || !(low < high)) throw ContractError("canny: need 0 <= low < high");
    const int h = img.h, w = img.w;
    std::vector<double> gray(img.pixels());
    for (size_t p = 0; p < gray.size(); ++p)
        gray[p] = 0.299 * img.pix[p * 3] + 0.587 * img.pix[p * 3 + 1] + 0.114 * img.pix[p * 3 + 2];

    if (sigma > 0.0) {
        int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
        std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
        double sum = 0.0;
        for (int i = -radius; i <= radius; ++i) {
            kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
            sum += kernel[static_cast<size_t>(i + radius)];
        }
        for (double& kv : kernel) kv /= sum;
        auto clampi = [](int v, int n) { return std::clamp(v, 0, n - 1); };
        std::vector<double> tmp(gray.size());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<size_t>(i + radius)] *
                           gray[static_cast<size_t>(y) * w + clampi(x + i, w)];
                tmp[static_cast<size_t>(y) * w + x] = acc;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<size_t>(i + radius)] *
                           tmp[static_cast<size_t>(clampi(y + i, h)) * w + x];
                gray[static_cast<size_t>(y) * w + x] = acc;
            }
    }

    std::vector<double> mag(gray.size(), 0.0), dx(gray.size(), 0.0), dy(gray.size(), 0.0);
    auto px = [&](int y, int x) {
        return gray[static_cast<size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double gx = px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
            double gy = px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
            dx[static_cast<size_t>(y) * w + x] = gx;
            dy[static_cast<size_t>(y) * w + x] = gy;
            mag[static_cast<size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
        }

    // non-maximum suppression with 4-sector direction quantization
    std::vector<uint8_t> nms(gray.size(), 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            size_t i = static_cast<size_t>(y) * w + x;
            double m = mag[i];
            if (m <= 0.0) continue;
            double angle = std::atan2(dy[i], dx[i]) * 180.0 / M_PI;
            if (angle < 0) angle += 180.0;
            int oy1, ox1, oy2, ox2;
            if (angle < 22.5 || angle >= 157.5) {
                oy1 = 0, ox1 = 1, oy2 = 0, ox2 = -1;  // horizontal gradient
            } else if (angle < 67.5) {
                oy1 = 1, ox1 = 1, oy2 = -1, ox2 = -1;
            } else if (angle < 112.5) {
                oy1 = 1, ox1 = 0, oy2 = -1, ox2 = 0;
            } else {
                oy1 = 1, ox1 = -1, oy2 = -1, ox2 = 1;
            }
            auto mg = [&](int yy, int xx) {
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
                return mag[static_cast<size_t>(yy) * w + xx];
            };
            if (m >= mg(y + oy1, x + ox1) && m >= mg(y + oy2, x + ox2)) nms[i] = 1;
        }

    // hysteresis: strong seeds flood through weak pixels (8-connected)
    EdgeMap out;
    out.h = h;
    out.w = w;
    out.mask.assign(gray.size(), 0);
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            size_t i = static_cast<size_t>(y) * w + x;
            if (nms[i] && mag[i] >= high) {
                out.mask[i] = 1;
                queue.emplace_back(y, x);
            }
        }
    while (!queue.empty()) {
        auto [y, x] = queue.front();
        queue.pop_front();
        for (int ddy = -1; ddy <= 1; ++ddy)
            for (int ddx = -1; ddx <= 1; ++ddx) {
                int yy = y + ddy, xx = x + ddx;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                size_t j = static_cast<size_t>(yy) * w + xx;
                if (!out.mask[j] && nms[j] && mag[j] >= low) {
                    out.mask[j] = 1;
                    queue.emplace_back(yy, xx);
                }
            }
    }
    return out;
}

double edge_distance(const EdgeMap& a, const EdgeMap& b) {
    if (a.h != b.h || a.w != b.w) throw ShapeError("edge_distance: extents differ");
    size_t disagree = 0;
    for (size_t i = 0; i < a.mask.size(); ++i) disagree += (a.mask[i] != b.mask[i]) ? 1 : 0;
    return std::sqrt(static_cast<double>(disagree));
}

// ---------------------------------------------------------------------------
// reporting
// ---------------------------------------------------------------------------

void MetricReport::finalize() {
    mean_psnr = mean_uciqe = mean_uiqm = mean_uicm = mean_uism = mean_uiconm = mean_edge = 0.0;
    psnr_count = edge_count = uciqe_count = uiqm_count = 0;
    for (const auto& r : rows) {
        if (r.has_psnr && std::isfinite(r.psnr)) {
            mean_psnr += r.psnr;
            ++psnr_count;
        }
        if (r.has_uciqe) {
            mean_uciqe += r.uciqe;
            ++uciqe_count;
        }
        if (r.has_uiqm) {
            mean_uiqm += r.uiqm;
            mean_uicm += r.uicm;
            mean_uism += r.uism;
            mean_uiconm += r.uiconm;
            ++uiqm_count;
        }
        if (r.has_edge) {
            mean_edge += r.edge_l2;
            ++edge_count;
        }
    }
    if (psnr_count) mean_psnr /= psnr_count;
    if (uciqe_count) mean_uciqe /= uciqe_count;
    if (uiqm_count) {
        mean_uiqm /= uiqm_count;
        mean_uicm /= uiqm_count;
        mean_uism /= uiqm_count;
        mean_uiconm /= uiqm_count;
    }
    if (edge_count) mean_edge /= edge_count;
}

namespace {

std::string fmt_metric(bool available, double v) {
    if (!available) return "n/a";
    if (std::isinf(v)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

void MetricReport::write_table(std::ostream& os) const {
    os << std::left << std::setw(28) << "image" << std::setw(10) << "psnr" << std::setw(10) << "uciqe"
       << std::setw(10) << "uiqm" << std::setw(10) << "uicm" << std::setw(10) << "uism" << std::setw(10)
       << "uiconm" << std::setw(10) << "edge_l2" << "\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(28) << r.path << std::setw(10) << fmt_metric(r.has_psnr, r.psnr)
           << std::setw(10) << fmt_metric(r.has_uciqe, r.uciqe) << std::setw(10)
           << fmt_metric(r.has_uiqm, r.uiqm) << std::setw(10) << fmt_metric(r.has_uiqm, r.uicm)
           << std::setw(10) << fmt_metric(r.has_uiqm, r.uism) << std::setw(10)
           << fmt_metric(r.has_uiqm, r.uiconm) << std::setw(10) << fmt_metric(r.has_edge, r.edge_l2)
           << "\n";
    }
    os << std::left << std::setw(28) << "mean" << std::setw(10) << fmt_metric(psnr_count > 0, mean_psnr)
       << std::setw(10) << fmt_metric(uciqe_count > 0, mean_uciqe) << std::setw(10)
       << fmt_metric(uiqm_count > 0, mean_uiqm) << std::setw(10) << fmt_metric(uiqm_count > 0, mean_uicm)
       << std::setw(10) << fmt_metric(uiqm_count > 0, mean_uism) << std::setw(10)
       << fmt_metric(uiqm_count > 0, mean_uiconm) << std::setw(10) << fmt_metric(edge_count > 0, mean_edge)
       << "\n";
}

void MetricReport::write_kv(std::ostream& os) const {
    for (const auto& r : rows) {
        os << "path=" << r.path;
        os << " psnr=" << fmt_metric(r.has_psnr, r.psnr);
        os << " uciqe=" << fmt_metric(r.has_uciqe, r.uciqe);
        os << " uiqm=" << fmt_metric(r.has_uiqm, r.uiqm);
        os << " uicm=" << fmt_metric(r.has_uiqm, r.uicm);
        os << " uism=" << fmt_metric(r.has_uiqm, r.uism);
        os << " uiconm=" << fmt_metric(r.has_uiqm, r.uiconm);
        os << " edge_l2=" << fmt_metric(r.has_edge, r.edge_l2);
        os << "\n";
    }
}

}  // namespace cvgan
