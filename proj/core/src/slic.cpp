#include "subsel/slic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "subsel/errors.hpp"

namespace subsel {

namespace {

struct Cluster {
    double y = 0.0, x = 0.0;
    std::vector<double> color;
    double max_color_dist = 0.0;  // adaptive normalizer, refreshed each iteration
};

double color_dist2(const Image& img, std::size_t pixel, const std::vector<double>& color) {
    double acc = 0.0;
    for (int c = 0; c < img.channels; ++c) {
        const double d = img.data[static_cast<std::size_t>(c) * img.pixel_count() + pixel] - color[static_cast<std::size_t>(c)];
        acc += d * d;
    }
    return acc;
}

// Squared intensity gradient, summed over channels; used to nudge seeds
// off edges.
double gradient2(const Image& img, int y, int x) {
    const int yl = std::max(0, y - 1), yr = std::min(img.height - 1, y + 1);
    const int xl = std::max(0, x - 1), xr = std::min(img.width - 1, x + 1);
    double acc = 0.0;
    for (int c = 0; c < img.channels; ++c) {
        const double gy = img.at(c, yr, x) - img.at(c, yl, x);
        const double gx = img.at(c, y, xr) - img.at(c, y, xl);
        acc += gy * gy + gx * gx;
    }
    return acc;
}

// Connected components under 4-adjacency; returns component id per pixel
// and fills sizes/min pixel index per component.
int label_components(const std::vector<int>& labels, int h, int w, std::vector<int>& comp,
                     std::vector<std::int64_t>& comp_size, std::vector<int>& comp_label,
                     std::vector<int>& comp_min_pixel) {
    comp.assign(labels.size(), -1);
    comp_size.clear();
    comp_label.clear();
    comp_min_pixel.clear();
    int count = 0;
    std::vector<int> stack;
    for (int p = 0; p < static_cast<int>(labels.size()); ++p) {
        if (comp[static_cast<std::size_t>(p)] >= 0) {
            continue;
        }
        const int lab = labels[static_cast<std::size_t>(p)];
        comp_size.push_back(0);
        comp_label.push_back(lab);
        comp_min_pixel.push_back(p);
        stack.assign(1, p);
        comp[static_cast<std::size_t>(p)] = count;
        while (!stack.empty()) {
            const int q = stack.back();
            stack.pop_back();
            ++comp_size[static_cast<std::size_t>(count)];
            const int qy = q / w, qx = q % w;
            const int neigh[4] = {q - w, q + w, q - 1, q + 1};
            const bool ok[4] = {qy > 0, qy < h - 1, qx > 0, qx < w - 1};
            for (int i = 0; i < 4; ++i) {
                if (!ok[i]) continue;
                const int r = neigh[i];
                if (comp[static_cast<std::size_t>(r)] < 0 && labels[static_cast<std::size_t>(r)] == lab) {
                    comp[static_cast<std::size_t>(r)] = count;
                    stack.push_back(r);
                }
            }
        }
        ++count;
    }
    return count;
}

// Merges orphan components (everything but each label's largest component)
// into the largest adjacent superpixel until every label is 4-connected.
void enforce_connectivity(std::vector<int>& labels, int h, int w) {
    const int pixel_count = h * w;
    std::vector<int> comp;
    std::vector<std::int64_t> comp_size;
    std::vector<int> comp_label;
    std::vector<int> comp_min_pixel;

    for (int guard = 0; guard <= pixel_count; ++guard) {
        const int count = label_components(labels, h, w, comp, comp_size, comp_label, comp_min_pixel);

        // main component per label: largest, ties to the earliest in raster order
        std::vector<int> main_comp;  // label -> comp id
        int max_label = 0;
        for (int c = 0; c < count; ++c) {
            max_label = std::max(max_label, comp_label[static_cast<std::size_t>(c)]);
        }
        main_comp.assign(static_cast<std::size_t>(max_label) + 1, -1);
        for (int c = 0; c < count; ++c) {
            const int lab = comp_label[static_cast<std::size_t>(c)];
            int& best = main_comp[static_cast<std::size_t>(lab)];
            if (best < 0 || comp_size[static_cast<std::size_t>(c)] > comp_size[static_cast<std::size_t>(best)] ||
                (comp_size[static_cast<std::size_t>(c)] == comp_size[static_cast<std::size_t>(best)] &&
                 comp_min_pixel[static_cast<std::size_t>(c)] < comp_min_pixel[static_cast<std::size_t>(best)])) {
                best = c;
            }
        }

        // first orphan in raster order
        int orphan = -1;
        for (int c = 0; c < count; ++c) {
            if (main_comp[static_cast<std::size_t>(comp_label[static_cast<std::size_t>(c)])] != c) {
                if (orphan < 0 || comp_min_pixel[static_cast<std::size_t>(c)] <
                                      comp_min_pixel[static_cast<std::size_t>(orphan)]) {
                    orphan = c;
                }
            }
        }
        if (orphan < 0) {
            return;  // every label connected
        }

        std::vector<std::int64_t> label_area(static_cast<std::size_t>(max_label) + 1, 0);
        for (int p = 0; p < pixel_count; ++p) {
            ++label_area[static_cast<std::size_t>(labels[static_cast<std::size_t>(p)])];
        }

        // largest adjacent superpixel, ties to the lower label
        int target = -1;
        for (int p = 0; p < pixel_count; ++p) {
            if (comp[static_cast<std::size_t>(p)] != orphan) continue;
            const int py = p / w, px = p % w;
            const int neigh[4] = {p - w, p + w, p - 1, p + 1};
            const bool ok[4] = {py > 0, py < h - 1, px > 0, px < w - 1};
            for (int i = 0; i < 4; ++i) {
                if (!ok[i]) continue;
                const int lab = labels[static_cast<std::size_t>(neigh[i])];
                if (lab == comp_label[static_cast<std::size_t>(orphan)]) continue;
                if (target < 0 || label_area[static_cast<std::size_t>(lab)] > label_area[static_cast<std::size_t>(target)] ||
                    (label_area[static_cast<std::size_t>(lab)] == label_area[static_cast<std::size_t>(target)] &&
                     lab < target)) {
                    target = lab;
                }
            }
        }
        if (target < 0) {
            return;  // single component image; nothing to merge into
        }
        for (int p = 0; p < pixel_count; ++p) {
            if (comp[static_cast<std::size_t>(p)] == orphan) {
                labels[static_cast<std::size_t>(p)] = target;
            }
        }
    }
    throw NumericError("slic: connectivity enforcement did not converge");
}

}  // namespace

std::vector<int> slic_labels(const Image& image, const SlicConfig& config, int* label_count) {
    if (config.k < 2) {
        throw ConfigError("slic: k must be >= 2");
    }
    if (image.height < 1 || image.width < 1) {
        throw ConfigError("slic: empty image");
    }
    if (static_cast<std::int64_t>(config.k) > static_cast<std::int64_t>(image.height) * image.width) {
        throw ConfigError("slic: k exceeds pixel count");
    }
    if (config.iterations < 1 || config.compactness <= 0.0) {
        throw ConfigError("slic: iterations must be >= 1 and compactness > 0");
    }

    const int h = image.height, w = image.width;
    const int pixel_count = h * w;
    const double spacing = std::sqrt(static_cast<double>(pixel_count) / config.k);

    // Grid seeds, nudged to the lowest-gradient pixel in a 3x3 window.
    const int ny = std::max(1, static_cast<int>(std::lround(h / spacing)));
    const int nx = std::max(1, static_cast<int>(std::lround(w / spacing)));
    std::vector<Cluster> clusters;
    for (int i = 0; i < ny; ++i) {
        for (int j = 0; j < nx; ++j) {
            int sy = static_cast<int>((i + 0.5) * h / ny);
            int sx = static_cast<int>((j + 0.5) * w / nx);
            sy = std::clamp(sy, 0, h - 1);
            sx = std::clamp(sx, 0, w - 1);
            int best_y = sy, best_x = sx;
            double best_g = std::numeric_limits<double>::infinity();
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = sy + dy, xx = sx + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    const double grad = gradient2(image, yy, xx);
                    if (grad < best_g) {
                        best_g = grad;
                        best_y = yy;
                        best_x = xx;
                    }
                }
            }
            Cluster c;
            c.y = best_y;
            c.x = best_x;
            c.color.resize(static_cast<std::size_t>(image.channels));
            for (int ch = 0; ch < image.channels; ++ch) {
                c.color[static_cast<std::size_t>(ch)] = image.at(ch, best_y, best_x);
            }
            c.max_color_dist = config.compactness;
            clusters.push_back(std::move(c));
        }
    }

    const double window = 2.0 * spacing;
    const double inv_s2 = 1.0 / (spacing * spacing);
    const double fixed_ratio = (config.compactness * config.compactness) * inv_s2;

    std::vector<int> labels(static_cast<std::size_t>(pixel_count), -1);
    std::vector<double> best_dist(static_cast<std::size_t>(pixel_count));

    for (int iter = 0; iter < config.iterations; ++iter) {
        std::fill(labels.begin(), labels.end(), -1);
        std::fill(best_dist.begin(), best_dist.end(), std::numeric_limits<double>::infinity());

        for (std::size_t ci = 0; ci < clusters.size(); ++ci) {
            const Cluster& c = clusters[ci];
            const int y0 = std::max(0, static_cast<int>(std::floor(c.y - window)));
            const int y1 = std::min(h - 1, static_cast<int>(std::ceil(c.y + window)));
            const int x0 = std::max(0, static_cast<int>(std::floor(c.x - window)));
            const int x1 = std::min(w - 1, static_cast<int>(std::ceil(c.x + window)));
            const double mc2 = std::max(c.max_color_dist * c.max_color_dist, 1e-12);
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * w + x;
                    const double dc2 = color_dist2(image, p, c.color);
                    const double ds2 =
                        (y - c.y) * (y - c.y) + (x - c.x) * (x - c.x);
                    const double dist = config.adaptive ? dc2 / mc2 + ds2 * inv_s2
                                                        : dc2 + ds2 * fixed_ratio;
                    if (dist < best_dist[p]) {
                        best_dist[p] = dist;
                        labels[p] = static_cast<int>(ci);
                    }
                }
            }
        }

        // Pixels outside every window (possible with rounded grids): nearest
        // center over all clusters.
        for (int p = 0; p < pixel_count; ++p) {
            if (labels[static_cast<std::size_t>(p)] >= 0) continue;
            const int y = p / w, x = p % w;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t ci = 0; ci < clusters.size(); ++ci) {
                const Cluster& c = clusters[ci];
                const double mc2 = std::max(c.max_color_dist * c.max_color_dist, 1e-12);
                const double dc2 = color_dist2(image, static_cast<std::size_t>(p), c.color);
                const double ds2 = (y - c.y) * (y - c.y) + (x - c.x) * (x - c.x);
                const double dist =
                    config.adaptive ? dc2 / mc2 + ds2 * inv_s2 : dc2 + ds2 * fixed_ratio;
                if (dist < best) {
                    best = dist;
                    labels[static_cast<std::size_t>(p)] = static_cast<int>(ci);
                }
            }
        }

        // Update centers; refresh the adaptive color normalizer.
        std::vector<double> sum_y(clusters.size(), 0.0), sum_x(clusters.size(), 0.0);
        std::vector<std::int64_t> counts(clusters.size(), 0);
        std::vector<std::vector<double>> sum_color(
            clusters.size(), std::vector<double>(static_cast<std::size_t>(image.channels), 0.0));
        std::vector<double> max_dc(clusters.size(), 0.0);
        for (int p = 0; p < pixel_count; ++p) {
            const int lab = labels[static_cast<std::size_t>(p)];
            const int y = p / w, x = p % w;
            sum_y[static_cast<std::size_t>(lab)] += y;
            sum_x[static_cast<std::size_t>(lab)] += x;
            ++counts[static_cast<std::size_t>(lab)];
            for (int ch = 0; ch < image.channels; ++ch) {
                sum_color[static_cast<std::size_t>(lab)][static_cast<std::size_t>(ch)] +=
                    image.data[static_cast<std::size_t>(ch) * image.pixel_count() + static_cast<std::size_t>(p)];
            }
            max_dc[static_cast<std::size_t>(lab)] = std::max(
                max_dc[static_cast<std::size_t>(lab)],
                std::sqrt(color_dist2(image, static_cast<std::size_t>(p),
                                      clusters[static_cast<std::size_t>(lab)].color)));
        }
        for (std::size_t ci = 0; ci < clusters.size(); ++ci) {
            if (counts[ci] == 0) continue;  // empty cluster keeps its center
            clusters[ci].y = sum_y[ci] / static_cast<double>(counts[ci]);
            clusters[ci].x = sum_x[ci] / static_cast<double>(counts[ci]);
            for (int ch = 0; ch < image.channels; ++ch) {
                clusters[ci].color[static_cast<std::size_t>(ch)] =
                    sum_color[ci][static_cast<std::size_t>(ch)] / static_cast<double>(counts[ci]);
            }
            if (config.adaptive) {
                clusters[ci].max_color_dist = std::max(max_dc[ci], 1e-6);
            }
        }
    }

    enforce_connectivity(labels, h, w);

    // Compact labels to 0..count-1 in order of first appearance.
    std::vector<int> remap(clusters.size(), -1);
    int next = 0;
    for (int p = 0; p < pixel_count; ++p) {
        int& lab = labels[static_cast<std::size_t>(p)];
        if (remap[static_cast<std::size_t>(lab)] < 0) {
            remap[static_cast<std::size_t>(lab)] = next++;
        }
        lab = remap[static_cast<std::size_t>(lab)];
    }
    if (label_count != nullptr) {
        *label_count = next;
    }
    return labels;
}

CandidateSet slic_candidates(const Image& image, const SlicConfig& config, std::vector<double> fill) {
    if (static_cast<int>(fill.size()) != image.channels) {
        throw ConfigError("slic_candidates: fill must provide one value per channel");
    }
    int count = 0;
    const std::vector<int> labels = slic_labels(image, config, &count);

    CandidateSet set;
    set.base_image = image;
    set.fill = std::move(fill);
    set.regions.resize(static_cast<std::size_t>(count));
    for (int r = 0; r < count; ++r) {
        set.regions[static_cast<std::size_t>(r)].id = r;
        set.regions[static_cast<std::size_t>(r)].mask.assign(image.pixel_count(), 0u);
    }
    for (std::size_t p = 0; p < labels.size(); ++p) {
        Region& r = set.regions[static_cast<std::size_t>(labels[p])];
        r.mask[p] = 1u;
        ++r.area;
    }
    set.elements.resize(static_cast<std::size_t>(count));
    for (int e = 0; e < count; ++e) {
        set.elements[static_cast<std::size_t>(e)].id = e;
        set.elements[static_cast<std::size_t>(e)].region_ids = {e};
    }
    return set;
}

}  // namespace subsel
