#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "driver.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace nexp {

enum class ArchitectureKind { Free, Separable, BoundedInteraction, MonotoneY, IcnnYZ };
enum class Activation { Tanh, Sigmoid, Softplus, Relu, Identity };
enum class WeightSign : std::uint8_t { Free, NonNegative, NonPositive };

inline std::string to_string(ArchitectureKind k) {
    switch (k) {
        case ArchitectureKind::Free: return "free";
        case ArchitectureKind::Separable: return "separable";
        case ArchitectureKind::BoundedInteraction: return "bounded-interaction";
        case ArchitectureKind::MonotoneY: return "monotone-y";
        case ArchitectureKind::IcnnYZ: return "icnn-yz";
    }
    return "?";
}

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Softplus: return "softplus";
        case Activation::Relu: return "relu";
        case Activation::Identity: return "identity";
    }
    return "?";
}

inline ArchitectureKind parse_architecture(const std::string& s) {
    for (auto k : {ArchitectureKind::Free, ArchitectureKind::Separable, ArchitectureKind::BoundedInteraction,
                   ArchitectureKind::MonotoneY, ArchitectureKind::IcnnYZ})
        if (to_string(k) == s) return k;
    fail(ErrorKind::InvalidArchitecture, "unknown architecture '" + s + "'");
}

inline Activation parse_activation(const std::string& s) {
    for (auto a : {Activation::Tanh, Activation::Sigmoid, Activation::Softplus, Activation::Relu, Activation::Identity})
        if (to_string(a) == s) return a;
    fail(ErrorKind::InvalidArchitecture, "unknown activation '" + s + "'");
}

inline double softplus(double v) noexcept { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
inline double sigmoid(double v) noexcept {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}
/// Raw value whose softplus is w (w > 0).
inline double softplus_inverse(double w) { return w > 30 ? w : std::log(std::expm1(w)); }

struct NetLayout {
    std::size_t state_dim = 1;
    std::size_t noise_dim = 1;
    std::vector<std::size_t> hidden{8, 8};
    std::optional<Activation> activation;  // default: softplus for icnn-yz, tanh otherwise
    /// The y-only network N2 (separable) or the pair N2, N3 (bounded-interaction).
    std::optional<std::vector<std::size_t>> aux_hidden;
    std::optional<Activation> aux_activation;
    bool aux_monotone = true;  // separable: N2 built non-increasing
    double bound = 1.0;        // M2
    double init_scale = 1.0;
};

/// Constrained feed-forward driver. The global input is u = (t, x, y, z);
/// each sub-network reads a subset of u.
class DriverNet final : public Driver {
public:
    struct Layer {
        std::size_t width = 0;
        std::size_t w_off = 0;   // hidden-to-hidden weights (width × prev width), layers ≥ 1
        std::size_t in_off = 0;  // direct input weights (width × inputs), layer 0 or skip
        std::size_t b_off = 0;
        bool has_hidden = false;
        bool has_input = false;
    };
    struct SubNet {
        std::vector<std::size_t> inputs;
        std::vector<Layer> layers;  // last one has width 1 and no activation
        Activation act = Activation::Tanh;
        double out_bound = 0.0;  // > 0: output = bound·tanh(s)
        std::size_t units = 0;
    };

    DriverNet(ArchitectureKind kind, NetLayout layout, std::vector<double> theta)
        : kind_(kind), layout_(std::move(layout)) {
        build_structure();
        if (theta.size() != n_params_)
            fail(ErrorKind::InvalidArgument, "parameter vector has length " + std::to_string(theta.size()) +
                                                 ", net expects " + std::to_string(n_params_));
        for (double v : theta)
            if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "non-finite network parameter");
        theta_ = std::move(theta);
        refresh_effective();
    }

    static std::shared_ptr<const DriverNet> build(ArchitectureKind kind, const NetLayout& layout, std::uint64_t init_seed) {
        DriverNet probe(kind, layout);
        SeqRng rng(init_seed, 0x6e6574);
        std::vector<double> th(probe.n_params_);
        const double s = layout.init_scale;
        for (const auto& net : probe.subnets_) {
            for (std::size_t l = 0; l < net.layers.size(); ++l) {
                const Layer& L = net.layers[l];
                if (L.has_hidden) {
                    const std::size_t fan = net.layers[l - 1].width;
                    const std::size_t cnt = L.width * fan;
                    for (std::size_t i = 0; i < cnt; ++i) th[L.w_off + i] = probe.init_weight(probe.sign_[L.w_off + i], fan, s, rng);
                }
                if (L.has_input) {
                    const std::size_t fan = net.inputs.size();
                    const std::size_t cnt = L.width * fan;
                    for (std::size_t i = 0; i < cnt; ++i)
                        th[L.in_off + i] = probe.init_weight(probe.sign_[L.in_off + i], fan, s, rng);
                }
                for (std::size_t i = 0; i < L.width; ++i) th[L.b_off + i] = 0.1 * s * rng.normal();
            }
        }
        return std::make_shared<DriverNet>(kind, layout, std::move(th));
    }

    ArchitectureKind kind() const noexcept { return kind_; }
    const NetLayout& layout() const noexcept { return layout_; }
    Activation activation() const noexcept { return subnets_.front().act; }
    const std::vector<SubNet>& subnets() const noexcept { return subnets_; }

    std::size_t state_dim() const override { return layout_.state_dim; }
    std::size_t noise_dim() const override { return layout_.noise_dim; }
    std::size_t param_count() const override { return n_params_; }
    std::vector<double> params() const override { return theta_; }
    const std::vector<double>& raw() const noexcept { return theta_; }
    /// Effective (transformed) weights, aligned with raw().
    const std::vector<double>& effective() const noexcept { return eff_; }
    const std::vector<WeightSign>& signs() const noexcept { return sign_; }

    DriverPtr with_params(std::span<const double> th) const override { return with_raw(std::vector<double>(th.begin(), th.end())); }
    std::shared_ptr<const DriverNet> with_raw(std::vector<double> th) const {
        return std::make_shared<DriverNet>(kind_, layout_, std::move(th));
    }

    bool y_independent() const override { return false; }
    std::string describe() const override { return "net:" + to_string(kind_); }

    double value(double t, std::span<const double> x, double y, std::span<const double> z) const override {
        Scratch& s = scratch();
        load_input(t, x, y, z, s.u);
        double out = 0.0;
        for (std::size_t n = 0; n < subnets_.size(); ++n) s.out[n] = forward(subnets_[n], s.u.data(), s.acts[n]);
        combine(s.out, out);
        return out;
    }

    void gradients(double t, std::span<const double> x, double y, std::span<const double> z, DriverGradients& g) const override {
        Scratch& s = scratch();
        load_input(t, x, y, z, s.u);
        for (std::size_t n = 0; n < subnets_.size(); ++n) s.out[n] = forward(subnets_[n], s.u.data(), s.acts[n]);
        combine(s.out, g.value);
        // d output / d subnet output
        double w[3] = {1.0, 1.0, 1.0};
        if (kind_ == ArchitectureKind::BoundedInteraction) {
            w[1] = s.out[2];
            w[2] = s.out[1];
        }
        std::fill(s.du.begin(), s.du.end(), 0.0);
        g.dtheta.assign(n_params_, 0.0);
        for (std::size_t n = 0; n < subnets_.size(); ++n) backward(subnets_[n], s.u.data(), s.acts[n], w[n], s.du, g.dtheta);
        const std::size_t nx = layout_.state_dim;
        g.dy = s.du[1 + nx];
        g.dz.assign(s.du.begin() + static_cast<std::ptrdiff_t>(2 + nx), s.du.end());
    }

    /// Output of one sub-network (0 = main; 1, 2 = auxiliary) at a point.
    double subnet_output(std::size_t n, double t, std::span<const double> x, double y, std::span<const double> z) const {
        Scratch& s = scratch();
        load_input(t, x, y, z, s.u);
        return forward(subnets_.at(n), s.u.data(), s.acts[n]);
    }

    /// Text form: header lines then one raw parameter per line, shortest
    /// round-trip decimal.
    std::string serialize() const {
        std::ostringstream os;
        os << "nexp-driver-net 1\n";
        os << "kind " << to_string(kind_) << "\n";
        os << "state_dim " << layout_.state_dim << "\n";
        os << "noise_dim " << layout_.noise_dim << "\n";
        os << "hidden";
        for (auto w : layout_.hidden) os << ' ' << w;
        os << "\nactivation " << to_string(subnets_.front().act) << "\n";
        if (layout_.aux_hidden) {
            os << "aux_hidden";
            for (auto w : *layout_.aux_hidden) os << ' ' << w;
            os << "\naux_activation " << to_string(subnets_.size() > 1 ? subnets_[1].act : Activation::Tanh) << "\n";
            os << "aux_monotone " << (layout_.aux_monotone ? 1 : 0) << "\n";
            os << "bound " << format_double(layout_.bound) << "\n";
        }
        os << "params " << theta_.size() << "\n";
        for (double v : theta_) os << format_double(v) << "\n";
        return os.str();
    }

    static std::shared_ptr<const DriverNet> parse(const std::string& text) {
        std::istringstream is(text);
        std::string line, key;
        std::getline(is, line);
        if (line != "nexp-driver-net 1") fail(ErrorKind::InvalidArgument, "not a driver-net file (bad header)");
        NetLayout layout;
        layout.aux_hidden.reset();
        std::optional<ArchitectureKind> kind;
        std::vector<double> theta;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            ls >> key;
            if (key == "kind") {
                std::string v;
                ls >> v;
                kind = parse_architecture(v);
            } else if (key == "state_dim") {
                ls >> layout.state_dim;
            } else if (key == "noise_dim") {
                ls >> layout.noise_dim;
            } else if (key == "hidden") {
                layout.hidden.clear();
                std::size_t w;
                while (ls >> w) layout.hidden.push_back(w);
            } else if (key == "activation") {
                std::string v;
                ls >> v;
                layout.activation = parse_activation(v);
            } else if (key == "aux_hidden") {
                layout.aux_hidden.emplace();
                std::size_t w;
                while (ls >> w) layout.aux_hidden->push_back(w);
            } else if (key == "aux_activation") {
                std::string v;
                ls >> v;
                layout.aux_activation = parse_activation(v);
            } else if (key == "aux_monotone") {
                int v = 1;
                ls >> v;
                layout.aux_monotone = v != 0;
            } else if (key == "bound") {
                std::string v;
                ls >> v;
                layout.bound = parse_double(v);
            } else if (key == "params") {
                std::size_t n = 0;
                ls >> n;
                theta.reserve(n);
                for (std::size_t i = 0; i < n; ++i) {
                    if (!std::getline(is, line)) fail(ErrorKind::InvalidArgument, "driver-net file ends early");
                    theta.push_back(parse_double(line));
                }
            } else {
                fail(ErrorKind::InvalidArgument, "unknown driver-net field '" + key + "'");
            }
        }
        if (!kind) fail(ErrorKind::InvalidArgument, "driver-net file lacks a kind");
        return std::make_shared<DriverNet>(*kind, layout, std::move(theta));
    }

    static std::string format_double(double v) {
        char buf[64];
        auto r = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, r.ptr);
    }
    static double parse_double(const std::string& s) {
        double v = 0.0;
        auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc()) fail(ErrorKind::InvalidArgument, "bad number '" + s + "' in driver-net file");
        return v;
    }

private:
    struct Scratch {
        std::vector<double> u, du;
        std::vector<double> acts[3];
        double out[3] = {0, 0, 0};
    };

    // structure only, used by build() before parameters exist
    DriverNet(ArchitectureKind kind, NetLayout layout) : kind_(kind), layout_(std::move(layout)) { build_structure(); }

    Scratch& scratch() const {
        thread_local Scratch s;
        const std::size_t n_in = 2 + layout_.state_dim + layout_.noise_dim;
        s.u.resize(n_in);
        s.du.resize(n_in);
        for (std::size_t n = 0; n < subnets_.size(); ++n)
            if (s.acts[n].size() < 2 * subnets_[n].units) s.acts[n].resize(2 * subnets_[n].units);
        return s;
    }

    void load_input(double t, std::span<const double> x, double y, std::span<const double> z, std::vector<double>& u) const {
        if (x.size() != layout_.state_dim || z.size() != layout_.noise_dim)
            fail(ErrorKind::InvalidArgument, "driver-net input dimensions do not match the layout");
        u[0] = t;
        for (std::size_t i = 0; i < x.size(); ++i) u[1 + i] = x[i];
        u[1 + x.size()] = y;
        for (std::size_t j = 0; j < z.size(); ++j) u[2 + x.size() + j] = z[j];
        for (double v : u)
            if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "non-finite driver input");
    }

    void combine(const double* o, double& out) const {
        switch (kind_) {
            case ArchitectureKind::Separable: out = o[0] + o[1]; break;
            case ArchitectureKind::BoundedInteraction: out = o[0] + o[1] * o[2]; break;
            default: out = o[0];
        }
    }

    static double activate(Activation a, double v) noexcept {
        switch (a) {
            case Activation::Tanh: return std::tanh(v);
            case Activation::Sigmoid: return sigmoid(v);
            case Activation::Softplus: return softplus(v);
            case Activation::Relu: return v > 0 ? v : 0.0;
            case Activation::Identity: return v;
        }
        return v;
    }
    // derivative from pre-activation v and activation value a
    static double activate_d(Activation act, double v, double a) noexcept {
        switch (act) {
            case Activation::Tanh: return 1.0 - a * a;
            case Activation::Sigmoid: return a * (1.0 - a);
            case Activation::Softplus: return sigmoid(v);
            case Activation::Relu: return v >= 0 ? 1.0 : 0.0;  // right-derivative at the kink
            case Activation::Identity: return 1.0;
        }
        return 1.0;
    }

    // acts layout: per layer, [pre (width)] then [post (width)], packed
    double forward(const SubNet& net, const double* u, std::vector<double>& acts) const {
        std::size_t off = 0, prev_off = 0, prev_w = 0;
        const std::size_t n_in = net.inputs.size();
        const std::size_t L = net.layers.size();
        double out = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            const Layer& Ly = net.layers[l];
            double* pre = acts.data() + off;
            double* post = pre + Ly.width;
            const double* prev = acts.data() + prev_off + prev_w;
            for (std::size_t i = 0; i < Ly.width; ++i) {
                double v = eff_[Ly.b_off + i];
                if (Ly.has_hidden) {
                    const double* w = eff_.data() + Ly.w_off + i * prev_w;
                    for (std::size_t j = 0; j < prev_w; ++j) v += w[j] * prev[j];
                }
                if (Ly.has_input) {
                    const double* w = eff_.data() + Ly.in_off + i * n_in;
                    for (std::size_t c = 0; c < n_in; ++c) v += w[c] * u[net.inputs[c]];
                }
                pre[i] = v;
                post[i] = (l + 1 < L) ? activate(net.act, v) : v;
            }
            if (l + 1 == L) out = pre[0];
            prev_off = off;
            prev_w = Ly.width;
            off += 2 * Ly.width;
        }
        if (net.out_bound > 0) out = net.out_bound * std::tanh(out);
        return out;
    }

    void backward(const SubNet& net, const double* u, std::vector<double>& acts, double dout, std::vector<double>& du,
                  std::vector<double>& dtheta) const {
        const std::size_t L = net.layers.size();
        const std::size_t n_in = net.inputs.size();
        std::vector<std::size_t> offs(L);
        std::size_t off = 0;
        for (std::size_t l = 0; l < L; ++l) {
            offs[l] = off;
            off += 2 * net.layers[l].width;
        }
        thread_local std::vector<double> delta, delta_prev;
        // output layer (linear, optionally squashed)
        double d_last = dout;
        if (net.out_bound > 0) {
            const double th = std::tanh(acts[offs[L - 1]]);
            d_last *= net.out_bound * (1.0 - th * th);
        }
        delta.assign(1, d_last);
        for (std::size_t l = L; l-- > 0;) {
            const Layer& Ly = net.layers[l];
            for (std::size_t i = 0; i < Ly.width; ++i) dtheta[Ly.b_off + i] += delta[i];
            if (Ly.has_input) {
                for (std::size_t i = 0; i < Ly.width; ++i) {
                    const double di = delta[i];
                    if (di == 0.0) continue;
                    for (std::size_t c = 0; c < n_in; ++c) {
                        const std::size_t k = Ly.in_off + i * n_in + c;
                        dtheta[k] += di * u[net.inputs[c]] * deff_[k];
                        du[net.inputs[c]] += di * eff_[k];
                    }
                }
            }
            if (!Ly.has_hidden) break;
            const Layer& Prev = net.layers[l - 1];
            const double* pre_prev = acts.data() + offs[l - 1];
            const double* post_prev = pre_prev + Prev.width;
            delta_prev.assign(Prev.width, 0.0);
            for (std::size_t i = 0; i < Ly.width; ++i) {
                const double di = delta[i];
                const std::size_t row = Ly.w_off + i * Prev.width;
                for (std::size_t j = 0; j < Prev.width; ++j) {
                    dtheta[row + j] += di * post_prev[j] * deff_[row + j];
                    delta_prev[j] += di * eff_[row + j];
                }
            }
            for (std::size_t j = 0; j < Prev.width; ++j) delta_prev[j] *= activate_d(net.act, pre_prev[j], post_prev[j]);
            std::swap(delta, delta_prev);
        }
    }

    double init_weight(WeightSign s, std::size_t fan, double scale, SeqRng& rng) const {
        const double sd = scale / std::sqrt(static_cast<double>(std::max<std::size_t>(fan, 1)));
        if (s == WeightSign::Free) return sd * rng.normal();
        // centred so the effective weight is about scale/fan
        const double centre = softplus_inverse(scale / static_cast<double>(std::max<std::size_t>(fan, 1)));
        return centre + 0.5 * rng.normal();
    }

    SubNet make_subnet(std::vector<std::size_t> inputs, const std::vector<std::size_t>& hidden, Activation act, bool skip,
                       WeightSign hidden_sign, const std::vector<WeightSign>& input_sign, double bound) {
        SubNet net;
        net.inputs = std::move(inputs);
        net.act = act;
        net.out_bound = bound;
        std::vector<std::size_t> widths = hidden;
        widths.push_back(1);
        for (std::size_t l = 0; l < widths.size(); ++l) {
            if (widths[l] == 0) fail(ErrorKind::InvalidArchitecture, "layer widths must be positive");
            Layer Ly;
            Ly.width = widths[l];
            Ly.has_hidden = l > 0;
            Ly.has_input = l == 0 || skip;
            if (Ly.has_hidden) {
                Ly.w_off = n_params_;
                n_params_ += widths[l] * widths[l - 1];
                sign_.resize(n_params_, hidden_sign);
            }
            if (Ly.has_input) {
                Ly.in_off = n_params_;
                for (std::size_t i = 0; i < widths[l]; ++i)
                    for (std::size_t c = 0; c < net.inputs.size(); ++c)
                        sign_.push_back(l == 0 ? input_sign[c] : WeightSign::Free);
                n_params_ = sign_.size();
            }
            Ly.b_off = n_params_;
            n_params_ += widths[l];
            sign_.resize(n_params_, WeightSign::Free);
            net.units += widths[l];
            net.layers.push_back(Ly);
        }
        return net;
    }

    void build_structure() {
        const std::size_t nx = layout_.state_dim, nz = layout_.noise_dim;
        if (layout_.hidden.size() > 3) fail(ErrorKind::InvalidArchitecture, "at most 3 hidden layers are supported");
        const std::size_t iy = 1 + nx;
        std::vector<std::size_t> all, txz;
        for (std::size_t i = 0; i < 2 + nx + nz; ++i) all.push_back(i);
        for (std::size_t i = 0; i < 2 + nx + nz; ++i)
            if (i != iy) txz.push_back(i);
        const bool convex_act_default = kind_ == ArchitectureKind::IcnnYZ;
        const Activation act = layout_.activation.value_or(convex_act_default ? Activation::Softplus : Activation::Tanh);
        const Activation aux_act = layout_.aux_activation.value_or(Activation::Tanh);
        auto free_signs = [](std::size_t n) { return std::vector<WeightSign>(n, WeightSign::Free); };
        switch (kind_) {
            case ArchitectureKind::Free:
                subnets_.push_back(make_subnet(all, layout_.hidden, act, false, WeightSign::Free, free_signs(all.size()), 0));
                break;
            case ArchitectureKind::MonotoneY: {
                if (act == Activation::Relu || act == Activation::Identity)
                    fail(ErrorKind::InvalidArchitecture, "monotone-y needs a continuously differentiable non-linear activation");
                auto s = free_signs(all.size());
                s[iy] = WeightSign::NonPositive;
                subnets_.push_back(make_subnet(all, layout_.hidden, act, false, WeightSign::NonNegative, s, 0));
                break;
            }
            case ArchitectureKind::IcnnYZ:
                if (act != Activation::Softplus && act != Activation::Relu)
                    fail(ErrorKind::InvalidArchitecture, "icnn-yz needs a convex non-decreasing activation (softplus or relu)");
                subnets_.push_back(make_subnet(all, layout_.hidden, act, true, WeightSign::NonNegative, free_signs(all.size()), 0));
                break;
            case ArchitectureKind::Separable: {
                if (!layout_.aux_hidden) fail(ErrorKind::InvalidArchitecture, "separable needs the y-only sub-network N2 (aux_hidden)");
                subnets_.push_back(make_subnet(txz, layout_.hidden, act, false, WeightSign::Free, free_signs(txz.size()), 0));
                if (layout_.aux_monotone) {
                    if (aux_act == Activation::Relu || aux_act == Activation::Identity)
                        fail(ErrorKind::InvalidArchitecture, "monotone N2 needs a smooth non-linear activation");
                    subnets_.push_back(make_subnet({iy}, *layout_.aux_hidden, aux_act, false, WeightSign::NonNegative,
                                                   {WeightSign::NonPositive}, 0));
                } else {
                    subnets_.push_back(make_subnet({iy}, *layout_.aux_hidden, aux_act, false, WeightSign::Free,
                                                   {WeightSign::Free}, 0));
                }
                break;
            }
            case ArchitectureKind::BoundedInteraction: {
                if (!layout_.aux_hidden)
                    fail(ErrorKind::InvalidArchitecture, "bounded-interaction needs aux_hidden for N2 and N3");
                if (!(layout_.bound > 0) || !std::isfinite(layout_.bound))
                    fail(ErrorKind::InvalidArchitecture, "bounded-interaction needs a positive finite bound M2");
                subnets_.push_back(make_subnet(txz, layout_.hidden, act, false, WeightSign::Free, free_signs(txz.size()), 0));
                subnets_.push_back(make_subnet(txz, *layout_.aux_hidden, aux_act, false, WeightSign::Free,
                                               free_signs(txz.size()), layout_.bound));
                subnets_.push_back(make_subnet({iy}, *layout_.aux_hidden, aux_act, false, WeightSign::Free, {WeightSign::Free}, 0));
                break;
            }
        }
    }

    void refresh_effective() {
        eff_.resize(n_params_);
        deff_.resize(n_params_);
        for (std::size_t i = 0; i < n_params_; ++i) {
            const double r = theta_[i];
            switch (sign_[i]) {
                case WeightSign::Free:
                    eff_[i] = r;
                    deff_[i] = 1.0;
                    break;
                case WeightSign::NonNegative:
                    eff_[i] = softplus(r);
                    deff_[i] = sigmoid(r);
                    break;
                case WeightSign::NonPositive:
                    eff_[i] = -softplus(r);
                    deff_[i] = -sigmoid(r);
                    break;
            }
        }
    }

    ArchitectureKind kind_;
    NetLayout layout_;
    std::vector<SubNet> subnets_;
    std::vector<WeightSign> sign_;
    std::size_t n_params_ = 0;
    std::vector<double> theta_, eff_, deff_;
};

using DriverNetPtr = std::shared_ptr<const DriverNet>;

inline DriverNetPtr build_driver(ArchitectureKind kind, const NetLayout& layout, std::uint64_t init_seed) {
    return DriverNet::build(kind, layout, init_seed);
}

/// Checks the sign constraints directly on the effective weights.
inline bool effective_weights_respect_constraints(const DriverNet& net) {
    const auto& e = net.effective();
    const auto& s = net.signs();
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (!std::isfinite(e[i])) return false;
        if (s[i] == WeightSign::NonNegative && !(e[i] >= 0.0)) return false;
        if (s[i] == WeightSign::NonPositive && !(e[i] <= 0.0)) return false;
    }
    return true;
}

}  // namespace nexp
