#include "cfx/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <iostream>
#include <thread>

#include "cfx/digest.hpp"
#include "cfx/error.hpp"
#include "cfx/explain.hpp"
#include "cfx/image_io.hpp"

namespace cfx::service {
namespace fs = std::filesystem;
using nlohmann::json;

int ServiceState::resolution() const {
    if (classifier) return classifier->resolution();
    if (bundle) return bundle->config().resolution;
    if (manifest) return manifest->resolution;
    return 0;
}

ServiceState load_state(const fs::path& classifier_dir, const fs::path& gan_dir,
                        const fs::path& dataset_dir) {
    ServiceState s;
    if (!classifier_dir.empty() && fs::exists(classifier_dir / "weights.bin")) {
        s.classifier = clf::ClassifierModel::load(classifier_dir);
    }
    if (!gan_dir.empty() && fs::is_directory(gan_dir)) {
        s.bundle = gan::GanBundle::load(gan::latest_epoch_dir(gan_dir));
        if (s.classifier) s.bundle->verify_classifier(*s.classifier);
    }
    if (!dataset_dir.empty() && fs::exists(dataset_dir / data::kManifestFile)) {
        s.manifest = data::read_manifest(dataset_dir / data::kManifestFile);
    }
    return s;
}

namespace {

constexpr int kMinFrames = 2;
constexpr int kMaxFrames = 33;

json probs_json(const clf::ProbPair& p) { return {{"p_normal", p.p_x}, {"p_opacity", p.p_y}}; }

std::string png_base64(const Image& image) { return base64_encode(io::encode_png(image)); }

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

}  // namespace

struct Server::Impl {
    std::shared_ptr<const ServiceState> state;
    ServiceOptions options;
    httplib::Server http;
    std::optional<explain::Explainer> explainer;
    std::thread thread;
    int port = -1;

    Impl(std::shared_ptr<const ServiceState> s, ServiceOptions o)
        : state(std::move(s)), options(std::move(o)) {
        if (state->classifier && state->bundle) explainer.emplace(*state->bundle, *state->classifier);
        http.set_payload_max_length(options.max_body_bytes);
        routes();
    }

    // Returns false after answering when the body is unusable.
    bool decode(const httplib::Request& req, httplib::Response& res, Image& out) const {
        if (req.body.size() > options.max_body_bytes) {
            send_error(res, 413, "body exceeds " + std::to_string(options.max_body_bytes) + " bytes");
            return false;
        }
        if (req.body.empty()) {
            send_error(res, 400, "empty body; send a PNG image");
            return false;
        }
        try {
            const auto* p = reinterpret_cast<const std::uint8_t*>(req.body.data());
            out = io::decode_image(std::span(p, req.body.size()), state->resolution());
        } catch (const ValidationError& e) {
            send_error(res, 400, e.what());
            return false;
        }
        return true;
    }

    void routes() {
        http.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
            json j{{"status", state->classifier && state->bundle ? "ok" : "degraded"},
                   {"classifier_checksum", nullptr},
                   {"bundle_checksum", nullptr}};
            if (state->classifier) j["classifier_checksum"] = state->classifier->checksum();
            if (state->bundle) j["bundle_checksum"] = state->bundle->checksum();
            send_json(res, 200, j);
        });

        http.Post("/classify", [this](const httplib::Request& req, httplib::Response& res) {
            if (!state->classifier) return send_error(res, 503, "classifier not loaded");
            Image image;
            if (!decode(req, res, image)) return;
            const auto p = state->classifier->predict(image);
            send_json(res, 200,
                      {{"p_normal", p.p_x},
                       {"p_opacity", p.p_y},
                       {"decision", std::string(to_string(p.decision()))}});
        });

        http.Post("/explain", [this](const httplib::Request& req, httplib::Response& res) {
            if (!explainer) return send_error(res, 503, "classifier or gan bundle not loaded");
            int frames = 0;
            if (req.has_param("frames")) {
                const std::string v = req.get_param_value("frames");
                const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), frames);
                if (ec != std::errc() || ptr != v.data() + v.size() || frames < kMinFrames ||
                    frames > kMaxFrames) {
                    return send_error(res, 400,
                                      "frames must be an integer in [" + std::to_string(kMinFrames) +
                                          ", " + std::to_string(kMaxFrames) + "], got '" + v + "'");
                }
            }
            Image image;
            if (!decode(req, res, image)) return;
            // Everything below describes the 8-bit counterfactual the client
            // receives, so re-classifying the returned PNG reproduces it.
            auto r = explainer->explain(image);
            r.counterfactual_pixels = io::quantize(r.counterfactual_pixels);
            r.counterfactual_probs = state->classifier->predict(r.counterfactual_pixels);
            r.counterfactual_decision = r.counterfactual_probs.decision();
            r.flipped = r.original_decision != r.counterfactual_decision;
            r.l1_proximity = mean_abs_diff(r.original_pixels, r.counterfactual_pixels);
            json j{{"original_probs", probs_json(r.original_probs)},
                   {"counterfactual_probs", probs_json(r.counterfactual_probs)},
                   {"decision_pre", std::string(to_string(r.original_decision))},
                   {"decision_post", std::string(to_string(r.counterfactual_decision))},
                   {"flipped", r.flipped},
                   {"l1_proximity", r.l1_proximity},
                   {"generator_used", std::string(explain::to_string(r.generator_used))},
                   {"counterfactual_png", png_base64(r.counterfactual_pixels)}};
            if (frames > 0) {
                json list = json::array();
                const auto seq = explain::interpolate(r.original_pixels, r.counterfactual_pixels, frames);
                for (int i = 0; i < frames; ++i) {
                    list.push_back({{"t", static_cast<double>(i) / (frames - 1)},
                                    {"png", png_base64(seq[i])},
                                    {"probs", probs_json(state->classifier->predict(seq[i]))}});
                }
                j["frames"] = list;
            }
            send_json(res, 200, j);
        });

        http.Get("/samples", [this](const httplib::Request& req, httplib::Response& res) {
            if (!state->manifest) return send_error(res, 503, "no dataset mounted");
            Split split = Split::Test;
            int limit = options.default_sample_limit;
            try {
                if (req.has_param("split")) split = parse_split(req.get_param_value("split"));
                if (req.has_param("limit")) limit = std::stoi(req.get_param_value("limit"));
            } catch (const std::exception& e) {
                return send_error(res, 400, std::string("bad query: ") + e.what());
            }
            if (limit < 0) return send_error(res, 400, "limit must be nonnegative");
            std::vector<const data::ManifestEntry*> rows;
            for (const auto& e : state->manifest->entries) {
                if (e.split == split) rows.push_back(&e);
            }
            std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->id < b->id; });
            json ids = json::array();
            for (std::size_t i = 0; i < rows.size() && static_cast<int>(i) < limit; ++i) {
                ids.push_back({{"id", rows[i]->id}, {"label", std::string(to_string(rows[i]->label))}});
            }
            send_json(res, 200, {{"split", std::string(to_string(split))}, {"count", ids.size()}, {"samples", ids}});
        });

        http.Get(R"(/samples/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            if (!state->manifest) return send_error(res, 503, "no dataset mounted");
            const std::string id = req.matches[1];
            for (const auto& e : state->manifest->entries) {
                if (e.id != id) continue;
                const auto sample = data::load_sample(*state->manifest, e);
                return send_json(res, 200,
                                 {{"id", e.id},
                                  {"label", std::string(to_string(e.label))},
                                  {"split", std::string(to_string(e.split))},
                                  {"png", png_base64(sample.pixels)}});
            }
            send_error(res, 404, "unknown sample id '" + id + "'");
        });

        http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            try {
                std::rethrow_exception(ep);
            } catch (const ValidationError& e) {
                send_error(res, 400, e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            }
        });
        http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty()) {
                const int status = res.status;
                send_error(res, status, status == 413 ? "payload too large" : httplib::status_message(status));
            }
        });
    }
};

Server::Server(std::shared_ptr<const ServiceState> state, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(state), std::move(options))) {}

Server::~Server() { stop(); }

int Server::bind() {
    auto& o = impl_->options;
    if (o.port == 0) {
        impl_->port = impl_->http.bind_to_any_port(o.host);
    } else {
        impl_->port = impl_->http.bind_to_port(o.host, o.port) ? o.port : -1;
    }
    if (impl_->port < 0) {
        throw RuntimeFailure("cannot bind " + o.host + ":" + std::to_string(o.port));
    }
    const auto& s = *impl_->state;
    std::cerr << "serving on " << o.host << ':' << impl_->port << " classifier="
              << (s.classifier ? s.classifier->checksum() : "none")
              << " bundle=" << (s.bundle ? s.bundle->checksum() : "none") << std::endl;
    return impl_->port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

int Server::start() {
    const int p = bind();
    impl_->thread = std::thread([this] { listen(); });
    impl_->http.wait_until_ready();
    return p;
}

void Server::stop() {
    if (!impl_) return;
    impl_->http.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

int Server::port() const { return impl_->port; }

}  // namespace cfx::service
