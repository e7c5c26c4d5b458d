#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "cfx/classifier.hpp"
#include "cfx/dataset.hpp"
#include "cfx/gan.hpp"

namespace cfx::service {

/// Frozen models and the browsable dataset. Any part may be missing; the
/// endpoints that need it then answer 503.
struct ServiceState {
    std::optional<clf::ClassifierModel> classifier;
    std::optional<gan::GanBundle> bundle;
    std::optional<data::DatasetManifest> manifest;

    int resolution() const;
};

/// Loads whatever exists of <classifier_dir>, the latest epoch under
/// <gan_dir> and <dataset_dir>/manifest.csv. Empty paths are skipped. A
/// bundle whose classifier reference does not match is rejected.
ServiceState load_state(const std::filesystem::path& classifier_dir,
                        const std::filesystem::path& gan_dir,
                        const std::filesystem::path& dataset_dir);

struct ServiceOptions {
    std::string host = "127.0.0.1";
    /// 0 binds an ephemeral port.
    int port = 8080;
    std::size_t max_body_bytes = 8u << 20;
    int default_sample_limit = 12;
};

/// HTTP endpoints: GET /health, POST /classify, POST /explain?frames=N,
/// GET /samples?split=&limit=, GET /samples/{id}.
class Server {
public:
    Server(std::shared_ptr<const ServiceState> state, ServiceOptions options);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds the socket and returns the port.
    int bind();
    /// Serves until stop(); bind() must have succeeded.
    void listen();
    /// bind() and listen() on a background thread.
    int start();
    void stop();
    int port() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace cfx::service
