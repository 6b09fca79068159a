#pragma once

#include <memory>
#include <string>

#include "datamark/core.hpp"
#include "datamark/model.hpp"

namespace datamark {

// Network failure: unreachable host, timeout, non-200 status.
struct TransportError : Error {
    using Error::Error;
};

// Response arrived but is not a valid protocol payload.
struct MalformedResponseError : Error {
    using Error::Error;
};

struct RemoteOptions {
    double timeout_seconds = 5.0;
    int retries = 2;  // extra attempts after the first on transport errors
};

// POST /v1/posterior with {"shape":[C,W,H],"pixels":[...]} against `endpoint`
// ("http://host:port" or "host:port"). Returns the validated posterior.
PosteriorVector query_remote(const std::string& endpoint, const Image& image,
                             const RemoteOptions& options = {});

class RemoteClassifier final : public Classifier {
public:
    RemoteClassifier(std::string endpoint, RemoteOptions options = {})
        : endpoint_(std::move(endpoint)), options_(options) {}
    PosteriorVector posterior(const Image& image) const override {
        return query_remote(endpoint_, image, options_);
    }

private:
    std::string endpoint_;
    RemoteOptions options_;
};

// Loopback HTTP server exposing a classifier over the wire protocol above.
class PosteriorServer {
public:
    explicit PosteriorServer(std::shared_ptr<Classifier> classifier);
    ~PosteriorServer();
    PosteriorServer(const PosteriorServer&) = delete;
    PosteriorServer& operator=(const PosteriorServer&) = delete;

    // Binds and serves on a background thread; port 0 picks a free port.
    // Returns the bound port.
    int start(const std::string& host, int port);
    // Serves on the calling thread until stopped from elsewhere.
    void run(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace datamark
