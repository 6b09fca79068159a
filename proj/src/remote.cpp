#include "datamark/remote.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace datamark {

using nlohmann::json;

namespace {

constexpr const char* kPosteriorPath = "/v1/posterior";

struct Endpoint {
    std::string host;
    int port = 80;
};

Endpoint parse_endpoint(std::string s) {
    if (s.rfind("http://", 0) == 0) s = s.substr(7);
    if (auto slash = s.find('/'); slash != std::string::npos) s = s.substr(0, slash);
    const auto colon = s.rfind(':');
    if (colon == std::string::npos) {
        throw ValidationError("endpoint '" + s + "' must be host:port");
    }
    Endpoint e;
    e.host = s.substr(0, colon);
    try {
        e.port = std::stoi(s.substr(colon + 1));
    } catch (const std::exception&) {
        throw ValidationError("endpoint '" + s + "' has a non-numeric port");
    }
    return e;
}

std::string request_body(const Image& image) {
    const auto& sh = image.shape();
    json j;
    j["shape"] = {sh.channels, sh.width, sh.height};
    j["pixels"] = std::vector<int>(image.pixels().begin(), image.pixels().end());
    return j.dump();
}

PosteriorVector parse_response(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw MalformedResponseError(std::string("response is not valid JSON: ") + e.what());
    }
    std::vector<double> probs;
    try {
        probs = j.at("posterior").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw MalformedResponseError(std::string("response missing 'posterior': ") + e.what());
    }
    return validate_posterior(probs, 1e-5);
}

}  // namespace

PosteriorVector query_remote(const std::string& endpoint, const Image& image,
                             const RemoteOptions& options) {
    const Endpoint ep = parse_endpoint(endpoint);
    const std::string body = request_body(image);
    const auto timeout = std::chrono::duration<double>(options.timeout_seconds);

    std::string last_error;
    for (int attempt = 0; attempt <= options.retries; ++attempt) {
        httplib::Client client(ep.host, ep.port);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);

        auto res = client.Post(kPosteriorPath, body, "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "server returned status " + std::to_string(res->status);
            continue;
        }
        return parse_response(res->body);
    }
    throw TransportError("query to " + ep.host + ":" + std::to_string(ep.port) +
                         " failed after " + std::to_string(options.retries + 1) +
                         " attempts (" + last_error + ")");
}

struct PosteriorServer::Impl {
    std::shared_ptr<Classifier> classifier;
    httplib::Server server;
    std::thread worker;

    explicit Impl(std::shared_ptr<Classifier> c) : classifier(std::move(c)) {
        server.Post(kPosteriorPath, [this](const httplib::Request& req,
                                           httplib::Response& res) {
            try {
                const json j = json::parse(req.body);
                const auto sh = j.at("shape");
                const Shape shape{sh.at(0).get<int>(), sh.at(1).get<int>(),
                                  sh.at(2).get<int>()};
                const auto pixel_ints = j.at("pixels").get<std::vector<int>>();
                std::vector<std::uint8_t> pixels;
                pixels.reserve(pixel_ints.size());
                for (int v : pixel_ints) {
                    if (v < 0 || v > 255) throw FormatError("pixel value outside [0, 255]");
                    pixels.push_back(static_cast<std::uint8_t>(v));
                }
                const Image image(shape, std::move(pixels));
                const PosteriorVector post = classifier->posterior(image);
                json out;
                out["posterior"] = post.probs;
                res.set_content(out.dump(), "application/json");
            } catch (const std::exception& e) {
                res.status = 400;
                json out;
                out["error"] = e.what();
                res.set_content(out.dump(), "application/json");
            }
        });
    }
};

PosteriorServer::PosteriorServer(std::shared_ptr<Classifier> classifier)
    : impl_(std::make_unique<Impl>(std::move(classifier))) {}

PosteriorServer::~PosteriorServer() {
    stop();
}

int PosteriorServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw TransportError("cannot bind to any port on " + host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        throw TransportError("cannot bind to " + host + ":" + std::to_string(port));
    }
    impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void PosteriorServer::run(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) {
        throw TransportError("cannot listen on " + host + ":" + std::to_string(port));
    }
}

void PosteriorServer::stop() {
    impl_->server.stop();
    if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace datamark
