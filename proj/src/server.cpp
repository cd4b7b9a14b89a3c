#include "rwz/server.hpp"

#include <httplib.h>

#include "rwz/errors.hpp"
#include "rwz/log.hpp"

namespace rwz {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_header("X-API-Version", kApiVersion);
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, status, {{"code", code}, {"message", message}});
}

std::string required_param(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) throw ParameterError(std::string("missing query parameter '") + name + "'");
    return req.get_param_value(name);
}

// Runs a handler and maps library errors to HTTP statuses.
template <typename F>
void guarded(httplib::Response& res, F&& f, int malformed_status) {
    try {
        f();
    } catch (const OutOfRangeError& e) {
        send_error(res, 404, "out_of_range", e.what());
    } catch (const SchemaError& e) {
        send_error(res, malformed_status == 422 ? 422 : 404, "unknown_segment", e.what());
    } catch (const FormatError& e) {
        send_error(res, malformed_status, "malformed", e.what());
    } catch (const ParameterError& e) {
        send_error(res, malformed_status, "invalid_parameter", e.what());
    } catch (const std::exception& e) {
        log(LogLevel::Error, std::string("request failed: ") + e.what());
        send_error(res, 500, "internal", e.what());
    }
}

}  // namespace

struct HttpServer::Impl {
    ScenarioService& service;
    httplib::Server http;
    explicit Impl(ScenarioService& s) : service(s) {}
};

HttpServer::HttpServer(ScenarioService& service) : impl_(std::make_unique<Impl>(service)) {
    auto& http = impl_->http;
    ScenarioService& svc = service;

    http.Get("/health", [&svc](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, svc.health()); }, 400);
    });
    http.Get("/network", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::optional<Timestamp> at;
            if (req.has_param("at")) at = parse_timestamp(req.get_param_value("at"));
            send_json(res, 200, svc.network_snapshot(at));
        }, 400);
    });
    http.Get("/history", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string segment = required_param(req, "segment");
            const Timestamp from = parse_timestamp(required_param(req, "from"));
            const Timestamp to = parse_timestamp(required_param(req, "to"));
            send_json(res, 200, svc.history(segment, from, to));
        }, 400);
    });
    http.Post("/scenario", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::parse_error& e) {
                throw FormatError(std::string("request body is not JSON: ") + e.what());
            }
            const ScenarioRequest sr = parse_scenario_request(body, svc.bundle().network);
            json out = to_json(svc.scenario(sr));
            out["checkpoint_id"] = svc.model()->id;
            send_json(res, 200, out);
        }, 422);
    });
    http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) send_error(res, res.status, "http_" + std::to_string(res.status), "no such route");
    });
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::listen(const std::string& host, int port) { return impl_->http.listen(host, port); }

int HttpServer::bind_any(const std::string& host) { return impl_->http.bind_to_any_port(host); }

bool HttpServer::serve() { return impl_->http.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

void HttpServer::wait_until_ready() const { impl_->http.wait_until_ready(); }

}  // namespace rwz
