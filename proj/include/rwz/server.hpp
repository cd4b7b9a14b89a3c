#pragma once

#include <memory>
#include <string>

#include "rwz/scenario.hpp"

namespace rwz {

inline constexpr const char* kApiVersion = "1";

/// HTTP front end of a ScenarioService.
///
///   GET  /network                        snapshot (optional ?at=timestamp)
///   GET  /history?segment=&from=&to=     observed speeds over [from, to)
///   POST /scenario                       ScenarioRequest -> ScenarioResponse
///   GET  /health                         status and checkpoint id
///
/// Every response carries X-API-Version. Errors are {"code", "message"}:
/// 400 bad query, 404 unknown segment or anchor outside the data,
/// 422 malformed scenario, 500 anything else.
class HttpServer {
public:
    explicit HttpServer(ScenarioService& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds and serves until stop(); returns false if binding failed.
    bool listen(const std::string& host, int port);
    /// Binds to a free port and returns it (or -1); call serve() afterwards.
    int bind_any(const std::string& host);
    bool serve();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace rwz
