#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

namespace longctx {

// Line-delimited JSON metric stream. Keys serialize in sorted order, so a
// fixed seed reproduces the file byte for byte.
class MetricWriter {
public:
    explicit MetricWriter(const std::string& path) : os_(path) {
        if (!os_) throw std::runtime_error("MetricWriter: cannot open " + path);
    }

    void write(const nlohmann::json& record) {
        os_ << record.dump() << "\n";
        os_.flush();
    }

private:
    std::ofstream os_;
};

}  // namespace longctx
