#include "hsfno/dataset_io.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

#include "hsfno/binary_io.hpp"

namespace hsfno {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'H', 'S', 'F', 'D'};

const std::vector<double>& s_field_of(const BenchmarkSpec& spec) {
    static const std::vector<double> empty;
    if (const auto* p = std::get_if<EpidemicParams>(&spec.mu)) return p->S_field;
    return empty;
}

json entry_for(const Trajectory& t) {
    const auto& spec = t.spec;
    json mu = json::object();
    const auto names = spec.mu_names();
    const auto vals = spec.mu_vector();
    for (std::size_t i = 0; i < names.size(); ++i) mu[names[i]] = vals[i];
    return json{
        {"family", std::string(to_string(spec.family()))},
        {"mu", mu},
        {"tau", spec.tau},
        {"n_x", spec.s_grid.n_x()},
        {"length", spec.s_grid.length()},
        {"boundary", std::string(to_string(spec.s_grid.boundary()))},
        {"solver_dt", spec.solver_dt},
        {"save_dt", spec.save_dt},
        {"history_slices", t.initial_history.h_grid().m_slices()},
        {"channels", spec.channels()},
        {"n_saves", t.n_saves()},
        {"s_field_len", s_field_of(spec).size()},
        {"seed", t.seed},
        {"regime", t.regime},
        {"valid", t.valid},
        {"reason", t.reason},
    };
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const std::vector<Trajectory>& trajectories) {
    std::vector<std::vector<std::uint8_t>> payloads;
    json entries = json::array();
    std::uint64_t offset = 0;
    for (const auto& t : trajectories) {
        ByteWriter w;
        w.f64s(t.initial_history.values());
        w.f64s(t.saved);
        w.f64s(t.times);
        w.f64s(s_field_of(t.spec));
        json e = entry_for(t);
        e["offset"] = offset;
        e["payload_bytes"] = w.size();
        offset += w.size() + 4;
        entries.push_back(std::move(e));
        payloads.push_back(w.take());
    }

    const json header{{"format", "HSFD"}, {"count", trajectories.size()}, {"trajectories", entries}};
    const std::string text = header.dump();

    ByteWriter out;
    out.text(std::string_view(kMagic, 4));
    out.u16(kDatasetVersion);
    out.u64(text.size());
    out.text(text);
    for (const auto& p : payloads) {
        out.bytes(p);
        out.u32(crc32_of(p));
    }
    return out.take();
}

std::vector<Trajectory> decode_dataset(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.remaining() < 4) throw std::runtime_error("bad magic");
    const auto magic = r.bytes(4);
    for (int i = 0; i < 4; ++i)
        if (magic[static_cast<std::size_t>(i)] != static_cast<std::uint8_t>(kMagic[i]))
            throw std::runtime_error("bad magic");
    if (r.u16() != kDatasetVersion) throw std::runtime_error("version mismatch");
    const std::uint64_t hlen = r.u64();
    if (hlen > r.remaining()) throw std::runtime_error("truncated payload");
    const auto htext = r.bytes(static_cast<std::size_t>(hlen));
    json header;
    try {
        header = json::parse(htext.begin(), htext.end());
    } catch (const json::exception&) {
        throw std::runtime_error("corrupt header");
    }
    const std::size_t base = r.position();

    std::vector<Trajectory> out;
    for (const auto& e : header.at("trajectories")) {
        const Family fam = family_from_string(e.at("family").get<std::string>());
        const SpatialGrid sg(e.at("n_x").get<std::size_t>(), e.at("length").get<double>(),
                             boundary_from_string(e.at("boundary").get<std::string>()));
        const std::size_t C = e.at("channels").get<std::size_t>();
        const std::size_t M = e.at("history_slices").get<std::size_t>();
        const std::size_t n_saves = e.at("n_saves").get<std::size_t>();
        const std::size_t s_len = e.at("s_field_len").get<std::size_t>();
        const std::uint64_t off = e.at("offset").get<std::uint64_t>();
        const std::uint64_t len = e.at("payload_bytes").get<std::uint64_t>();

        const std::size_t slice = C * sg.n_x();
        const std::uint64_t need = 8ull * ((M + 1) * slice + n_saves * slice + n_saves + s_len);
        if (need != len) throw std::runtime_error("truncated payload");
        if (off > bytes.size() - base || len + 4 > bytes.size() - base - off)
            throw std::runtime_error("truncated payload");

        r.seek(base + static_cast<std::size_t>(off));
        const auto raw = r.bytes(static_cast<std::size_t>(len));
        const std::uint32_t stored = r.u32();
        if (crc32_of(raw) != stored) throw std::runtime_error("checksum failure");

        ByteReader pr(raw);
        auto init = pr.f64s((M + 1) * slice);
        auto saved = pr.f64s(n_saves * slice);
        auto times = pr.f64s(n_saves);
        auto s_field = pr.f64s(s_len);

        std::vector<double> mu;
        for (const auto& name : mu_names_for(fam)) mu.push_back(e.at("mu").at(name).get<double>());

        BenchmarkSpec spec;
        spec.mu = make_params(fam, mu, std::move(s_field));
        spec.tau = e.at("tau").get<double>();
        spec.s_grid = sg;
        spec.solver_dt = e.at("solver_dt").get<double>();
        spec.save_dt = e.at("save_dt").get<double>();
        HistoryState phi(HistoryGrid(spec.tau, M), sg, C, 0.0, std::move(init));
        out.push_back(Trajectory{std::move(spec), std::move(phi), std::move(saved), std::move(times),
                                 e.at("valid").get<bool>(), e.at("reason").get<std::string>(),
                                 e.at("seed").get<std::uint64_t>(), e.at("regime").get<std::string>()});
    }
    return out;
}

void write_dataset(const std::string& path, const std::vector<Trajectory>& trajectories) {
    write_file(path, encode_dataset(trajectories));
}

std::vector<Trajectory> read_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace hsfno
