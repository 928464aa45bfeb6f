#include "skillflow/io.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace skillflow {

std::string format_double(double x) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc()) throw std::runtime_error("format_double failed");
    return std::string(buf, p);
}

double parse_double(const std::string& s) {
    double x = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || p != s.data() + s.size()) throw std::invalid_argument("bad number: " + s);
    return x;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

void write_table(std::ostream& out, const char* tag, const LogitTable& t) {
    for (const auto& [ctx, row] : t)
        for (const auto& [tok, v] : row) out << tag << '\t' << ctx << '\t' << tok << '\t' << format_double(v) << '\n';
}

}  // namespace

void write_checkpoint(std::ostream& out, const PolicyParams& p, const SkillLibrary& lib) {
    out << "skillflow-checkpoint\t1\n";
    out << "window\t" << p.window_fwd << '\t' << p.window_bwd << '\n';
    out << "backward_mode\t" << to_string(p.backward_mode) << '\n';
    out << "logz_init\t" << format_double(p.logz_init) << '\n';
    out << "phase\t" << lib.phase << '\t' << lib.next_index() << '\n';
    for (const auto& s : lib.skills())
        out << "skill\t" << s.id << '\t' << s.expansion << '\t' << s.phase_created << '\t' << s.negative_share_count
            << '\t' << s.provenance << '\n';
    for (const auto& [task, lz] : p.log_partition) out << "logz\t" << task << '\t' << format_double(lz) << '\n';
    write_table(out, "fwd", p.forward_logits);
    write_table(out, "bwd", p.backward_logits);
}

void read_checkpoint(std::istream& in, PolicyParams& p, SkillLibrary& lib) {
    p = PolicyParams{};
    p.log_partition.clear();
    lib = SkillLibrary{};
    std::string line;
    int lineno = 0;
    auto need = [&](const std::vector<std::string>& f, std::size_t n) {
        if (f.size() != n) throw std::invalid_argument("checkpoint line " + std::to_string(lineno) + ": bad field count");
    };
    int next_index = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_tabs(line);
        const std::string& tag = f[0];
        if (tag == "skillflow-checkpoint") {
            need(f, 2);
            if (f[1] != "1") throw std::invalid_argument("unsupported checkpoint version");
        } else if (tag == "window") {
            need(f, 3);
            p.window_fwd = std::stoi(f[1]);
            p.window_bwd = std::stoi(f[2]);
        } else if (tag == "backward_mode") {
            need(f, 2);
            p.backward_mode = backward_mode_from_string(f[1]);
        } else if (tag == "logz_init") {
            need(f, 2);
            p.logz_init = parse_double(f[1]);
        } else if (tag == "phase") {
            need(f, 3);
            lib.phase = std::stoi(f[1]);
            next_index = std::stoi(f[2]);
        } else if (tag == "skill") {
            need(f, 6);
            Skill s;
            s.id = f[1];
            s.expansion = f[2];
            s.phase_created = std::stoi(f[3]);
            s.negative_share_count = std::stoi(f[4]);
            s.provenance = f[5];
            lib.insert(s);
        } else if (tag == "logz") {
            need(f, 3);
            p.log_partition[f[1]] = parse_double(f[2]);
        } else if (tag == "fwd" || tag == "bwd") {
            need(f, 4);
            (tag == "fwd" ? p.forward_logits : p.backward_logits)[f[1]][f[2]] = parse_double(f[3]);
        } else {
            throw std::invalid_argument("checkpoint line " + std::to_string(lineno) + ": unknown record " + tag);
        }
    }
    lib.set_next_index(std::max(next_index, lib.next_index()));
}

nlohmann::ordered_json trajectory_record(std::uint64_t step, int slot, const Trajectory& tau, const ResidualRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["slot"] = slot;
    j["task"] = tau.history.task_id;
    j["log_z"] = r.log_z;
    j["reward"] = tau.reward;
    j["smoothed_reward"] = tau.smoothed_reward;
    j["length"] = tau.length;
    j["emitted"] = tau.history.emitted;
    j["delta"] = r.delta;
    auto steps = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < tau.history.steps.size(); ++t) {
        const auto& st = tau.history.steps[t];
        nlohmann::ordered_json s;
        s["t"] = t;
        s["kind"] = to_string(st.action.kind);
        s["payload"] = st.action.payload;
        s["tokens"] = st.action.token_seq;
        s["progress"] = st.obs.progress;
        s["terminal"] = st.obs.terminal;
        s["fwd_lp"] = r.per_step_forward_lp.at(t);
        s["bwd_lp"] = r.per_step_backward_lp.at(t);
        steps.push_back(std::move(s));
    }
    j["steps"] = std::move(steps);
    return j;
}

LoggedTrajectory logged_from_record(const nlohmann::json& rec) {
    LoggedTrajectory out;
    out.task_id = rec.at("task").get<std::string>();
    out.log_z = rec.at("log_z").get<double>();
    out.reward = rec.at("reward").get<double>();
    out.emitted = rec.at("emitted").get<std::string>();
    for (const auto& s : rec.at("steps")) {
        LoggedStep st;
        st.kind = action_kind_from_string(s.at("kind").get<std::string>());
        st.payload = s.at("payload").get<std::string>();
        if (st.kind != ActionKind::Accept)
            for (const auto& t : s.at("tokens")) st.emitted += t.get<std::string>();
        st.fwd_lp = s.at("fwd_lp").get<double>();
        st.bwd_lp = s.at("bwd_lp").get<double>();
        out.steps.push_back(std::move(st));
    }
    return out;
}

nlohmann::ordered_json skill_stats_record(const SkillStats& s) {
    nlohmann::ordered_json j;
    j["skill"] = s.skill_id;
    j["visits"] = s.visit_log_flows.size();
    j["G"] = s.G;
    j["lambda1"] = s.lambda1;
    j["centered_share"] = s.centered_share;
    j["jensen_gap"] = s.jensen_gap;
    j["cumulants"] = s.cumulants;
    return j;
}

nlohmann::ordered_json curation_record(std::uint64_t step, const SkillLibrary& before, const CurationResult& r) {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["phase_before"] = before.phase;
    j["phase_after"] = r.library.phase;
    j["retain"] = r.classes.retain;
    j["refine"] = r.classes.refine;
    j["prune"] = r.classes.prune;
    auto stats = nlohmann::ordered_json::array();
    for (const auto& [id, st] : r.stats) stats.push_back(skill_stats_record(st));
    j["stats"] = std::move(stats);
    j["created"] = r.created;
    j["refined"] = r.refined;
    j["pruned"] = r.pruned;
    auto trig = nlohmann::ordered_json::array();
    for (const auto& [i, t] : r.triggers) trig.push_back({i, t});
    j["triggers"] = std::move(trig);
    auto lib = nlohmann::ordered_json::array();
    for (const auto& s : r.library.skills())
        lib.push_back({{"id", s.id}, {"expansion", s.expansion}, {"phase_created", s.phase_created},
                       {"negative_share_count", s.negative_share_count}, {"provenance", s.provenance}});
    j["library"] = std::move(lib);
    j["library_size_before"] = before.size();
    j["library_size_after"] = r.library.size();
    return j;
}

}  // namespace skillflow
