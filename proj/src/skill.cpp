#include "skillflow/skill.hpp"

#include <algorithm>
#include <stdexcept>

namespace skillflow {

int skill_index(const std::string& id) {
    if (id.size() < 2 || id[0] != 's') throw std::invalid_argument("bad skill id: " + id);
    return std::stoi(id.substr(1));
}

const Skill* SkillLibrary::find(const std::string& id) const {
    for (const auto& s : skills_)
        if (s.id == id) return &s;
    return nullptr;
}

Skill* SkillLibrary::find_mut(const std::string& id) {
    for (auto& s : skills_)
        if (s.id == id) return &s;
    return nullptr;
}

const Skill* SkillLibrary::find_by_expansion(const std::string& expansion) const {
    for (const auto& s : skills_)
        if (s.expansion == expansion) return &s;
    return nullptr;
}

std::string SkillLibrary::add(const std::string& expansion, int phase_created, const std::string& provenance) {
    if (const Skill* s = find_by_expansion(expansion)) return s->id;
    Skill s;
    s.id = "s" + std::to_string(next_index_++);
    s.expansion = expansion;
    s.phase_created = phase_created;
    s.provenance = provenance;
    skills_.push_back(s);
    return s.id;
}

void SkillLibrary::insert(Skill s) {
    if (find(s.id)) throw std::invalid_argument("duplicate skill id: " + s.id);
    next_index_ = std::max(next_index_, skill_index(s.id) + 1);
    skills_.push_back(std::move(s));
    std::sort(skills_.begin(), skills_.end(),
              [](const Skill& a, const Skill& b) { return skill_index(a.id) < skill_index(b.id); });
}

void SkillLibrary::erase(const std::string& id) {
    std::erase_if(skills_, [&](const Skill& s) { return s.id == id; });
}

std::uint64_t SkillLibrary::hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const std::string& x) {
        for (unsigned char c : x) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= 0xff;
        h *= 1099511628211ull;
    };
    mix(std::to_string(phase));
    for (const auto& s : skills_) {
        mix(s.id);
        mix(s.expansion);
        mix(std::to_string(s.negative_share_count));
    }
    return h;
}

}  // namespace skillflow
