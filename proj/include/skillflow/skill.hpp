#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace skillflow {

/// Marks a skill invocation inside a token or expansion; never a primitive symbol.
inline constexpr char kSkillSigil = '@';

struct Skill {
    std::string id;
    std::string expansion;
    int phase_created = 0;
    int negative_share_count = 0;
    std::string provenance;  // "initial", "created:<task>:<t>", "refined:<old>"

    bool operator==(const Skill&) const = default;
};

class SkillLibrary {
public:
    int phase = 0;

    const std::vector<Skill>& skills() const { return skills_; }
    std::size_t size() const { return skills_.size(); }
    bool empty() const { return skills_.empty(); }

    const Skill* find(const std::string& id) const;
    Skill* find_mut(const std::string& id);
    const Skill* find_by_expansion(const std::string& expansion) const;

    /// Adds a skill with a fresh id unless the expansion already exists.
    /// Returns the id of the new or existing skill.
    std::string add(const std::string& expansion, int phase_created, const std::string& provenance);
    /// Inserts a fully specified skill (used for replay and round-trip).
    void insert(Skill s);
    void erase(const std::string& id);

    int next_index() const { return next_index_; }
    void set_next_index(int v) { next_index_ = v; }

    /// FNV-1a over (phase, ids, expansions, counters); stable across runs.
    std::uint64_t hash() const;

    bool operator==(const SkillLibrary& o) const {
        return phase == o.phase && skills_ == o.skills_ && next_index_ == o.next_index_;
    }

private:
    std::vector<Skill> skills_;  // kept sorted by id number
    int next_index_ = 1;
};

/// Skill ids are "s<N>"; ordering by N keeps legal-action order stable.
int skill_index(const std::string& id);

}  // namespace skillflow
