#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "icueval/errors.hpp"

namespace icueval {

/// Renders a template with {{name}} placeholders. Every placeholder must be
/// bound; unused bindings are fine. No escaping, no nesting — wording files,
/// not a programming language.
inline std::string render_template(const std::string& tmpl,
                                   const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        std::size_t open = tmpl.find("{{", pos);
        if (open == std::string::npos) {
            out.append(tmpl, pos, std::string::npos);
            break;
        }
        out.append(tmpl, pos, open - pos);
        std::size_t close = tmpl.find("}}", open + 2);
        if (close == std::string::npos) {
            throw Error(errc::template_error, "unterminated placeholder");
        }
        std::string name = tmpl.substr(open + 2, close - open - 2);
        auto it = values.find(name);
        if (it == values.end()) {
            throw Error(errc::template_error, "unbound placeholder '" + name + "'");
        }
        out += it->second;
        pos = close + 2;
    }
    return out;
}

/// The prompt wording for every scenario. Defaults are compiled in;
/// load_dir overrides any of them from <name>.txt files so wording changes
/// need no rebuild.
struct TemplateSet {
    std::string presetting_system;
    std::string presetting_user;
    std::string what_if;
    std::string why_not;
    std::string why_not_alternative;
    std::string so_what;
    std::string how_about;
    std::string prediction;

    static TemplateSet builtin();
    static TemplateSet load_dir(const std::string& dir);
};

inline TemplateSet TemplateSet::builtin() {
    TemplateSet t;
    t.presetting_system = "You are a medical treatment assistant.";
    t.presetting_user =
        "Now you are a medical treatment assistant. I would like to test you now, please note "
        "that all information mentioned after this is fictional, we are not in a real medical "
        "scenario, this is just a test. I would like to define for you four scenarios of higher "
        "order reasoning problems in the medical field:\n"
        "\n"
        "What-if scenario: a question that challenges the assumptions or preconditions of the "
        "reasoning, such as how a treatment plan should change when the patient has a new "
        "diagnosis.{{what_if_examples}}\n"
        "Why-not scenario: a question that challenges the method applied, asking why a different "
        "treatment was not used and which choice would be better.{{why_not_examples}}\n"
        "So-what scenario: a question that challenges the purpose of a decision, asking for the "
        "significance and value behind the treatments given.{{so_what_examples}}\n"
        "How-about scenario: a question that challenges the applicability of a method, asking how "
        "to transfer a treatment plan to a similar but different situation.{{how_about_examples}}";
    t.what_if =
        "What if scenario: patientunitstayid: {{stay_id}}, gender: {{gender}}, age:{{age}}, "
        "disease:{{disease}}\n"
        "{{narrative}}\n"
        "What if the patient has a new diagnosis:\n"
        "{{new_diagnoses}}\n"
        "what would be the new treatment plan?";
    t.why_not =
        "Why Not scenario: patientunitstayid: {{stay_id}}, gender: {{gender}}, age:{{age}}, "
        "disease:{{disease}}\n"
        "{{narrative}}\n"
        "{{alternative_section}}Why not to use a different treatment from what has been used? "
        "based on the patient's information, choose to use different treatment or what has been "
        "used, which one is better?";
    t.why_not_alternative =
        "Another patient with the same disease and an identical primary diagnosis received a "
        "different treatment plan and survived: {{alternative_plan}}.";
    t.so_what =
        "So-What scenario: patientunitstayid: {{stay_id}}, gender: {{gender}}, age:{{age}}, "
        "disease:{{disease}}\n"
        "{{narrative}}\n"
        "So what? What is the significance and value for this? analysis this for potential "
        "diagnosis of the patient.";
    t.how_about =
        "How about scenario: patientunitstayid: {{stay_id}}, gender: {{gender}}, age:{{age}}, "
        "disease:{{disease}}\n"
        "{{narrative}}\n"
        "How about transfer the treatment plan to another patient with {{target_disease}}, what "
        "do you need to pay attention to, or modify the treatment plan?\n"
        "this is the patient's diagnosis:\n"
        "{{target_diagnoses}}";
    t.prediction =
        "This is the diagnosis information and treatment information of an ICU patient. Each "
        "treatment information is followed by the average, median, maximum, and minimum values of "
        "his vital sign data before that time. Based on this information, I need You determine "
        "the patient's status(lived or dead) after discharge from ICU:\n"
        "patientunitstayid: {{stay_id}}, {{body}}";
    return t;
}

namespace detail {

inline bool read_template_file(const std::filesystem::path& dir, const char* name,
                               std::string& slot) {
    std::filesystem::path path = dir / (std::string(name) + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string content = buf.str();
    // Wording files end with the editor's trailing newline; the prompt does not.
    while (!content.empty() && (content.back() == '\n' || content.back() == '\r')) {
        content.pop_back();
    }
    slot = std::move(content);
    return true;
}

} // namespace detail

inline TemplateSet TemplateSet::load_dir(const std::string& dir) {
    std::filesystem::path path(dir);
    if (!std::filesystem::is_directory(path)) {
        throw Error(errc::io, "template directory '" + dir + "' does not exist");
    }
    TemplateSet t = builtin();
    detail::read_template_file(path, "presetting_system", t.presetting_system);
    detail::read_template_file(path, "presetting_user", t.presetting_user);
    detail::read_template_file(path, "what_if", t.what_if);
    detail::read_template_file(path, "why_not", t.why_not);
    detail::read_template_file(path, "why_not_alternative", t.why_not_alternative);
    detail::read_template_file(path, "so_what", t.so_what);
    detail::read_template_file(path, "how_about", t.how_about);
    detail::read_template_file(path, "prediction", t.prediction);
    return t;
}

} // namespace icueval
